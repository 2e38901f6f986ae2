"""Minimal from-scratch LSTM baseline: windows, training, gradient check.

The shared baseline trains one gated recurrent network on sliding windows
of 7 consecutive (engagement, action) steps, predicting the engagement of
the following week through a sigmoid readout. Everything is plain numpy:
forward pass, backpropagation through time, and a mini-batch trainer with
per-parameter adaptive step sizes. A central-finite-difference gradient
check acts as the correctness oracle for the backward pass.
"""

from __future__ import annotations

import copy
import json
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingDivergenceError, UsageError
from .ibl import Context
from .personalize import Trajectory

WINDOW_LEN = 7
INPUT_SIZE = 2
CHECKPOINT_VERSION = 1

GATES = ("i", "f", "o", "g")
PARAM_KEYS = tuple(
    f"{kind}_{gate}" for gate in GATES for kind in ("W", "U", "b")
) + ("w_out", "b_out")


@dataclass
class Window:
    """Seven (engagement, action) input steps and the following engagement."""

    inputs: np.ndarray  # (WINDOW_LEN, INPUT_SIZE)
    target: float
    beneficiary_id: str = ""


@dataclass
class LstmConfig:
    hidden_size: int = 16
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_fraction: float = 0.1


@dataclass
class LstmModel:
    """Gate parameters plus sigmoid readout; shapes fixed at construction."""

    hidden_size: int
    params: dict[str, np.ndarray]
    seed: int | None = None
    config: LstmConfig | None = None
    history: list[dict] = field(default_factory=list, repr=False, compare=False)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_model(hidden_size: int, seed: int) -> LstmModel:
    """Uniform init scaled by 1/sqrt(hidden); forget-gate bias starts at 1."""
    rng = np.random.default_rng([seed, 0x1A57])
    bound = 1.0 / np.sqrt(hidden_size)
    params: dict[str, np.ndarray] = {}
    for gate in GATES:
        params[f"W_{gate}"] = rng.uniform(-bound, bound, (INPUT_SIZE, hidden_size))
        params[f"U_{gate}"] = rng.uniform(-bound, bound, (hidden_size, hidden_size))
        params[f"b_{gate}"] = np.zeros(hidden_size)
    params["b_f"] = np.ones(hidden_size)
    params["w_out"] = rng.uniform(-bound, bound, hidden_size)
    params["b_out"] = np.zeros(())
    return LstmModel(hidden_size=hidden_size, params=params, seed=seed)


def make_windows(trajectories: list[Trajectory], train_weeks: int) -> list[Window]:
    """Slice each trajectory's training span into 7-step windows.

    Windows never cross beneficiaries; a trajectory with fewer than 8
    usable weeks contributes nothing and triggers a warning.
    """
    if train_weeks < WINDOW_LEN + 1:
        raise ConfigurationError(
            f"train_weeks must be >= {WINDOW_LEN + 1} to form any window"
        )
    windows: list[Window] = []
    for traj in trajectories:
        usable = min(train_weeks, len(traj))
        if usable < WINDOW_LEN + 1:
            warnings.warn(
                f"trajectory {traj.beneficiary_id!r} has only {usable} usable "
                "weeks; no windows produced"
            )
            continue
        for start in range(1, usable - WINDOW_LEN + 1):
            inputs = np.array(
                [
                    (traj.engagement[w - 1], float(traj.intervention[w - 1]))
                    for w in range(start, start + WINDOW_LEN)
                ]
            )
            windows.append(
                Window(
                    inputs=inputs,
                    target=traj.engagement[start + WINDOW_LEN - 1],
                    beneficiary_id=traj.beneficiary_id,
                )
            )
    return windows


def lstm_forward(model: LstmModel, inputs: np.ndarray) -> np.ndarray:
    """Batch forward pass; returns one prediction in (0, 1) per window."""
    outputs, _ = _forward_cached(model, np.asarray(inputs, dtype=float))
    return outputs


def _forward_cached(model: LstmModel, x: np.ndarray):
    if x.ndim == 2:
        x = x[None, :, :]
    if x.shape[1] != WINDOW_LEN or x.shape[2] != INPUT_SIZE:
        raise UsageError(
            f"expected inputs shaped (batch, {WINDOW_LEN}, {INPUT_SIZE}), "
            f"got {x.shape}"
        )
    p = model.params
    batch = x.shape[0]
    h = np.zeros((batch, model.hidden_size))
    c = np.zeros((batch, model.hidden_size))
    steps = []
    for t in range(WINDOW_LEN):
        xt = x[:, t, :]
        gates = {}
        for gate in GATES:
            z = xt @ p[f"W_{gate}"] + h @ p[f"U_{gate}"] + p[f"b_{gate}"]
            gates[gate] = np.tanh(z) if gate == "g" else _sigmoid(z)
        c_new = gates["f"] * c + gates["i"] * gates["g"]
        h_new = gates["o"] * np.tanh(c_new)
        steps.append({"x": xt, "h_prev": h, "c_prev": c, "c": c_new, **gates})
        h, c = h_new, c_new
    y = _sigmoid(h @ p["w_out"] + p["b_out"])
    return y, (steps, h)


def _backward(model: LstmModel, x: np.ndarray, targets: np.ndarray):
    """Mean-squared-error gradients via backprop through time.

    Returns (loss, grads) where grads matches the parameter dict.
    """
    y, (steps, h_last) = _forward_cached(model, x)
    targets = np.asarray(targets, dtype=float)
    batch = y.shape[0]
    loss = float(np.mean((y - targets) ** 2))

    p = model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dy = 2.0 * (y - targets) / batch
    dz_out = dy * y * (1.0 - y)
    grads["w_out"] = h_last.T @ dz_out
    grads["b_out"] = np.asarray(dz_out.sum())
    dh = np.outer(dz_out, p["w_out"])
    dc = np.zeros_like(dh)

    for step in reversed(steps):
        tc = np.tanh(step["c"])
        dc = dc + dh * step["o"] * (1.0 - tc**2)
        dz = {
            "o": dh * tc * step["o"] * (1.0 - step["o"]),
            "f": dc * step["c_prev"] * step["f"] * (1.0 - step["f"]),
            "i": dc * step["g"] * step["i"] * (1.0 - step["i"]),
            "g": dc * step["i"] * (1.0 - step["g"] ** 2),
        }
        dh = np.zeros_like(dh)
        for gate in GATES:
            grads[f"W_{gate}"] += step["x"].T @ dz[gate]
            grads[f"U_{gate}"] += step["h_prev"].T @ dz[gate]
            grads[f"b_{gate}"] += dz[gate].sum(axis=0)
            dh += dz[gate] @ p[f"U_{gate}"].T
        dc = dc * step["f"]
    return loss, grads


def _split_validation(windows: list[Window], val_fraction: float, rng: np.random.Generator):
    """Hold out whole beneficiaries; fall back to window-level for tiny sets."""
    ids = list(dict.fromkeys(w.beneficiary_id for w in windows))
    if len(ids) >= 2:
        order = list(rng.permutation(len(ids)))
        n_val = max(1, round(val_fraction * len(ids)))
        val_ids = {ids[i] for i in order[:n_val]}
        train = [w for w in windows if w.beneficiary_id not in val_ids]
        val = [w for w in windows if w.beneficiary_id in val_ids]
        return train, val
    if len(windows) >= 10:
        order = list(rng.permutation(len(windows)))
        n_val = max(1, round(val_fraction * len(windows)))
        val_idx = set(order[:n_val])
        train = [w for i, w in enumerate(windows) if i not in val_idx]
        val = [w for i, w in enumerate(windows) if i in val_idx]
        return train, val
    return list(windows), []


def _mse(model: LstmModel, x: np.ndarray, targets: np.ndarray) -> float:
    y, _ = _forward_cached(model, x)
    return float(np.mean((y - targets) ** 2))


def lstm_train(windows: list[Window], config: LstmConfig, seed: int) -> LstmModel:
    """Mini-batch training with decaying first/second moment estimates.

    Keeps whichever epoch's parameters score best on the held-out split
    (train MSE when the set is too small to split). Fully seeded: the
    same windows, config, and seed give identical parameters.
    """
    if not windows:
        raise UsageError("cannot train on an empty window list")
    rng = np.random.default_rng([seed, 0x7124])
    model = init_model(config.hidden_size, seed)
    model.config = config

    train_w, val_w = _split_validation(windows, config.val_fraction, rng)
    x_train = np.stack([w.inputs for w in train_w])
    y_train = np.array([w.target for w in train_w])
    if val_w:
        x_val = np.stack([w.inputs for w in val_w])
        y_val = np.array([w.target for w in val_w])

    moments1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    moments2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    best_score = np.inf
    best_params = copy.deepcopy(model.params)

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_w))
        sq_err_sum = 0.0
        for lo in range(0, len(train_w), config.batch_size):
            batch_idx = order[lo : lo + config.batch_size]
            loss, grads = _backward(model, x_train[batch_idx], y_train[batch_idx])
            step += 1
            if not np.isfinite(loss):
                raise TrainingDivergenceError("training loss is not finite", step)
            sq_err_sum += loss * len(batch_idx)
            corr1 = 1.0 - config.beta1**step
            corr2 = 1.0 - config.beta2**step
            for key, grad in grads.items():
                moments1[key] = config.beta1 * moments1[key] + (1 - config.beta1) * grad
                moments2[key] = config.beta2 * moments2[key] + (1 - config.beta2) * grad**2
                update = (moments1[key] / corr1) / (
                    np.sqrt(moments2[key] / corr2) + config.epsilon
                )
                model.params[key] = model.params[key] - config.learning_rate * update
        train_mse = sq_err_sum / len(train_w)
        val_mse = _mse(model, x_val, y_val) if val_w else train_mse
        model.history.append(
            {"epoch": epoch + 1, "train_mse": train_mse, "val_mse": val_mse}
        )
        if val_mse < best_score:
            best_score = val_mse
            best_params = copy.deepcopy(model.params)

    model.params = best_params
    return model


def gradient_check(
    model: LstmModel,
    window: Window,
    n_samples: int = 50,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Samples at least ``n_samples`` parameters (all of them on small
    models). Near-zero pairs fall back to treating anything below 1e-8 in
    magnitude as exact, so dead directions cannot blow up the ratio.
    """
    x = window.inputs[None, :, :]
    target = np.array([window.target])
    _, grads = _backward(model, x, target)

    flat_specs = []
    for key in PARAM_KEYS:
        size = model.params[key].size
        flat_specs.extend((key, i) for i in range(size))
    rng = np.random.default_rng([seed, 0x9CD])
    if len(flat_specs) > n_samples:
        chosen = [flat_specs[i] for i in rng.choice(len(flat_specs), n_samples, replace=False)]
    else:
        chosen = flat_specs

    max_err = 0.0
    for key, idx in chosen:
        param = model.params[key]
        flat = param.reshape(-1)
        original = flat[idx]
        flat[idx] = original + step
        up = _mse(model, x, target)
        flat[idx] = original - step
        down = _mse(model, x, target)
        flat[idx] = original
        numeric = (up - down) / (2.0 * step)
        analytic = grads[key].reshape(-1)[idx]
        denom = max(abs(analytic), abs(numeric))
        if denom < 1e-8:
            continue
        max_err = max(max_err, abs(analytic - numeric) / denom)
    return max_err


def save_checkpoint(model: LstmModel, path) -> None:
    """Versioned JSON checkpoint: shapes, flat parameters, seed, config."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "hidden_size": model.hidden_size,
        "seed": model.seed,
        "config": vars(model.config) if model.config else None,
        "params": {
            key: {
                "shape": list(model.params[key].shape),
                "data": model.params[key].reshape(-1).tolist(),
            }
            for key in PARAM_KEYS
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> LstmModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise UsageError(
            f"unsupported checkpoint version {payload.get('format_version')}"
        )
    params = {
        key: np.array(entry["data"]).reshape(entry["shape"])
        for key, entry in payload["params"].items()
    }
    config = LstmConfig(**payload["config"]) if payload.get("config") else None
    return LstmModel(
        hidden_size=payload["hidden_size"],
        params=params,
        seed=payload.get("seed"),
        config=config,
    )


class LstmForecaster:
    """Rolling-window session over a trained model.

    Primed with a beneficiary's (engagement, action) history; each
    prediction pushes the fed-back context onto the window, deriving the
    previous step's action from the lag (lag 1 means an intervention just
    landed).
    """

    def __init__(self, model: LstmModel, history):
        self.model = model
        self._window: deque = deque(
            ((float(e), float(a)) for e, a in history), maxlen=WINDOW_LEN
        )

    def predict_next(self, ctx: Context) -> float:
        action = 1.0 if ctx.intervention_lag == 1 else 0.0
        window = deque(self._window, maxlen=WINDOW_LEN)
        window.append((ctx.prev_engagement, action))
        if len(window) < WINDOW_LEN:
            raise UsageError(
                f"forecaster needs {WINDOW_LEN} steps of history, "
                f"has {len(window)}"
            )
        self._window = window
        x = np.array(window)
        return float(lstm_forward(self.model, x)[0])

    def fork(self) -> "LstmForecaster":
        clone = LstmForecaster.__new__(LstmForecaster)
        clone.model = self.model
        clone._window = deque(self._window, maxlen=WINDOW_LEN)
        return clone


def trajectory_history_pairs(traj: Trajectory, through_week: int) -> list[tuple[float, float]]:
    """(engagement, action) pairs for weeks 1..through_week, oldest first."""
    return [
        (traj.engagement[w - 1], float(traj.intervention[w - 1]))
        for w in range(1, through_week + 1)
    ]
