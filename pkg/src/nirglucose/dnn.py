"""Feedforward sigmoid network trained with Levenberg-Marquardt.

Hidden layers use the logistic sigmoid, the output is linear.  Inputs and
the target are standardized during training; predictions are returned in
mg/dl.  The Jacobian of the residual vector is computed by reverse
accumulation per sample, and LM solves the damped normal system
(J'J + lambda*I) delta = -J'r on the flattened parameter vector.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import ChannelSet, Dataset


class DnnError(Exception):
    pass


@dataclass(frozen=True)
class LmConfig:
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e10
    max_iters: int = 200
    grad_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.lambda_init <= 0 or self.lambda_up <= 1 or self.lambda_down <= 1:
            raise DnnError("require lambda_init > 0 and schedule factors > 1")


@dataclass(frozen=True)
class DnnModel:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]   # weights[l] has shape (out, in)
    biases: tuple[np.ndarray, ...]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    seed: int = 0
    channels: ChannelSet = ChannelSet.RM4
    diverged: bool = False
    training_metrics: dict | None = None
    created_utc: int = 0

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_dict(self) -> dict:
        return {
            "kind": "dnn",
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "standardization": {
                "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": float(self.y_mean), "y_std": float(self.y_std),
            },
            "seed": self.seed,
            "channels": self.channels.name.lower(),
            "diverged": self.diverged,
            "created_utc": self.created_utc,
            "training_metrics": self.training_metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DnnModel":
        sizes = tuple(int(s) for s in d["layer_sizes"])
        return cls(
            layer_sizes=sizes,
            weights=tuple(np.array(w, dtype=float) for w in d["weights"]),
            biases=tuple(np.array(b, dtype=float) for b in d["biases"]),
            x_mean=np.array(d["standardization"]["x_mean"], dtype=float),
            x_std=np.array(d["standardization"]["x_std"], dtype=float),
            y_mean=float(d["standardization"]["y_mean"]),
            y_std=float(d["standardization"]["y_std"]),
            seed=int(d.get("seed", 0)),
            channels=ChannelSet.from_tag(d.get("channels", "rm4")),
            diverged=bool(d.get("diverged", False)),
            created_utc=int(d.get("created_utc", 0)),
            training_metrics=d.get("training_metrics"),
        )


def init_network(layer_sizes, seed: int = 0,
                 channels: ChannelSet = ChannelSet.RM4) -> DnnModel:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes) or sizes[-1] != 1:
        raise DnnError(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return DnnModel(layer_sizes=sizes, weights=tuple(weights), biases=tuple(biases),
                    x_mean=np.zeros(sizes[0]), x_std=np.ones(sizes[0]),
                    seed=seed, channels=channels)


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.clip(t, -500, 500)))


def _forward_std(model: DnnModel, Z: np.ndarray):
    """Forward pass on standardized inputs; returns output and activations."""
    acts = [Z]
    a = Z
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        pre = a @ W.T + b
        a = pre if l == last else _sigmoid(pre)
        acts.append(a)
    return a[:, 0], acts


def forward(model: DnnModel, x):
    """Estimated glucose in mg/dl for a voltage vector or (n, k) matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != model.layer_sizes[0]:
        raise DnnError(f"expected {model.layer_sizes[0]} inputs, got {X.shape[1]}")
    Z = (X - model.x_mean) / model.x_std
    out, _ = _forward_std(model, Z)
    y = out * model.y_std + model.y_mean
    return float(y[0]) if single else y


def _flatten(model: DnnModel) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                           for w, b in zip(model.weights, model.biases)])


def _unflatten(model: DnnModel, theta: np.ndarray) -> DnnModel:
    weights, biases = [], []
    pos = 0
    for w, b in zip(model.weights, model.biases):
        weights.append(theta[pos:pos + w.size].reshape(w.shape))
        pos += w.size
        biases.append(theta[pos:pos + b.size])
        pos += b.size
    return dataclasses.replace(model, weights=tuple(weights), biases=tuple(biases))


def jacobian(model: DnnModel, Z: np.ndarray, y_std: np.ndarray):
    """Residuals r = y - f(z) (standardized scale) and J = dr/dtheta.

    J has shape (batch, n_params); computed by reverse accumulation, one
    backward sweep per sample batchwise.
    """
    if Z.shape[0] == 0:
        raise DnnError("empty batch")
    out, acts = _forward_std(model, Z)
    r = y_std - out
    n = Z.shape[0]
    last = len(model.weights) - 1

    # delta[l]: d output / d pre-activation of layer l, shape (n, fan_out)
    deltas = [None] * len(model.weights)
    deltas[last] = np.ones((n, 1))
    for l in range(last - 1, -1, -1):
        a = acts[l + 1]                      # sigmoid activations of layer l
        deltas[l] = (deltas[l + 1] @ model.weights[l + 1]) * a * (1 - a)

    blocks = []
    for l in range(len(model.weights)):
        # d out / d W_l[j,i] = delta_l[:,j] * a_{l}[:,i]
        dW = deltas[l][:, :, None] * acts[l][:, None, :]
        blocks.append(dW.reshape(n, -1))
        blocks.append(deltas[l])
    J = -np.concatenate(blocks, axis=1)      # dr/dtheta = -df/dtheta
    return J, r


def train_lm(model: DnnModel, train: Dataset, cfg: LmConfig):
    """Levenberg-Marquardt training; returns (trained model, SSE trace).

    Accepted-step SSE is monotonically non-increasing.  If the damping
    factor overflows lambda_max the best iterate so far is returned with
    diverged=True.
    """
    X = train.voltage_matrix(model.channels)
    y = train.glucose()
    if X.shape[1] != model.layer_sizes[0]:
        raise DnnError("dataset channel count does not match input layer")
    if X.shape[0] <= model.n_params / 5:
        import warnings
        warnings.warn(f"only {X.shape[0]} samples for {model.n_params} parameters")

    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    y_mean, y_std_ = float(y.mean()), float(y.std()) or 1.0
    model = dataclasses.replace(model, x_mean=x_mean, x_std=x_std,
                                y_mean=y_mean, y_std=y_std_,
                                created_utc=max(r.timestamp for r in train.records))
    Z = (X - x_mean) / x_std
    t = (y - y_mean) / y_std_

    theta = _flatten(model)
    current = model
    J, r = jacobian(current, Z, t)
    sse = float(r @ r)
    trace = [sse]
    lam = cfg.lambda_init
    diverged = False

    for _ in range(cfg.max_iters):
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) < cfg.grad_tol:
            break
        H = J.T @ J
        accepted = False
        while lam <= cfg.lambda_max:
            try:
                delta = np.linalg.solve(H + lam * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            trial_theta = theta + delta
            trial = _unflatten(current, trial_theta)
            _, r_trial = jacobian(trial, Z, t)
            sse_trial = float(r_trial @ r_trial)
            if sse_trial < sse:
                theta, current, sse = trial_theta, trial, sse_trial
                trace.append(sse)
                lam = max(lam / cfg.lambda_down, 1e-15)
                J, r = jacobian(current, Z, t)
                accepted = True
                break
            lam *= cfg.lambda_up
        if not accepted:
            diverged = lam > cfg.lambda_max
            break

    current = dataclasses.replace(current, diverged=diverged, seed=cfg.seed)
    est = forward(current, X)
    current = dataclasses.replace(current, training_metrics=metrics.report_dict(y, est))
    return current, trace
