"""Calibration models: polynomial least squares, rescaled-sigmoid fit, SVR.

All fits standardize the selected channel voltages (z-score per channel,
parameters frozen into the model) so the monomial design matrix stays well
conditioned; the polynomial class is closed under affine input maps, so
this loses no expressiveness.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import CHANNEL_RANGES, ChannelSet, Dataset
from .features import MonomialBasis, build_basis, expand_matrix


class FitError(Exception):
    pass


class RankDeficiencyError(FitError):
    """Design matrix is numerically rank deficient; refuses to fit."""

    def __init__(self, msg: str, condition: float):
        super().__init__(f"{msg} (condition estimate {condition:.3e})")
        self.condition = condition


def _training_arrays(train: Dataset, channels: ChannelSet):
    X = train.voltage_matrix(channels)
    y = train.glucose()
    if not np.all(np.isfinite(X)):
        raise FitError("non-finite channel voltage in training data")
    return X, y


def _standardize_params(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std <= 0):
        raise FitError("constant channel voltage; cannot standardize")
    return mean, std


def _created_utc(train: Dataset) -> int:
    # Derived from the data rather than the wall clock so that identical
    # inputs produce byte-identical model files.
    return max(r.timestamp for r in train.records)


# --- multivariate polynomial regression ------------------------------------

@dataclass(frozen=True)
class PolynomialModel:
    channels: ChannelSet
    basis: MonomialBasis
    coefficients: np.ndarray          # length |monomials|
    intercept: float
    mean: np.ndarray                  # per-channel standardization
    std: np.ndarray
    created_utc: int = 0
    training_metrics: dict | None = None
    condition: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": "mpr",
            "channels": self.channels.name.lower(),
            "degree": self.basis.degree,
            "monomial_exponents": [list(m) for m in self.basis.monomials],
            "coefficients": self.coefficients.tolist(),
            "intercept": float(self.intercept),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "created_utc": self.created_utc,
            "training_metrics": self.training_metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialModel":
        channels = ChannelSet.from_tag(d["channels"])
        basis = build_basis(channels.n_vars, int(d["degree"]))
        if [list(m) for m in basis.monomials] != d["monomial_exponents"]:
            raise FitError("model file monomial ordering does not match canonical basis")
        return cls(
            channels=channels,
            basis=basis,
            coefficients=np.array(d["coefficients"], dtype=float),
            intercept=float(d["intercept"]),
            mean=np.array(d["standardization"]["mean"], dtype=float),
            std=np.array(d["standardization"]["std"], dtype=float),
            created_utc=int(d.get("created_utc", 0)),
            training_metrics=d.get("training_metrics"),
        )


def fit_mpr(train: Dataset, channels: ChannelSet, degree: int,
            include_intercept: bool = True) -> PolynomialModel:
    """Least-squares polynomial calibration via orthogonal factorization.

    Raises RankDeficiencyError instead of silently regularizing when the
    design matrix is rank deficient.
    """
    basis = build_basis(channels.n_vars, degree, include_intercept=include_intercept)
    X, y = _training_arrays(train, channels)
    n_cols = len(basis.monomials) + (1 if include_intercept else 0)
    if X.shape[0] < len(basis.monomials) + 1:
        raise FitError(f"need at least {len(basis.monomials) + 1} samples, "
                       f"got {X.shape[0]}")
    mean, std = _standardize_params(X)
    design = expand_matrix(basis, (X - mean) / std)
    theta, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if rank < n_cols:
        raise RankDeficiencyError("rank-deficient design matrix", condition)
    if include_intercept:
        intercept, coefs = float(theta[0]), theta[1:]
    else:
        intercept, coefs = 0.0, theta
    model = PolynomialModel(channels=channels, basis=basis, coefficients=coefs,
                            intercept=intercept, mean=mean, std=std,
                            created_utc=_created_utc(train), condition=condition)
    est = predict_mpr(model, X)
    return dataclass_with_metrics(model, y, est)


def dataclass_with_metrics(model, y, est):
    import dataclasses
    return dataclasses.replace(model, training_metrics=metrics.report_dict(y, est))


def _as_matrix(x, n_vars: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != n_vars:
            raise FitError(f"expected {n_vars} channel values, got {x.shape[0]}")
        return x.reshape(1, -1), True
    if x.ndim != 2 or x.shape[1] != n_vars:
        raise FitError(f"expected (n, {n_vars}) input, got shape {x.shape}")
    return x, False


def _warn_out_of_range(X: np.ndarray, channels: ChannelSet) -> None:
    for col, idx in enumerate(channels.indices):
        lo, hi = CHANNEL_RANGES[idx]
        span = hi - lo
        if np.any(X[:, col] < lo - 0.2 * span) or np.any(X[:, col] > hi + 0.2 * span):
            warnings.warn(f"channel {idx + 1} voltage more than 20% outside "
                          f"its measurement range", stacklevel=3)


def predict_mpr(model: PolynomialModel, x):
    """Estimated glucose in mg/dl for one voltage tuple or an (n, k) matrix."""
    X, single = _as_matrix(x, model.channels.n_vars)
    _warn_out_of_range(X, model.channels)
    Z = (X - model.mean) / model.std
    features = expand_matrix(
        MonomialBasis(model.basis.n_vars, model.basis.degree,
                      model.basis.monomials, include_intercept=False), Z)
    out = model.intercept + features @ model.coefficients
    return float(out[0]) if single else out


# --- rescaled-sigmoid ("logistic") fit -------------------------------------

@dataclass(frozen=True)
class LogisticModel:
    channels: ChannelSet
    weights: np.ndarray
    bias: float
    y_min: float
    y_max: float
    mean: np.ndarray
    std: np.ndarray
    converged: bool = True
    created_utc: int = 0
    training_metrics: dict | None = None

    def to_dict(self) -> dict:
        return {
            "kind": "logistic",
            "channels": self.channels.name.lower(),
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "y_min": float(self.y_min),
            "y_max": float(self.y_max),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "converged": self.converged,
            "created_utc": self.created_utc,
            "training_metrics": self.training_metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(
            channels=ChannelSet.from_tag(d["channels"]),
            weights=np.array(d["weights"], dtype=float),
            bias=float(d["bias"]),
            y_min=float(d["y_min"]),
            y_max=float(d["y_max"]),
            mean=np.array(d["standardization"]["mean"], dtype=float),
            std=np.array(d["standardization"]["std"], dtype=float),
            converged=bool(d.get("converged", True)),
            created_utc=int(d.get("created_utc", 0)),
            training_metrics=d.get("training_metrics"),
        )


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.clip(t, -500, 500)))


def predict_logistic(model: LogisticModel, x):
    X, single = _as_matrix(x, model.channels.n_vars)
    Z = (X - model.mean) / model.std
    out = model.y_min + (model.y_max - model.y_min) * _sigmoid(Z @ model.weights + model.bias)
    return float(out[0]) if single else out


def fit_logistic(train: Dataset, channels: ChannelSet, max_iters: int = 200,
                 grad_tol: float = 1e-9) -> LogisticModel:
    """Damped Gauss-Newton fit of y_min + span * sigmoid(w.z + b).

    The output range is the training target range widened by 10% on each
    side.  On non-convergence the best iterate is returned with
    converged=False.
    """
    X, y = _training_arrays(train, channels)
    if X.shape[0] < 10:
        raise FitError(f"need at least 10 samples, got {X.shape[0]}")
    mean, std = _standardize_params(X)
    Z = (X - mean) / std
    spread = y.max() - y.min()
    y_min = y.min() - 0.1 * spread
    y_max = y.max() + 0.1 * spread
    span = y_max - y_min

    theta = np.zeros(Z.shape[1] + 1)
    lam = 1e-3
    converged = False

    def residual(th):
        s = _sigmoid(Z @ th[:-1] + th[-1])
        return y - (y_min + span * s), s

    r, s = residual(theta)
    sse = float(r @ r)
    for _ in range(max_iters):
        # d residual / d theta = -span * s(1-s) * [z, 1]
        w = span * s * (1 - s)
        J = -np.column_stack([Z * w[:, None], w])
        g = J.T @ r
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        H = J.T @ J
        accepted = False
        for _ in range(50):
            try:
                delta = np.linalg.solve(H + lam * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            r_new, s_new = residual(theta + delta)
            sse_new = float(r_new @ r_new)
            if sse_new < sse:
                theta = theta + delta
                r, s, sse = r_new, s_new, sse_new
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
            if lam > 1e10:
                break
        if not accepted:
            break
    model = LogisticModel(channels=channels, weights=theta[:-1], bias=float(theta[-1]),
                          y_min=y_min, y_max=y_max, mean=mean, std=std,
                          converged=converged, created_utc=_created_utc(train))
    return dataclass_with_metrics(model, y, predict_logistic(model, X))


# --- epsilon-insensitive support vector regression -------------------------

@dataclass(frozen=True)
class SvrModel:
    channels: ChannelSet
    support_vectors: np.ndarray       # standardized inputs, (m, k)
    dual_coefs: np.ndarray            # beta = alpha - alpha*, (m,)
    bias: float
    gamma: float
    C: float
    eps_tube: float
    mean: np.ndarray
    std: np.ndarray
    max_kkt_violation: float = 0.0
    created_utc: int = 0
    training_metrics: dict | None = None

    def to_dict(self) -> dict:
        return {
            "kind": "svr",
            "channels": self.channels.name.lower(),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": float(self.bias),
            "gamma": float(self.gamma),
            "C": float(self.C),
            "eps_tube": float(self.eps_tube),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "max_kkt_violation": float(self.max_kkt_violation),
            "created_utc": self.created_utc,
            "training_metrics": self.training_metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        return cls(
            channels=ChannelSet.from_tag(d["channels"]),
            support_vectors=np.array(d["support_vectors"], dtype=float).reshape(
                -1, ChannelSet.from_tag(d["channels"]).n_vars),
            dual_coefs=np.array(d["dual_coefs"], dtype=float),
            bias=float(d["bias"]),
            gamma=float(d["gamma"]),
            C=float(d["C"]),
            eps_tube=float(d["eps_tube"]),
            mean=np.array(d["standardization"]["mean"], dtype=float),
            std=np.array(d["standardization"]["std"], dtype=float),
            max_kkt_violation=float(d.get("max_kkt_violation", 0.0)),
            created_utc=int(d.get("created_utc", 0)),
            training_metrics=d.get("training_metrics"),
        )


def _rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
          - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def predict_svr(model: SvrModel, x):
    X, single = _as_matrix(x, model.channels.n_vars)
    Z = (X - model.mean) / model.std
    K = _rbf_kernel(Z, model.support_vectors, model.gamma)
    out = K @ model.dual_coefs + model.bias
    return float(out[0]) if single else out


def fit_svr(train: Dataset, channels: ChannelSet, C: float = 100.0,
            eps_tube: float = 5.0, gamma: float | None = None,
            kkt_tol: float = 1e-3) -> SvrModel:
    """Solve the epsilon-insensitive dual QP (dense, |train| <= 5000)."""
    from cvxopt import matrix, solvers

    if C <= 0 or eps_tube < 0:
        raise FitError("require C > 0 and eps_tube >= 0")
    X, y = _training_arrays(train, channels)
    n = X.shape[0]
    if n > 5000:
        raise FitError("dense SVR solver limited to 5000 samples")
    if gamma is None:
        gamma = 1.0 / channels.n_vars
    if gamma <= 0:
        raise FitError("require gamma > 0")
    mean, std = _standardize_params(X) if n > 1 else (X.mean(axis=0), np.ones(X.shape[1]))
    Z = (X - mean) / std
    K = _rbf_kernel(Z, Z, gamma)

    # Variables z = [alpha; alpha*]; beta = alpha - alpha*.
    Q = np.block([[K, -K], [-K, K]]) + 1e-9 * np.eye(2 * n)
    p = np.concatenate([eps_tube - y, eps_tube + y])
    G = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.concatenate([np.zeros(2 * n), np.full(2 * n, C)])
    A = np.concatenate([np.ones(n), -np.ones(n)]).reshape(1, -1)

    opts = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9}
    sol = solvers.qp(matrix(Q), matrix(p), matrix(G), matrix(h),
                     matrix(A), matrix(0.0), options=opts)
    z = np.array(sol["x"]).ravel()
    beta = z[:n] - z[n:]
    beta = np.clip(beta, -C, C)

    f_nobias = K @ beta
    free = (np.abs(beta) > 1e-3 * C) & (np.abs(beta) < C * (1 - 1e-3))
    if np.any(free):
        bias = float(np.mean(y[free] - eps_tube * np.sign(beta[free]) - f_nobias[free]))
    else:
        bias = float(np.mean(y - f_nobias))

    f = f_nobias + bias
    # KKT violations, relative to the target spread: zero-coefficient points
    # must sit inside the tube, interior coefficients on the tube edge,
    # bound coefficients on or outside it.
    scale = max(float(y.max() - y.min()), 1.0)
    viol = np.zeros(n)
    zero = np.abs(beta) <= 1e-3 * C
    viol[zero] = np.maximum(0.0, np.abs(y[zero] - f[zero]) - eps_tube)
    viol[free] = np.abs(np.abs(y[free] - f[free]) - eps_tube)
    bound = np.abs(beta) >= C * (1 - 1e-3)
    viol[bound] = np.maximum(0.0, eps_tube - np.abs(y[bound] - f[bound]))
    max_viol = float(viol.max() / scale) if n else 0.0
    if sol["status"] != "optimal" and max_viol > kkt_tol:
        warnings.warn(f"SVR solver stalled (status {sol['status']}, "
                      f"max KKT violation {max_viol:.3e})")

    keep = np.abs(beta) > 1e-8
    model = SvrModel(channels=channels, support_vectors=Z[keep],
                     dual_coefs=beta[keep], bias=bias, gamma=float(gamma),
                     C=float(C), eps_tube=float(eps_tube), mean=mean, std=std,
                     max_kkt_violation=max_viol, created_utc=_created_utc(train))
    return dataclass_with_metrics(model, y, predict_svr(model, X))
