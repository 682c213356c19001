"""Calibration/validation orchestration: channel studies, k-fold
cross-validation, stability analysis and model comparison tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, modelio
from .data import ChannelSet, Cohort, Dataset
from .dnn import LmConfig, init_network, train_lm
from .metrics import MetricsReport
from .regression import fit_logistic, fit_mpr, fit_svr


class PipelineError(Exception):
    pass


# --- model specs ------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """What to fit: kind in {mpr3, mpr4, logistic, svr, dnn} + options."""

    kind: str
    channels: ChannelSet = ChannelSet.RM4
    hidden_layers: tuple[int, ...] = (10,)
    seed: int = 0
    svr_c: float = 100.0
    svr_eps: float = 5.0
    svr_gamma: float | None = None
    lm: LmConfig | None = None

    def fit(self, train: Dataset):
        if self.kind == "mpr3":
            return fit_mpr(train, self.channels, degree=3)
        if self.kind == "mpr4":
            return fit_mpr(train, self.channels, degree=4)
        if self.kind == "logistic":
            return fit_logistic(train, self.channels)
        if self.kind == "svr":
            return fit_svr(train, self.channels, C=self.svr_c,
                           eps_tube=self.svr_eps, gamma=self.svr_gamma)
        if self.kind == "dnn":
            sizes = (self.channels.n_vars, *self.hidden_layers, 1)
            net = init_network(sizes, seed=self.seed, channels=self.channels)
            cfg = self.lm or LmConfig(seed=self.seed)
            model, _ = train_lm(net, train, cfg)
            return model
        raise PipelineError(f"unknown model kind {self.kind!r}")


def _score(model, ds: Dataset) -> MetricsReport:
    X = ds.voltage_matrix(modelio.model_channels(model))
    return metrics.full_report(ds.glucose(), modelio.predict(model, X))


# --- k-fold cross-validation ------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: tuple[int, ...]   # record index -> fold id
    seed: int

    def fold_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def complement_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f != fold]


def kfold_split(ds: Dataset, k: int, seed: int, stratify: bool = True) -> FoldPlan:
    """Seeded shuffle then round-robin assignment; fold sizes differ by <= 1.

    With stratify=True records are shuffled within cohort before dealing,
    which approximately preserves cohort proportions per fold.
    """
    n = len(ds)
    if k < 2 or k > n:
        raise PipelineError(f"need 2 <= k <= |ds|, got k={k}, |ds|={n}")
    rng = np.random.default_rng(seed)
    if stratify:
        order: list[int] = []
        for cohort in Cohort:
            idx = [i for i, r in enumerate(ds.records) if r.cohort == cohort]
            rng.shuffle(idx)
            order.extend(idx)
    else:
        order = list(range(n))
        rng.shuffle(order)
    assignments = [0] * n
    for pos, rec_idx in enumerate(order):
        assignments[rec_idx] = pos % k
    return FoldPlan(k=k, assignments=tuple(assignments), seed=seed)


@dataclass(frozen=True)
class CrossvalResult:
    pooled: MetricsReport
    per_fold: tuple[MetricsReport, ...]
    fold_errors: dict
    ref: np.ndarray
    pred: np.ndarray


def crossval(ds: Dataset, spec: ModelSpec, k: int = 10, seed: int = 0,
             stratify: bool = True) -> CrossvalResult:
    """Out-of-fold predictions pooled over all folds, then scored once."""
    plan = kfold_split(ds, k, seed, stratify=stratify)
    ref = ds.glucose()
    pred = np.full(len(ds), np.nan)
    per_fold = []
    errors = {}
    for fold in range(k):
        test_idx = plan.fold_indices(fold)
        try:
            model = spec.fit(ds.subset(plan.complement_indices(fold)))
            X = ds.subset(test_idx).voltage_matrix(spec.channels)
            pred[test_idx] = np.atleast_1d(modelio.predict(model, X))
            if len(test_idx) >= 2:
                per_fold.append(metrics.full_report(ref[test_idx], pred[test_idx]))
        except Exception as exc:  # isolate per-fold failures
            errors[fold] = str(exc)
    if np.any(np.isnan(pred)):
        missing = int(np.sum(np.isnan(pred)))
        raise PipelineError(f"{missing} samples missing out-of-fold predictions; "
                            f"fold errors: {errors}")
    return CrossvalResult(pooled=metrics.full_report(ref, pred),
                          per_fold=tuple(per_fold), fold_errors=errors,
                          ref=ref, pred=pred)


# --- channel-combination study ----------------------------------------------

@dataclass(frozen=True)
class StudyResult:
    rows: dict                      # (kind, channel tag, degree) -> MetricsReport
    errors: dict                    # same key -> failure message
    best: tuple | None              # argmin-mARD key

    def to_dict(self) -> dict:
        return {
            "rows": {f"{k[0]}/{k[1]}/deg{k[2]}": v.to_dict()
                     for k, v in self.rows.items()},
            "errors": {f"{k[0]}/{k[1]}/deg{k[2]}": v for k, v in self.errors.items()},
            "best": f"{self.best[0]}/{self.best[1]}/deg{self.best[2]}" if self.best else None,
        }

    def to_text(self) -> str:
        lines = [MetricsReport.header()]
        for (kind, tag, degree), rep in self.rows.items():
            label = f"{tag.upper()} deg{degree}"
            if self.best == (kind, tag, degree):
                label += " *"
            lines.append(rep.row(label))
        return "\n".join(lines)


def run_channel_study(train: Dataset, val: Dataset,
                      degrees=(3, 4)) -> StudyResult:
    """Fit RM1-RM4 x degree on train, score on val; failures are isolated."""
    rows, errors = {}, {}
    for degree in degrees:
        for cs in (ChannelSet.RM1, ChannelSet.RM2, ChannelSet.RM3, ChannelSet.RM4):
            key = ("mpr", cs.name.lower(), degree)
            try:
                model = fit_mpr(train, cs, degree)
                rows[key] = _score(model, val)
            except Exception as exc:
                errors[key] = str(exc)
    best = min(rows, key=lambda k: rows[k].mard) if rows else None
    return StudyResult(rows=rows, errors=errors, best=best)


# --- stability analysis -----------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    deviations: tuple[float, ...]   # per-iteration |pred - ref|
    mean_deviation: float
    max_deviation: float
    ref_drift: float                # max ref - min ref across the series
    stable: bool
    threshold: float

    def to_dict(self) -> dict:
        return {
            "deviations": list(self.deviations),
            "mean_deviation": self.mean_deviation,
            "max_deviation": self.max_deviation,
            "ref_drift": self.ref_drift,
            "stable": self.stable,
            "threshold": self.threshold,
        }


def stability_report(series, threshold: float = 10.0) -> StabilityReport:
    """Per-iteration deviation summary for repeated same-subject readings.

    series: list of (timestamp, ref mg/dl, pred mg/dl), timestamps strictly
    increasing.
    """
    if len(series) < 2:
        raise PipelineError("need at least 2 series entries")
    ts = [s[0] for s in series]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise PipelineError("timestamps must be strictly increasing")
    refs = np.array([s[1] for s in series], dtype=float)
    preds = np.array([s[2] for s in series], dtype=float)
    dev = np.abs(preds - refs)
    return StabilityReport(
        deviations=tuple(float(d) for d in dev),
        mean_deviation=float(dev.mean()),
        max_deviation=float(dev.max()),
        ref_drift=float(refs.max() - refs.min()),
        stable=bool(dev.max() <= threshold),
        threshold=threshold,
    )


# --- model comparison -------------------------------------------------------

def compare_models(train: Dataset, val: Dataset, channels: ChannelSet = ChannelSet.RM4,
                   seed: int = 0) -> dict:
    """Fit logistic, SVR, DNN and MPR3 on train; score on train and val.

    Returns {kind: {"train": MetricsReport|None, "val": ..., "error": ...}}.
    Per-model failures are isolated.
    """
    out = {}
    for kind in ("logistic", "svr", "dnn", "mpr3"):
        spec = ModelSpec(kind=kind, channels=channels, seed=seed)
        cell = {"train": None, "val": None, "error": None}
        try:
            model = spec.fit(train)
            cell["train"] = _score(model, train)
            cell["val"] = _score(model, val)
        except Exception as exc:
            cell["error"] = str(exc)
        out[kind] = cell
    return out


def comparison_text(results: dict, which: str) -> str:
    lines = [MetricsReport.header()]
    for kind, cell in results.items():
        rep = cell[which]
        lines.append(rep.row(kind) if rep else f"{kind:<16}failed: {cell['error']}")
    return "\n".join(lines)
