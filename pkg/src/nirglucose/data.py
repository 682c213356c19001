"""Domain types, dataset validation and CSV persistence.

A sample couples the three detector voltages of one reading with the
reference (invasive) glucose value and basic demographics.  Channel 1 is
1300 nm absorption, channel 2 is 940 nm absorption, channel 3 is 940 nm
reflectance.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Per-channel measurement ranges in volts (channel 1, 2, 3).
CHANNEL_RANGES = ((3.2, 4.68), (0.8, 4.7), (0.5, 4.7))
GLUCOSE_RANGE = (70.0, 450.0)
AGE_RANGE = (1, 120)

VOLTAGE_DECIMALS = 6

CSV_HEADER = [
    "sample_id", "age_years", "sex", "cohort", "prandial",
    "v1", "v2", "v3", "ref_glucose", "timestamp",
]


class Sex(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"


class Cohort(str, enum.Enum):
    HEALTHY = "healthy"
    PREDIABETIC = "prediabetic"
    DIABETIC = "diabetic"


class Prandial(str, enum.Enum):
    FASTING = "fasting"
    POSTPRANDIAL = "postprandial"
    RANDOM = "random"


class ChannelSet(enum.Enum):
    """The four studied channel subsets (0-based indices into (v1, v2, v3))."""

    RM1 = (1, 2)   # 940 nm absorption + 940 nm reflectance
    RM2 = (0, 1)   # 1300 nm absorption + 940 nm absorption
    RM3 = (0, 2)   # 1300 nm absorption + 940 nm reflectance
    RM4 = (0, 1, 2)

    @property
    def indices(self) -> tuple[int, ...]:
        return self.value

    @property
    def n_vars(self) -> int:
        return len(self.value)

    @classmethod
    def from_tag(cls, tag: str) -> "ChannelSet":
        try:
            return cls[tag.upper()]
        except KeyError:
            raise ValueError(f"unknown channel set {tag!r}") from None


class DataError(Exception):
    """Raised for invalid records, malformed files or empty datasets."""


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    age_years: int
    sex: Sex
    cohort: Cohort
    prandial: Prandial
    v1: float
    v2: float
    v3: float
    ref_glucose: float
    timestamp: int

    @property
    def voltages(self) -> tuple[float, float, float]:
        return (self.v1, self.v2, self.v3)

    def violations(self) -> list[str]:
        """All invariant violations for this record (empty list if valid)."""
        out = []
        for i, (v, (lo, hi)) in enumerate(zip(self.voltages, CHANNEL_RANGES), start=1):
            if not (lo <= v <= hi):
                out.append(f"channel {i} out of range ({v:.6f} V not in [{lo}, {hi}])")
        lo, hi = GLUCOSE_RANGE
        if not (lo <= self.ref_glucose <= hi):
            out.append(f"ref_glucose out of range ({self.ref_glucose} not in [{lo}, {hi}])")
        if not (AGE_RANGE[0] <= self.age_years <= AGE_RANGE[1]):
            out.append(f"age_years out of range ({self.age_years})")
        return out


@dataclass(frozen=True)
class Dataset:
    records: tuple[SampleRecord, ...]
    provenance: str = "imported"          # "synthetic" or "imported"
    dropped_count: int = 0                # rows discarded by a lenient load

    def __len__(self) -> int:
        return len(self.records)

    def voltage_matrix(self, channels: ChannelSet = ChannelSet.RM4) -> np.ndarray:
        m = np.array([r.voltages for r in self.records], dtype=float)
        return m[:, channels.indices] if len(self.records) else m.reshape(0, channels.n_vars)

    def glucose(self) -> np.ndarray:
        return np.array([r.ref_glucose for r in self.records], dtype=float)

    def subset(self, indices) -> "Dataset":
        return replace(self, records=tuple(self.records[i] for i in indices))


def _parse_row(row: dict, line_no: int) -> SampleRecord:
    try:
        return SampleRecord(
            sample_id=row["sample_id"],
            age_years=int(row["age_years"]),
            sex=Sex(row["sex"]),
            cohort=Cohort(row["cohort"]),
            prandial=Prandial(row["prandial"]),
            v1=float(row["v1"]),
            v2=float(row["v2"]),
            v3=float(row["v3"]),
            ref_glucose=float(row["ref_glucose"]),
            timestamp=int(row["timestamp"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed row at line {line_no}: {exc}") from exc


def load_dataset(path, strict: bool = True) -> Dataset:
    """Load a sample CSV.

    In strict mode any invariant violation or duplicate sample_id aborts
    the load; in lenient mode offending rows are dropped and counted in
    ``Dataset.dropped_count`` (malformed rows still abort).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    records: list[SampleRecord] = []
    seen: set[str] = set()
    dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise DataError(f"unexpected CSV header {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            rec = _parse_row(row, line_no)
            problems = rec.violations()
            if rec.sample_id in seen:
                if strict:
                    raise DataError(f"duplicate sample_id {rec.sample_id!r} at line {line_no}")
                problems.append("duplicate sample_id")
            if problems:
                if strict:
                    raise DataError(f"line {line_no}: " + "; ".join(problems))
                dropped += 1
                continue
            seen.add(rec.sample_id)
            records.append(rec)
    return Dataset(records=tuple(records), provenance="imported", dropped_count=dropped)


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset as CSV (UTF-8, LF line endings, voltages at 6 decimals)."""
    if not ds.records:
        raise DataError("empty dataset")
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in ds.records:
            writer.writerow([
                r.sample_id, r.age_years, r.sex.value, r.cohort.value, r.prandial.value,
                f"{r.v1:.{VOLTAGE_DECIMALS}f}", f"{r.v2:.{VOLTAGE_DECIMALS}f}",
                f"{r.v3:.{VOLTAGE_DECIMALS}f}", f"{r.ref_glucose:g}", r.timestamp,
            ])


@dataclass
class CohortSummary:
    counts: dict = field(default_factory=dict)     # (cohort, sex) -> count
    age_ranges: dict = field(default_factory=dict) # (cohort, sex) -> (min, max) or None
    total: int = 0

    def cohort_totals(self) -> dict:
        out = {c: 0 for c in Cohort}
        for (c, _), n in self.counts.items():
            out[c] += n
        return out

    def sex_totals(self) -> dict:
        out = {s: 0 for s in Sex}
        for (_, s), n in self.counts.items():
            out[s] += n
        return out


def cohort_summary(ds: Dataset) -> CohortSummary:
    """Counts by cohort x sex plus per-cell age ranges; cells sum to |records|."""
    summary = CohortSummary(total=len(ds.records))
    for c in Cohort:
        for s in Sex:
            summary.counts[(c, s)] = 0
            summary.age_ranges[(c, s)] = None
    for r in ds.records:
        key = (r.cohort, r.sex)
        summary.counts[key] += 1
        rng = summary.age_ranges[key]
        if rng is None:
            summary.age_ranges[key] = (r.age_years, r.age_years)
        else:
            summary.age_ranges[key] = (min(rng[0], r.age_years), max(rng[1], r.age_years))
    return summary
