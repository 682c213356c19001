"""Synthetic three-channel acquisition: forward model, noise, averaging, ADC.

The voltage-vs-glucose transfer law here is explicitly synthetic -- it exists
so the rest of the toolkit has a ground-truth oracle.  Every dataset it emits
is tagged provenance="synthetic".

Each channel map is affine-plus-cubic in normalized glucose
u = (g - 260) / 190, so u spans [-1, 1] over the declared 70-450 mg/dl
range.  Coefficients are chosen to keep outputs strictly monotone, inside
the per-channel measurement ranges and below the ADC full scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .data import (CHANNEL_RANGES, GLUCOSE_RANGE, ChannelSet, Cohort, Dataset,
                   Prandial, SampleRecord, Sex)

GLUCOSE_CENTER = 260.0
GLUCOSE_HALF_SPAN = 190.0

# Glucose band per cohort, mg/dl.
COHORT_GLUCOSE = {
    Cohort.HEALTHY: (70.0, 140.0),
    Cohort.PREDIABETIC: (140.0, 200.0),
    Cohort.DIABETIC: (200.0, 450.0),
}

# Age sampling bands per (cohort, sex), matching the calibration demographics.
COHORT_AGES = {
    (Cohort.PREDIABETIC, Sex.MALE): (22, 65),
    (Cohort.PREDIABETIC, Sex.FEMALE): (26, 75),
    (Cohort.DIABETIC, Sex.MALE): (30, 68),
    (Cohort.DIABETIC, Sex.FEMALE): (30, 73),
    (Cohort.HEALTHY, Sex.MALE): (22, 65),
    (Cohort.HEALTHY, Sex.FEMALE): (17, 70),
}

# Default cohort mix: (prediabetic, diabetic, healthy) fractions of the
# 31/30/36 calibration composition.
DEFAULT_COHORT_MIX = {
    Cohort.PREDIABETIC: 31 / 97,
    Cohort.DIABETIC: 30 / 97,
    Cohort.HEALTHY: 36 / 97,
}
MALE_FRACTION = 53 / 97


class AcquisitionError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelCurve:
    """v(u) = offset + slope * u + cubic * u**3 on u in [-1, 1]."""

    offset: float
    slope: float
    cubic: float

    def mean_voltage(self, u):
        return self.offset + self.slope * u + self.cubic * u ** 3

    def ac_rms(self) -> float:
        """RMS of the glucose-driven voltage component for u ~ U[-1, 1]."""
        b, c = self.slope, self.cubic
        return math.sqrt(b * b / 3 + 2 * b * c / 5 + c * c / 7)


# One documented source of truth for the synthetic transfer law.
DEFAULT_CHANNEL_CURVES = (
    ChannelCurve(offset=3.66, slope=0.28, cubic=0.08),    # ch1: 1300 nm absorption
    ChannelCurve(offset=2.40, slope=-1.20, cubic=-0.20),  # ch2: 940 nm absorption
    ChannelCurve(offset=2.30, slope=1.10, cubic=0.55),    # ch3: 940 nm reflectance
)


@dataclass(frozen=True)
class ForwardModel:
    curves: tuple[ChannelCurve, ...] = DEFAULT_CHANNEL_CURVES

    def __post_init__(self):
        for i, (curve, (lo, hi)) in enumerate(zip(self.curves, CHANNEL_RANGES), start=1):
            if curve.slope * curve.cubic < 0:
                raise AcquisitionError(f"channel {i} curve is not monotone")
            ends = sorted([curve.mean_voltage(-1.0), curve.mean_voltage(1.0)])
            if ends[0] < lo or ends[1] > hi:
                raise AcquisitionError(f"channel {i} curve leaves its measurement range")

    def mean_voltages(self, glucose):
        u = (np.asarray(glucose, dtype=float) - GLUCOSE_CENTER) / GLUCOSE_HALF_SPAN
        return np.stack([c.mean_voltage(u) for c in self.curves], axis=-1)


@dataclass(frozen=True)
class AcquisitionConfig:
    adc_bits: int = 16
    full_scale: float = 4.096      # volts
    sample_rate: float = 128.0     # samples / s
    averaging_count: int = 128     # readings averaged per sample
    snr_db: float = 25.2           # per raw pre-averaging sample
    noise_power: float = 0.08      # reported figure, units unstated; kept for reference
    seed: int = 0

    def __post_init__(self):
        if not (8 <= self.adc_bits <= 24):
            raise AcquisitionError(f"adc_bits {self.adc_bits} outside [8, 24]")
        if self.averaging_count < 1:
            raise AcquisitionError("averaging_count must be >= 1")


def quantize_adc(v, cfg: AcquisitionConfig):
    """Clamp to [0, full_scale] and round to the nearest of 2**bits levels."""
    lsb = cfg.full_scale / (2 ** cfg.adc_bits)
    clamped = np.clip(np.asarray(v, dtype=float), 0.0, cfg.full_scale)
    out = np.minimum(np.round(clamped / lsb) * lsb, cfg.full_scale)
    return float(out) if np.isscalar(v) else out


def coherent_average(readings) -> float:
    readings = np.asarray(readings, dtype=float)
    if readings.size == 0:
        raise AcquisitionError("empty reading sequence")
    return float(readings.mean())


def noise_sigma(fm: ForwardModel, cfg: AcquisitionConfig) -> np.ndarray:
    """Per-channel noise std for one raw sample.

    SNR is taken against the glucose-driven (AC) voltage power of each
    channel, so each channel carries the same signal-to-noise ratio
    regardless of its DC offset.  math.inf disables noise.
    """
    if math.isinf(cfg.snr_db):
        return np.zeros(len(fm.curves))
    ac = np.array([c.ac_rms() for c in fm.curves])
    return ac * 10.0 ** (-cfg.snr_db / 20.0)


def simulate_reading(glucose: float, cfg: AcquisitionConfig, fm: ForwardModel,
                     rng: np.random.Generator | None = None) -> tuple[float, float, float]:
    """One (v1, v2, v3) sample: noise on raw readings, coherent averaging,
    then ADC quantization."""
    lo, hi = GLUCOSE_RANGE
    if not (lo <= glucose <= hi):
        raise AcquisitionError(f"glucose {glucose} outside [{lo}, {hi}]")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    clean = fm.mean_voltages(glucose)
    sigma = noise_sigma(fm, cfg)
    out = []
    for c in range(3):
        raw = clean[c] + sigma[c] * rng.standard_normal(cfg.averaging_count)
        out.append(quantize_adc(coherent_average(raw), cfg))
    return tuple(out)


def empirical_snr_db(cfg: AcquisitionConfig, fm: ForwardModel, glucose: float,
                     n_samples: int = 10_000, seed: int = 0) -> float:
    """Monte-Carlo SNR of raw pre-averaging samples at a fixed glucose level."""
    rng = np.random.default_rng(seed)
    sigma = noise_sigma(fm, cfg)
    snrs = []
    for c, curve in enumerate(fm.curves):
        noise = sigma[c] * rng.standard_normal(n_samples)
        snrs.append(10.0 * math.log10(curve.ac_rms() ** 2 / np.var(noise)))
    return float(np.mean(snrs))


def _apportion(n: int, fractions: dict) -> dict:
    """Largest-remainder apportionment of n into the given fractions."""
    keys = list(fractions)
    raw = {k: n * fractions[k] for k in keys}
    counts = {k: int(raw[k]) for k in keys}
    short = n - sum(counts.values())
    for k in sorted(keys, key=lambda k: (counts[k] - raw[k], k.value))[:short]:
        counts[k] += 1
    return counts


def generate_dataset(n: int, cohort_mix: dict | None = None,
                     cfg: AcquisitionConfig | None = None,
                     fm: ForwardModel | None = None,
                     id_prefix: str = "syn") -> Dataset:
    """Synthetic dataset with cohort-banded glucose and sampled demographics."""
    if n < 1:
        raise AcquisitionError("need n >= 1")
    cohort_mix = dict(cohort_mix or DEFAULT_COHORT_MIX)
    if abs(sum(cohort_mix.values()) - 1.0) > 1e-9:
        raise AcquisitionError("cohort mix fractions must sum to 1")
    cfg = cfg or AcquisitionConfig()
    fm = fm or ForwardModel()
    rng = np.random.default_rng(cfg.seed)
    counts = _apportion(n, cohort_mix)
    records = []
    base_ts = 1_700_000_000
    i = 0
    for cohort in (Cohort.HEALTHY, Cohort.PREDIABETIC, Cohort.DIABETIC):
        for _ in range(counts.get(cohort, 0)):
            sex = Sex.MALE if rng.random() < MALE_FRACTION else Sex.FEMALE
            lo_a, hi_a = COHORT_AGES[(cohort, sex)]
            glo, ghi = COHORT_GLUCOSE[cohort]
            glucose = float(rng.uniform(glo, ghi))
            v1, v2, v3 = simulate_reading(glucose, cfg, fm, rng)
            records.append(SampleRecord(
                sample_id=f"{id_prefix}-{i:04d}",
                age_years=int(rng.integers(lo_a, hi_a + 1)),
                sex=sex,
                cohort=cohort,
                prandial=Prandial(rng.choice([p.value for p in Prandial])),
                v1=v1, v2=v2, v3=v3,
                ref_glucose=round(glucose, 3),
                timestamp=base_ts + 300 * i,
            ))
            i += 1
    return Dataset(records=tuple(records), provenance="synthetic")
