"""Clarke Error Grid zone classification and SVG rendering.

Zones run A (clinically accurate) through E (dangerous).  Rules are applied
in the order A, E, C, D with B as the fallthrough, so boundary ties resolve
to the more favorable zone.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ZONES = ("A", "B", "C", "D", "E")


class CegError(ValueError):
    pass


def classify_zones(ref, pred) -> np.ndarray:
    """Vectorized zone labels for paired (reference, predicted) mg/dl values."""
    ref = np.asarray(ref, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if ref.shape != pred.shape:
        raise CegError("length mismatch")
    if np.any(ref <= 0) or np.any(pred <= 0):
        raise CegError("non-positive glucose value")

    a = ((ref < 70) & (pred < 70)) | (np.abs(pred - ref) <= 0.2 * ref)
    e = ((ref <= 70) & (pred >= 180)) | ((ref >= 180) & (pred <= 70))
    c = ((ref >= 70) & (ref <= 290) & (pred >= ref + 110)) | \
        ((ref >= 130) & (ref <= 180) & (pred <= (7.0 / 5.0) * ref - 182))
    d = ((ref >= 240) & (pred >= 70) & (pred <= 180)) | \
        ((ref <= 175.0 / 3.0) & (pred >= 70) & (pred <= 180)) | \
        ((ref >= 175.0 / 3.0) & (ref <= 70) & (pred >= (6.0 / 5.0) * ref))

    zones = np.full(ref.shape, "B", dtype="U1")
    zones[d] = "D"
    zones[c] = "C"
    zones[e] = "E"
    zones[a] = "A"
    return zones


def classify_zone(ref: float, pred: float) -> str:
    return str(classify_zones(np.array([ref]), np.array([pred]))[0])


@dataclass(frozen=True)
class CegPoint:
    ref: float
    pred: float
    zone: str


@dataclass(frozen=True)
class CegReport:
    points: tuple[CegPoint, ...]
    counts: dict
    percent_ab: float

    def to_dict(self) -> dict:
        return {"n": len(self.points),
                "counts": dict(self.counts),
                "percent_ab": self.percent_ab}


def ceg_report(ref, pred) -> CegReport:
    ref = np.asarray(ref, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if ref.size == 0:
        raise CegError("empty input")
    zones = classify_zones(ref, pred)
    counts = {z: int(np.sum(zones == z)) for z in ZONES}
    pct_ab = 100.0 * (counts["A"] + counts["B"]) / ref.size
    points = tuple(CegPoint(float(r), float(p), str(z))
                   for r, p, z in zip(ref, pred, zones))
    return CegReport(points=points, counts=counts, percent_ab=pct_ab)


def save_zone_csv(report: CegReport, path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref", "pred", "zone"])
        for p in report.points:
            w.writerow([f"{p.ref:g}", f"{p.pred:g}", p.zone])


# --- SVG rendering ---------------------------------------------------------

_SIZE = 800          # px viewport
_MARGIN = 60         # px around the plot area
_AXIS_MAX = 400.0    # mg/dl both axes

# Boundary segments of the zone rules, in (ref, pred) mg/dl coordinates.
_BOUNDARIES = (
    ((0, 0), (400, 400)),                       # identity diagonal
    ((175 / 3, 70), (400 / 1.2, 400)),          # upper 20% line
    ((0, 70), (175 / 3, 70)),
    ((70, 56), (400, 320)),                     # lower 20% line
    ((70, 0), (70, 56)),
    ((0, 180), (70, 180)),
    ((70, 180), (70, 400)),
    ((70, 180), (290, 400)),                    # upper C: pred = ref + 110
    ((130, 0), (180, 70)),                      # lower C: pred = 1.4*ref - 182
    ((180, 0), (180, 70)),                      # lower E
    ((240, 70), (240, 180)),
    ((240, 180), (400, 180)),
    ((240, 70), (400, 70)),
)

_ZONE_LABELS = (
    ("A", 330, 310), ("B", 330, 230), ("B", 200, 330), ("C", 150, 370),
    ("C", 165, 25), ("D", 30, 140), ("D", 350, 130), ("E", 30, 330),
    ("E", 330, 30),
)


def _px(ref: float, pred: float) -> tuple[float, float]:
    span = _SIZE - 2 * _MARGIN
    x = _MARGIN + (min(max(ref, 0.0), _AXIS_MAX) / _AXIS_MAX) * span
    y = _SIZE - _MARGIN - (min(max(pred, 0.0), _AXIS_MAX) / _AXIS_MAX) * span
    return x, y


def ceg_svg(report: CegReport, path) -> None:
    """Write a standalone, byte-deterministic SVG of the grid and points.

    Points beyond the 0-400 axis range are clamped for display only; their
    zone labels come from the unclamped values.
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    x0, y0 = _px(0, 0)
    x1, y1 = _px(_AXIS_MAX, _AXIS_MAX)
    parts.append(f'<rect x="{x0:.1f}" y="{y1:.1f}" width="{x1 - x0:.1f}" '
                 f'height="{y0 - y1:.1f}" fill="none" stroke="black"/>')
    for tick in range(0, 401, 100):
        tx, ty = _px(tick, 0)
        parts.append(f'<text x="{tx:.1f}" y="{y0 + 24:.1f}" font-size="14" '
                     f'text-anchor="middle">{tick}</text>')
        tx, ty = _px(0, tick)
        parts.append(f'<text x="{x0 - 8:.1f}" y="{ty + 5:.1f}" font-size="14" '
                     f'text-anchor="end">{tick}</text>')
    parts.append(f'<text x="{_SIZE / 2:.1f}" y="{_SIZE - 12}" font-size="16" '
                 f'text-anchor="middle">Reference glucose (mg/dl)</text>')
    parts.append(f'<text x="18" y="{_SIZE / 2:.1f}" font-size="16" text-anchor="middle" '
                 f'transform="rotate(-90 18 {_SIZE / 2:.1f})">Predicted glucose (mg/dl)</text>')
    for (r0, p0), (r1, p1) in _BOUNDARIES:
        ax, ay = _px(r0, p0)
        bx, by = _px(r1, p1)
        parts.append(f'<line x1="{ax:.1f}" y1="{ay:.1f}" x2="{bx:.1f}" y2="{by:.1f}" '
                     f'stroke="gray" stroke-width="1"/>')
    for label, r, p in _ZONE_LABELS:
        lx, ly = _px(r, p)
        parts.append(f'<text x="{lx:.1f}" y="{ly:.1f}" font-size="20" '
                     f'fill="dimgray">{label}</text>')
    for pt in report.points:
        cx, cy = _px(pt.ref, pt.pred)
        fill = "forestgreen" if pt.zone in ("A", "B") else "crimson"
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{fill}" '
                     f'fill-opacity="0.7"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8", newline="\n")
