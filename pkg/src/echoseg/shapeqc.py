"""Shape descriptors, per-chamber plausibility gates, spatial chamber
assignment and clinical-prior mask surgery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .labels import Chamber
from .weaklabel import DegenerateSegment, dilate, erode, fill_holes


class FrameUnusable(RuntimeError):
    pass


class MissingReference(ValueError):
    pass


class DegenerateLumen(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    chamber: Chamber | None
    area: float  # cm^2
    eccentricity: float
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]  # top, left, height, width
    mask: np.ndarray = field(repr=False, compare=False)

    def with_chamber(self, chamber: Chamber | None) -> Segment:
        return replace(self, chamber=chamber)


def describe(mask: np.ndarray, spacing: float, chamber: Chamber | None = None) -> Segment:
    """Area (cm^2), moment eccentricity, centroid and bounding box of one component."""
    pts = np.argwhere(mask)
    if len(pts) == 0:
        raise DegenerateSegment("empty component")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d / len(pts)
    lo, hi = np.linalg.eigvalsh(cov)
    ecc = math.sqrt(max(0.0, 1 - lo / hi)) if hi > 0 else 0.0
    top, left = pts.min(axis=0)
    bottom, right = pts.max(axis=0)
    area = len(pts) * (spacing / 10.0) ** 2
    return Segment(chamber, float(area), ecc, (float(centroid[0]), float(centroid[1])),
                   (int(top), int(left), int(bottom - top + 1), int(right - left + 1)), mask)


Range = tuple[float, float]


@dataclass
class QcConfig:
    """Accepted (area cm^2, eccentricity) ranges per view and chamber."""

    gates: dict[str, dict[Chamber, tuple[Range, Range]]] = field(default_factory=lambda: {
        "A2C": {
            Chamber.LA: ((6.0, 75.0), (0.16, 0.94)),
            Chamber.LV: ((4.7, 104.0), (0.35, 0.97)),
        },
        "A4C": {
            Chamber.LA: ((6.0, 75.0), (0.30, 0.96)),
            Chamber.RA: ((6.0, 75.0), (0.17, 0.95)),
            Chamber.LV: ((4.7, 104.0), (0.62, 0.96)),
            Chamber.RV: ((4.7, 104.0), (0.65, 0.96)),
        },
        # no published short-axis gates; a permissive lumen-size check
        "SAX": {
            Chamber.LV: ((1.0, 104.0), (0.0, 0.9)),
        },
    })

    def __post_init__(self):
        for view, per in self.gates.items():
            for ch, (area, ecc) in per.items():
                if not (area[0] < area[1] and ecc[0] < ecc[1]):
                    raise ValueError(f"{view}/{ch.name}: every range needs min < max")

    @classmethod
    def from_dict(cls, d: dict) -> QcConfig:
        cfg = cls()
        for view, per in d.items():
            gates = cfg.gates.setdefault(view.upper(), {})
            for name, spec in per.items():
                gates[Chamber.from_name(name)] = (tuple(spec["area"]), tuple(spec["eccentricity"]))
        cfg.__post_init__()
        return cfg

    def to_dict(self) -> dict:
        return {view: {ch.name: {"area": list(a), "eccentricity": list(e)} for ch, (a, e) in per.items()}
                for view, per in self.gates.items()}


def qc_filter(segments: list[Segment], cfg: QcConfig, view: str) -> tuple[list[Segment], list[tuple[Segment, str]]]:
    accepted, rejected = [], []
    gates = cfg.gates.get(view.upper(), {})
    for seg in segments:
        if seg.chamber not in gates:
            rejected.append((seg, f"no gate for {seg.chamber.name if seg.chamber else 'unassigned'} in {view}"))
            continue
        (amin, amax), (emin, emax) = gates[seg.chamber]
        if seg.area < amin:
            rejected.append((seg, f"area below {amin:g}"))
        elif seg.area > amax:
            rejected.append((seg, f"area above {amax:g}"))
        elif seg.eccentricity < emin:
            rejected.append((seg, f"eccentricity below {emin:g}"))
        elif seg.eccentricity > emax:
            rejected.append((seg, f"eccentricity above {emax:g}"))
        else:
            accepted.append(seg)
    return accepted, rejected


EXPECTED_COUNT = {"A2C": 2, "A4C": 4, "SAX": 1}


def assign_chambers(segments: list[Segment], view: str, mirrored: bool = False) -> list[Segment]:
    """Name segments from their centroids, assuming an apex-up image.

    A2C: the segment nearer the apex (smaller row) is the LV. A4C: the two
    apex-near segments are ventricles and the two far ones atria; within each
    pair the screen-right one is the left heart unless ``mirrored``. SAX: the
    single segment is the LV lumen.
    """
    view = view.upper()
    n = EXPECTED_COUNT[view]
    if len(segments) != n:
        raise FrameUnusable(f"frame unusable for {view}: {len(segments)} segments, expected {n}")
    if view == "SAX":
        return [segments[0].with_chamber(Chamber.LV)]
    by_row = sorted(segments, key=lambda s: (s.centroid[0], s.centroid[1]))
    if view == "A2C":
        return [by_row[0].with_chamber(Chamber.LV), by_row[1].with_chamber(Chamber.LA)]
    out = []
    for pair, (left_heart, right_heart) in ((by_row[:2], (Chamber.LV, Chamber.RV)),
                                           (by_row[2:], (Chamber.LA, Chamber.RA))):
        lo, hi = sorted(pair, key=lambda s: s.centroid[1])
        if mirrored:
            lo, hi = hi, lo
        out += [hi.with_chamber(left_heart), lo.with_chamber(right_heart)]
    return out


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        return 0, 0, 0, 0
    return rows[0], cols[0], rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1


def stretch_vertical(mask: np.ndarray, new_height: int, anchor: str) -> np.ndarray:
    """Nearest-neighbour vertical rescale of the mask about its top or bottom row.

    Columns are untouched. Rows beyond the frame are dropped; holes are re-filled.
    """
    top, _, h, _ = _bbox(mask)
    if h == 0:
        raise DegenerateSegment("degenerate segment")
    bottom = top + h - 1
    out = np.zeros_like(mask)
    factor = h / new_height
    if anchor == "top":
        dst = np.arange(top, top + new_height)
        src = top + np.floor((dst - top + 0.5) * factor).astype(int)
    else:
        dst = np.arange(bottom - new_height + 1, bottom + 1)
        src = bottom - np.floor((bottom - dst + 0.5) * factor).astype(int)
    src = np.clip(src, top, bottom)
    ok = (dst >= 0) & (dst < mask.shape[0])
    out[dst[ok]] = mask[src[ok]]
    return fill_holes(out)


def stretch_lv(lv: np.ndarray, ratio: float = 2.0) -> np.ndarray:
    """Stretch a squat LV to a height/width ratio of ``ratio``, keeping its apical row fixed."""
    _, _, h, w = _bbox(lv)
    if h == 0 or w == 0:
        raise DegenerateSegment("degenerate segment")
    if h / w >= ratio:
        return lv.copy()
    alpha = ratio * w / h
    return stretch_vertical(lv, int(round(h * alpha)), anchor="top")


def stretch_rv(rv: np.ndarray, lv: np.ndarray, beta_gate: float = 0.8) -> np.ndarray:
    """Stretch a short RV toward the apex until its bbox height matches the LV's.

    Applies only when RV height / LV height is below ``beta_gate``; the basal
    (atrium-side, bottom) row stays fixed.
    """
    if not lv.any():
        raise MissingReference("missing reference chamber")
    if not rv.any():
        raise DegenerateSegment("degenerate segment")
    _, _, h_rv, _ = _bbox(rv)
    _, _, h_lv, _ = _bbox(lv)
    if h_rv / h_lv >= beta_gate:
        return rv.copy()
    return stretch_vertical(rv, h_lv, anchor="bottom")


def myocardial_rind(lumen: np.ndarray, rng: np.random.Generator,
                    dilate_range: tuple[int, int] = (6, 14), erode_range: tuple[int, int] = (3, 6)) -> np.ndarray:
    """Lumen plus a myocardial band of random thickness, as a label map.

    Thickness draws are inclusive integer ranges from ``rng``.
    """
    if not lumen.any():
        raise DegenerateLumen("degenerate lumen")
    d = int(rng.integers(dilate_range[0], dilate_range[1] + 1))
    e = int(rng.integers(erode_range[0], erode_range[1] + 1))
    inner = erode(lumen, e)
    if not inner.any():
        raise DegenerateLumen("degenerate lumen")
    outer = dilate(lumen, d)
    out = np.zeros(lumen.shape, dtype=np.uint8)
    out[outer & ~inner] = Chamber.MYO
    out[inner] = Chamber.LV
    return out
