"""Clinical quantification from label maps: ED/ES selection, method-of-disks
volumes, ejection fraction, area-length LV mass and BSA indexing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .labels import Chamber


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class ChamberGeometry:
    chamber: Chamber
    area: float  # cm^2
    length: float  # cm, long axis
    diameters: tuple[float, ...]  # cm, perpendicular to the long axis at equal stations

    @property
    def n_disks(self) -> int:
        return len(self.diameters)


@dataclass
class MeasurementSet:
    LVEDV: float | None = None
    LVESV: float | None = None
    LVEF: float | None = None
    LV_mass: float | None = None
    LA_vol: float | None = None
    RA_vol: float | None = None
    RVEDA: float | None = None
    RVESA: float | None = None
    BSA: float | None = None
    flags: list[str] | None = None

    INDEXABLE = ("LVEDV", "LVESV", "LV_mass", "LA_vol", "RA_vol", "RVEDA", "RVESA")

    def indexed(self) -> dict[str, float]:
        if not self.BSA:
            return {}
        return {f"{k}_index": index_by_bsa(v, self.BSA) for k in self.INDEXABLE
                if (v := getattr(self, k)) is not None}

    def values(self) -> dict[str, float]:
        """Non-missing numeric fields plus BSA-indexed variants."""
        out = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name != "flags" and getattr(self, f.name) is not None}
        out.update(self.indexed())
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(self.indexed())
        return d

    @property
    def abnormal_input(self) -> bool:
        return self.LVEF is not None and not 0 <= self.LVEF <= 100


def find_ed_es(areas: dict[str, list[float | None]]) -> tuple[str, int, int, list[str]]:
    """Pick the end-diastolic and end-systolic frames for one chamber.

    ``areas`` maps video id to per-frame chamber area (``None`` where the frame
    has no valid segmentation). ED is the globally largest area over all
    videos, ES the smallest area within the ED video; ties go to the earliest
    frame (and the first video in iteration order). Returns
    ``(video, ed_frame, es_frame, flags)``.
    """
    best = None
    for vid, series in areas.items():
        valid = [(i, a) for i, a in enumerate(series) if a is not None]
        if len(valid) < 2:
            continue
        for i, a in valid:
            if best is None or a > best[2]:
                best = (vid, i, a)
    if best is None:
        raise MeasurementError("no measurable cycle")
    vid, ed, _ = best
    valid = [(i, a) for i, a in enumerate(areas[vid]) if a is not None]
    es = min(valid, key=lambda t: (t[1], t[0]))[0]
    flags = []
    if areas[vid][es] == areas[vid][ed]:
        flags.append("no contraction detected")
    return vid, ed, es, flags


def chamber_geometry(label: np.ndarray, chamber: Chamber, spacing: float, n_disks: int = 20,
                     apex: tuple[float, float] | None = None) -> ChamberGeometry:
    """Long axis and disk diameters of one chamber in a label map.

    The long axis follows the principal axis of the chamber's pixel cloud.
    Its apical end is the extreme boundary point on the side facing ``apex``
    (default: the top of the image); the basal end is the midpoint of the
    boundary pixels at the opposite extreme. Diameters are chord widths
    measured perpendicular to the axis at the centers of ``n_disks`` equal
    slabs. ``spacing`` is in mm per pixel; outputs are in cm.
    """
    mask = label == int(chamber)
    pts = np.argwhere(mask).astype(float)
    if len(pts) == 0:
        raise MeasurementError(f"chamber not segmented: {chamber.name}")
    if n_disks < 1:
        raise MeasurementError("n_disks must be positive")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0 or evals[0] <= 1e-9 * evals[-1] or min(np.ptp(pts, axis=0)) < 1:
        raise MeasurementError(f"degenerate chamber: {chamber.name}")
    axis = evecs[:, -1]
    toward = np.array([-1.0, 0.0]) if apex is None else np.asarray(apex, float) - centroid
    if axis @ toward < 0:
        axis = -axis
    normal = np.array([-axis[1], axis[0]])
    u = centered @ axis
    v = centered @ normal
    # each pixel covers [-0.5, 0.5] around its center
    apex_u = u.max() + 0.5
    far = u <= u.min() + 1.0
    base_u = u[far].mean() - 0.5
    length_px = apex_u - base_u
    step = length_px / n_disks
    diam = []
    for i in range(n_disks):
        mid = base_u + (i + 0.5) * step
        diam.append(_chord(mask, centroid, axis, normal, mid) * spacing / 10.0)
    area = mask.sum() * (spacing / 10.0) ** 2
    return ChamberGeometry(chamber, float(area), float(length_px * spacing / 10.0), tuple(diam))


def _chord(mask: np.ndarray, centroid, axis, normal, u: float, sub: float = 0.25) -> float:
    """Width in pixels of the mask along the line perpendicular to the axis at ``u``."""
    half = float(np.hypot(*mask.shape))
    t = np.arange(-half, half + sub, sub)
    p = centroid + u * axis + t[:, None] * normal
    r = np.rint(p[:, 0]).astype(int)
    c = np.rint(p[:, 1]).astype(int)
    ok = (r >= 0) & (r < mask.shape[0]) & (c >= 0) & (c < mask.shape[1])
    inside = np.zeros(len(t), dtype=bool)
    inside[ok] = mask[r[ok], c[ok]]
    if not inside.any():
        return 0.0
    idx = np.flatnonzero(inside)
    return float((idx[-1] - idx[0]) * sub + sub)


def _check_pair(g2: ChamberGeometry, g4: ChamberGeometry) -> None:
    if g2.n_disks != g4.n_disks:
        raise MeasurementError(f"mismatched disk counts {g2.n_disks} vs {g4.n_disks}")


def biplane_volume(g2: ChamberGeometry, g4: ChamberGeometry) -> float:
    """Biplane method of disks in mL; the longer of the two axes sets disk height."""
    _check_pair(g2, g4)
    length = max(g2.length, g4.length)
    a = np.asarray(g2.diameters)
    b = np.asarray(g4.diameters)
    return float(math.pi / 4 * np.sum(a * b) * length / g2.n_disks)


def single_plane_volume(g: ChamberGeometry) -> float:
    a = np.asarray(g.diameters)
    return float(math.pi / 4 * np.sum(a * a) * g.length / g.n_disks)


def ejection_fraction(edv: float, esv: float) -> float:
    if not edv > 0:
        raise MeasurementError("end-diastolic volume must be positive")
    return 100.0 * (edv - esv) / edv


def lv_mass_area_length(epi_area: float, endo_area: float, a_plus_d: float, t: float | str = "derive") -> float:
    """Area-length LV mass in grams.

    ``epi_area`` and ``endo_area`` are the short-axis epicardial and
    endocardial areas (cm^2), ``a_plus_d`` the long-axis length (cm). When
    ``t == "derive"`` the wall thickness is the difference of the equal-area
    circle radii.
    """
    if not epi_area > endo_area > 0:
        raise MeasurementError("inverted areas")
    if t == "derive":
        t = math.sqrt(epi_area / math.pi) - math.sqrt(endo_area / math.pi)
    return 1.05 * (5 / 6 * epi_area * (a_plus_d + t) - 5 / 6 * endo_area * a_plus_d)


def index_by_bsa(value: float, bsa: float) -> float:
    if not bsa > 0:
        raise MeasurementError("body surface area must be positive")
    return value / bsa


Series = dict[str, list["np.ndarray | None"]]


def _areas(series: Series, chamber: Chamber) -> dict[str, list[float | None]]:
    return {vid: [None if lab is None or not (lab == chamber).any() else float((lab == chamber).sum())
                  for lab in labs] for vid, labs in series.items()}


def _at_max(series: Series, chamber: Chamber, smallest: bool = False):
    """Label map at the chamber's largest area (or the smallest area in that video)."""
    vid, big, small, flags = find_ed_es(_areas(series, chamber))
    return series[vid][small if smallest else big], flags


def measure_study(a2c: Series, a4c: Series, sax: Series | None, spacing: float, n_disks: int = 20,
                  bsa: float | None = None) -> MeasurementSet:
    """All study-level measurements from per-video label sequences of each view.

    Missing views or unmeasurable chambers leave the corresponding fields
    empty and add a flag naming the reason.
    """
    out = MeasurementSet(BSA=bsa, flags=[])

    def attempt(name, fn):
        try:
            fn()
        except MeasurementError as e:
            out.flags.append(f"{name}: {e}")

    def lv():
        ed2, f1 = _at_max(a2c, Chamber.LV)
        es2, _ = _at_max(a2c, Chamber.LV, smallest=True)
        ed4, f2 = _at_max(a4c, Chamber.LV)
        es4, _ = _at_max(a4c, Chamber.LV, smallest=True)
        out.flags.extend(sorted(set(f1 + f2)))
        geo = lambda lab: chamber_geometry(lab, Chamber.LV, spacing, n_disks)  # noqa: E731
        out.LVEDV = biplane_volume(geo(ed2), geo(ed4))
        out.LVESV = biplane_volume(geo(es2), geo(es4))
        out.LVEF = ejection_fraction(out.LVEDV, out.LVESV)

    def la():
        m2, _ = _at_max(a2c, Chamber.LA)
        m4, _ = _at_max(a4c, Chamber.LA)
        out.LA_vol = biplane_volume(chamber_geometry(m2, Chamber.LA, spacing, n_disks),
                                    chamber_geometry(m4, Chamber.LA, spacing, n_disks))

    def ra():
        m4, _ = _at_max(a4c, Chamber.RA)
        out.RA_vol = single_plane_volume(chamber_geometry(m4, Chamber.RA, spacing, n_disks))

    def rv():
        vid, ed, es, _ = find_ed_es(_areas(a4c, Chamber.RV))
        px = (spacing / 10.0) ** 2
        out.RVEDA = float((a4c[vid][ed] == Chamber.RV).sum() * px)
        out.RVESA = float((a4c[vid][es] == Chamber.RV).sum() * px)

    def mass():
        if sax is None:
            raise MeasurementError("no short-axis view")
        lab, _ = _at_max(sax, Chamber.LV)
        px = (spacing / 10.0) ** 2
        endo = float((lab == Chamber.LV).sum() * px)
        epi = endo + float((lab == Chamber.MYO).sum() * px)
        ed4, _ = _at_max(a4c, Chamber.LV)
        length = chamber_geometry(ed4, Chamber.LV, spacing, n_disks).length
        out.LV_mass = lv_mass_area_length(epi, endo, length)

    for name, fn in (("LV", lv), ("LA", la), ("RA", ra), ("RV", rv), ("LV_mass", mass)):
        attempt(name, fn)
    return out
