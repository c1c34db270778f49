"""Synthetic echocardiogram phantoms with exact ground truth.

Chambers are dark ellipses on bright, speckled tissue inside an imaging
sector. Each chamber's ellipse is the central section of an ellipsoid whose
third semi-axis is ``depth_semi``; analytic volumes come from that ellipsoid.
Geometry is given in cm on a grid of ``size`` pixels at ``spacing`` mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .labels import Chamber, compose
from .measure import MeasurementSet, ejection_fraction, lv_mass_area_length
from .raster import Raster, SectorGeometry


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class ChamberEllipse:
    chamber: Chamber
    center: tuple[float, float]  # (row, col) in cm
    semi_long: float  # cm, along the tilted vertical axis
    semi_short: float  # cm
    depth_semi: float | None = None  # cm, out-of-plane semi-axis (defaults to semi_short)
    angle: float = 0.0  # degrees, long axis tilt from vertical
    contraction: tuple[float, float] = (0.15, 0.25)  # fractional (long, short) shortening at peak

    def scale(self, phase: float) -> tuple[float, float]:
        return (self.semi_long * (1 - self.contraction[0] * phase),
                self.semi_short * (1 - self.contraction[1] * phase))


@dataclass(frozen=True)
class Dropout:
    angle_lo: float  # degrees from the sector axis, negative to the image left
    angle_hi: float
    attenuation: float  # 0 = none, 1 = black
    depth_lo: float = 0.0  # cm from the apex
    depth_hi: float = 1e9


@dataclass(frozen=True)
class PhantomSpec:
    view: str
    chambers: tuple[ChamberEllipse, ...]
    frames: int = 4
    speckle: float = 0.5
    speckle_grain: float = 1.0
    dropout: tuple[Dropout, ...] = ()
    seed: int = 0
    wall: float = 0.8  # cm, SAX myocardium thickness at end-diastole
    lv_length: float = 6.4  # cm, long-axis length used for the SAX mass
    blood: float = 0.05
    tissue: float = 0.5
    surround: float = 0.25  # SAX only: intensity outside the epicardium
    spacing: float = 0.5
    size: int = 256
    sector_angle: float = 100.0
    sector_depth: float = 12.5  # cm

    def __post_init__(self):
        if self.frames < 2:
            raise InvalidSpec("need at least 2 frames")
        for ch in self.chambers:
            if min(ch.semi_long, ch.semi_short) <= 0 or (ch.depth_semi is not None and ch.depth_semi <= 0):
                raise InvalidSpec(f"{ch.chamber.name}: semi-axes must be positive")
            if not all(0 <= c < 1 for c in ch.contraction):
                raise InvalidSpec(f"{ch.chamber.name}: contraction fraction outside [0, 1)")

    @property
    def px_per_cm(self) -> float:
        return 10.0 / self.spacing

    @property
    def sector(self) -> SectorGeometry:
        return SectorGeometry((0.0, (self.size - 1) / 2), self.sector_angle, self.sector_depth * self.px_per_cm)


def default_spec(view: str = "A2C", **overrides) -> PhantomSpec:
    view = view.upper()
    C = Chamber
    if view == "A2C":
        chambers = (
            ChamberEllipse(C.LV, (4.3, 6.4), 3.2, 1.5, depth_semi=1.25),
            ChamberEllipse(C.LA, (10.0, 6.4), 2.0, 1.9, depth_semi=1.4, contraction=(0.1, 0.1)),
        )
    elif view == "A4C":
        chambers = (
            ChamberEllipse(C.LV, (4.6, 7.4), 3.2, 1.25, depth_semi=1.5),
            ChamberEllipse(C.RV, (5.0, 4.5), 2.8, 1.3, contraction=(0.15, 0.2)),
            ChamberEllipse(C.LA, (10.1, 7.8), 2.1, 1.6, depth_semi=1.9, contraction=(0.1, 0.1)),
            ChamberEllipse(C.RA, (10.1, 4.6), 2.1, 1.3, contraction=(0.1, 0.1)),
        )
    elif view == "SAX":
        chambers = (ChamberEllipse(C.LV, (6.0, 6.4), 1.6, 1.6, contraction=(0.25, 0.25)),)
    else:
        raise InvalidSpec(f"unknown view {view!r}")
    return PhantomSpec(view=view, chambers=chambers, **overrides)


def phase(chamber: Chamber, t: int, frames: int) -> float:
    """Contraction in [0, 1]: ventricles are largest at frame 0 and smallest at mid-cycle, atria the reverse."""
    x = (1 - math.cos(2 * math.pi * t / frames)) / 2
    return 1 - x if chamber in (Chamber.LA, Chamber.RA) else x


def _ellipse_mask(spec: PhantomSpec, center, semi_long, semi_short, angle) -> np.ndarray:
    k = spec.px_per_cm
    rows, cols = np.indices((spec.size, spec.size), dtype=float)
    dr = rows - center[0] * k
    dc = cols - center[1] * k
    th = math.radians(angle)
    along = dr * math.cos(th) + dc * math.sin(th)
    across = -dr * math.sin(th) + dc * math.cos(th)
    return (along / (semi_long * k)) ** 2 + (across / (semi_short * k)) ** 2 <= 1.0


def _frame_geometry(spec: PhantomSpec, t: int) -> dict[Chamber, tuple]:
    geo = {}
    for ch in spec.chambers:
        a, b = ch.scale(phase(ch.chamber, t, spec.frames))
        geo[ch.chamber] = (ch, a, b)
    return geo


def _sax_epicardium(spec: PhantomSpec, ch: ChamberEllipse, a: float, b: float) -> tuple[float, float]:
    """Epicardial semi-axes keeping myocardial area at its end-diastolic value."""
    a0, b0 = ch.semi_long, ch.semi_short
    w = spec.wall
    ring = math.pi * ((a0 + w) * (b0 + w) - a0 * b0)
    # grow both semi-axes by the same margin m: pi*(a+m)(b+m) - pi*a*b = ring
    s = a + b
    m = (-s + math.sqrt(s * s + 4 * ring / math.pi)) / 2
    return a + m, b + m


def truth_label(spec: PhantomSpec, t: int) -> np.ndarray:
    masks: dict[Chamber, np.ndarray] = {}
    shape = (spec.size, spec.size)
    for chamber, (ch, a, b) in _frame_geometry(spec, t).items():
        masks[chamber] = _ellipse_mask(spec, ch.center, a, b, ch.angle)
        if spec.view == "SAX" and chamber == Chamber.LV:
            ea, eb = _sax_epicardium(spec, ch, a, b)
            masks[Chamber.MYO] = _ellipse_mask(spec, ch.center, ea, eb, ch.angle) & ~masks[chamber]
    sector = spec.sector.mask(shape)
    return compose(shape, {c: m & sector for c, m in masks.items()})


def speckle_texture(shape, rng: np.random.Generator, grain: float) -> np.ndarray:
    """Unit-mean Rayleigh texture from a (optionally correlated) complex Gaussian field."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    if grain > 0:
        re = ndimage.gaussian_filter(re, grain, mode="wrap")
        im = ndimage.gaussian_filter(im, grain, mode="wrap")
    mag = np.hypot(re, im)
    # the mean of a Rayleigh variable is sigma * sqrt(pi / 2)
    sigma = math.sqrt((re.var() + im.var()) / 2)
    return mag / (sigma * math.sqrt(math.pi / 2))


def _dropout_gain(spec: PhantomSpec, dropouts) -> np.ndarray:
    shape = (spec.size, spec.size)
    gain = np.ones(shape)
    if not dropouts:
        return gain
    rows, cols = np.indices(shape, dtype=float)
    apex = spec.sector.apex
    dr, dc = rows - apex[0], cols - apex[1]
    ang = np.degrees(np.arctan2(dc, dr))
    depth = np.hypot(dr, dc) / spec.px_per_cm
    for d in dropouts:
        sel = (ang >= d.angle_lo) & (ang <= d.angle_hi) & (depth >= d.depth_lo) & (depth <= d.depth_hi)
        gain[sel] *= 1 - d.attenuation
    return gain


def render(spec: PhantomSpec, t: int, rng: np.random.Generator) -> Raster:
    label = truth_label(spec, t)
    sector = spec.sector
    mask = sector.mask(label.shape)
    base = np.full(label.shape, spec.tissue)
    if spec.view == "SAX":
        base[:] = spec.surround
        base[label == Chamber.MYO] = spec.tissue
    base[(label != 0) & (label != Chamber.MYO)] = spec.blood
    texture = speckle_texture(label.shape, rng, spec.speckle_grain)
    img = base * (1 + spec.speckle * (texture - 1))
    img *= _dropout_gain(spec, spec.dropout)
    img = np.clip(img, 0, 1) * mask
    return Raster(img, spec.spacing, sector, mask)


def check_overlap(spec: PhantomSpec) -> None:
    for t in range(spec.frames):
        total = np.zeros((spec.size, spec.size), dtype=int)
        for ch, a, b in _frame_geometry(spec, t).values():
            m = _ellipse_mask(spec, ch.center, a, b, ch.angle)
            if spec.view == "SAX" and ch.chamber == Chamber.LV:
                m = _ellipse_mask(spec, ch.center, *_sax_epicardium(spec, ch, a, b), ch.angle)
            total += m
        if total.max() > 1:
            raise InvalidSpec(f"chamber ellipses overlap in frame {t}")


def analytic_measurements(spec: PhantomSpec) -> MeasurementSet:
    """Closed-form measurements from the continuous ellipse parameters."""
    out = MeasurementSet()
    by = {ch.chamber: ch for ch in spec.chambers}
    steps = [t for t in range(spec.frames)]

    def volume(ch, t):
        a, b = ch.scale(phase(ch.chamber, t, spec.frames))
        c = (ch.depth_semi or ch.semi_short) * b / ch.semi_short
        return 4 / 3 * math.pi * a * b * c

    def area(ch, t):
        a, b = ch.scale(phase(ch.chamber, t, spec.frames))
        return math.pi * a * b

    if spec.view in ("A2C", "A4C") and Chamber.LV in by:
        vols = [volume(by[Chamber.LV], t) for t in steps]
        out.LVEDV, out.LVESV = max(vols), min(vols)
        out.LVEF = ejection_fraction(out.LVEDV, out.LVESV)
    if spec.view in ("A2C", "A4C") and Chamber.LA in by:
        out.LA_vol = max(volume(by[Chamber.LA], t) for t in steps)
    if spec.view == "A4C":
        if Chamber.RA in by:
            out.RA_vol = max(volume(by[Chamber.RA], t) for t in steps)
        if Chamber.RV in by:
            areas = [area(by[Chamber.RV], t) for t in steps]
            out.RVEDA, out.RVESA = max(areas), min(areas)
    if spec.view == "SAX" and Chamber.LV in by:
        ch = by[Chamber.LV]
        endo = math.pi * ch.semi_long * ch.semi_short
        epi = math.pi * (ch.semi_long + spec.wall) * (ch.semi_short + spec.wall)
        out.LV_mass = lv_mass_area_length(epi, endo, spec.lv_length, spec.wall)
    return out


def generate(spec: PhantomSpec) -> tuple[list[Raster], list[np.ndarray], MeasurementSet]:
    """Frames, exact truth label maps and analytic measurements for one video."""
    check_overlap(spec)
    rng = np.random.default_rng(spec.seed)
    frames = [render(spec, t, rng) for t in range(spec.frames)]
    truth = [truth_label(spec, t) for t in range(spec.frames)]
    return frames, truth, analytic_measurements(spec)


def degrade(frame: Raster, mode: str, seed: int = 0, **params) -> Raster:
    """Make a frame technically difficult without touching its truth labels.

    modes: ``dropout`` (angle_lo, angle_hi, attenuation, depth_lo, depth_hi;
    angles in degrees from the sector axis, depths in cm), ``blur`` (sigma in
    pixels), ``gain`` (offset added then clamped), ``speckle`` (extra
    multiplicative Rayleigh texture of the given strength).
    """
    px = frame.pixels
    if mode == "dropout":
        att = params.get("attenuation", 0.0)
        if att == 0:
            return frame
        rows, cols = np.indices(frame.shape, dtype=float)
        dr, dc = rows - frame.sector.apex[0], cols - frame.sector.apex[1]
        ang = np.degrees(np.arctan2(dc, dr))
        depth = np.hypot(dr, dc) * frame.spacing / 10.0
        sel = ((ang >= params["angle_lo"]) & (ang <= params["angle_hi"])
               & (depth >= params.get("depth_lo", 0.0)) & (depth <= params.get("depth_hi", 1e9)))
        out = np.where(sel, px * (1 - att), px)
    elif mode == "blur":
        sigma = params.get("sigma", 0.0)
        if sigma == 0:
            return frame
        out = ndimage.gaussian_filter(px, sigma, mode="mirror")
    elif mode == "gain":
        offset = params.get("offset", 0.0)
        if offset == 0:
            return frame
        out = px + offset
    elif mode == "speckle":
        strength = params.get("strength", 0.0)
        if strength == 0:
            return frame
        rng = np.random.default_rng(seed)
        tex = speckle_texture(frame.shape, rng, params.get("grain", 1.0))
        out = px * (1 + strength * (tex - 1))
    else:
        raise ValueError(f"unknown degradation {mode!r}")
    return frame.with_pixels(np.clip(out, 0, 1))


@dataclass(frozen=True)
class StudyPhantom:
    """Three views of one synthetic heart plus its analytic measurements."""

    study_id: str
    specs: dict[str, PhantomSpec]
    analytic: MeasurementSet
    bsa: float
    sex: str


def jittered_study(seed: int, frames: int = 4, variation: float = 1.0, **overrides) -> dict[str, PhantomSpec]:
    """A2C/A4C/SAX specs for one heart with per-study anatomical variation.

    Shared long axes keep the views of one heart consistent. ``variation``
    scales every jitter range (0 gives the default anatomy).
    """
    rng = np.random.default_rng([seed, 7919])
    v = variation

    def jit(x, rel):
        return x * (1 + v * rel * rng.uniform(-1, 1))

    lv_long = jit(3.2, 0.06)
    lv_short2 = jit(1.5, 0.06)
    lv_short4 = jit(1.25, 0.06)
    la_long = jit(2.0, 0.05)
    tilt = v * rng.uniform(-4, 4)
    out = {}
    for view in ("A2C", "A4C", "SAX"):
        base = default_spec(view, frames=frames, seed=int(rng.integers(2**31)), **overrides)
        chambers = []
        for ch in base.chambers:
            c = ch.chamber
            if view == "A2C" and c == Chamber.LV:
                ch = replace(ch, semi_long=lv_long, semi_short=lv_short2, depth_semi=lv_short4, angle=tilt)
            elif view == "A4C" and c == Chamber.LV:
                ch = replace(ch, semi_long=lv_long, semi_short=lv_short4, depth_semi=lv_short2, angle=tilt)
            elif view in ("A2C", "A4C") and c == Chamber.LA:
                ch = replace(ch, semi_long=la_long, semi_short=jit(ch.semi_short, 0.05),
                             depth_semi=jit(ch.depth_semi, 0.05))
            elif view == "A4C" and c in (Chamber.RV, Chamber.RA):
                ch = replace(ch, semi_long=jit(ch.semi_long, 0.05), semi_short=jit(ch.semi_short, 0.05))
            elif view == "SAX":
                # mid-ventricular section: elliptical lumen from the two apical short axes
                r = (lv_short2 + lv_short4) / 2 * 1.1
                ecc = 1 + v * rng.uniform(0.0, 0.25)
                ch = replace(ch, semi_long=r * math.sqrt(ecc), semi_short=r / math.sqrt(ecc),
                             angle=rng.uniform(-90, 90) if v > 0 else 0.0)
            chambers.append(ch)
        spec = replace(base, chambers=tuple(chambers))
        if view == "SAX":
            spec = replace(spec, lv_length=2 * lv_long)
        out[view] = spec
    return out


def study_measurements(specs: dict[str, PhantomSpec]) -> MeasurementSet:
    """Study-level analytic measurements combining the views of one heart."""
    a2c = analytic_measurements(specs["A2C"])
    a4c = analytic_measurements(specs["A4C"])
    sax = analytic_measurements(specs["SAX"])
    return MeasurementSet(
        LVEDV=a2c.LVEDV, LVESV=a2c.LVESV, LVEF=a2c.LVEF, LV_mass=sax.LV_mass,
        LA_vol=a2c.LA_vol, RA_vol=a4c.RA_vol, RVEDA=a4c.RVEDA, RVESA=a4c.RVESA,
    )
