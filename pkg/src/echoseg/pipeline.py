"""Per-view step graphs, the self-learning loop and the refiner contract.

A refiner is anything with ``fit(pairs) -> model`` and
``predict(model, image) -> label map or None``. The provided
:class:`AtlasRefiner` averages accepted chamber shapes into a
centroid-aligned, area-normalized probability atlas and re-places it on
blood-pool components of new frames. A learned model can be swapped in as
long as it honours the same two calls; if the model exposes a
``loss_curve`` attribute, each round records the elbow of that curve.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Protocol

import numpy as np
from scipy import ndimage
from skimage.draw import polygon_perimeter

from .config import PipelineConfig
from .labels import ATTACHED, CHAMBERS, VIEW_CHAMBERS, Chamber, compose, empty_label
from .raster import Raster, filter as apply_filter, standardize
from .shapeqc import (FrameUnusable, MissingReference, QcConfig, Segment, assign_chambers, describe,
                      myocardial_rind, qc_filter, stretch_lv, stretch_rv)
from .weaklabel import (DegenerateSegment, NoBloodPool, NoCircleFound, WatershedUnseeded, binarize_clean,
                        connected_components, distance_seeds, edge_ring, fill_holes, hough_circles,
                        hough_preprocess, watershed)

log = logging.getLogger(__name__)

Key = Hashable
Labels = dict[Key, np.ndarray]


class RefinerUntrainable(RuntimeError):
    pass


class PipelineFailure(RuntimeError):
    pass


class Refiner(Protocol):
    def fit(self, pairs: list[tuple[Raster, np.ndarray]]) -> Any: ...

    def predict(self, model: Any, img: Raster) -> np.ndarray | None: ...


# --------------------------------------------------------------------------
# elbow detection

def elbow_index(curve, threshold: float = 0.05) -> int | None:
    """Index of the point farthest from the first-to-last chord.

    Both axes are scaled to [0, 1] first. Returns None when the largest
    distance is below ``threshold`` (the curve is close to a straight line).
    """
    y = np.asarray(curve, dtype=float)
    if y.ndim != 1 or len(y) < 3:
        raise ValueError("elbow detection needs at least 3 points")
    span = y.max() - y.min()
    if span == 0:
        return None
    y = (y - y.min()) / span
    x = np.linspace(0.0, 1.0, len(y))
    dy = y[-1] - y[0]
    dist = np.abs(dy * x - (y - y[0])) / math.hypot(1.0, dy)
    i = int(np.argmax(dist))
    return i if dist[i] >= threshold else None


# --------------------------------------------------------------------------
# shape atlas refiner

@dataclass
class ShapeAtlas:
    """Mean chamber shapes on a canonical grid.

    ``fields[host][cls]`` is the fraction of training examples of ``host``
    covering each grid cell with class ``cls`` (the host itself or a class
    attached to it, such as the myocardium around the LV). Grid coordinates
    span ``[-extent, extent]`` in units of sqrt(host area). ``pool_threshold``
    is the blood-pool intensity cutoff learned from the training labels
    (None: use the caller's).
    """

    fields: dict[Chamber, dict[Chamber, np.ndarray]]
    counts: dict[Chamber, int]
    threshold: float = 0.5
    extent: float = 2.0
    pool_threshold: float | None = None

    @property
    def chambers(self) -> list[Chamber]:
        return list(self.fields)

    @property
    def grid(self) -> int:
        return next(iter(self.fields[self.chambers[0]].values())).shape[0]

    def thresholded(self, host: Chamber, cls: Chamber | None = None) -> np.ndarray:
        return self.fields[host][host if cls is None else cls] >= self.threshold

    def cell_area(self) -> float:
        """Area of one grid cell in units of the host area."""
        return (2 * self.extent / (self.grid - 1)) ** 2


def _canonical_coords(centroid, scale: float, grid: int, extent: float) -> np.ndarray:
    u = np.linspace(-extent, extent, grid)
    rr, cc = np.meshgrid(u, u, indexing="ij")
    return np.stack([centroid[0] + rr * scale, centroid[1] + cc * scale])


def atlas_fit(pairs: list[tuple[Raster, np.ndarray]], grid: int = 161, extent: float = 2.0,
              threshold: float = 0.5) -> ShapeAtlas:
    """Average every chamber's masks after moving them to a common centroid and unit area."""
    sums: dict[Chamber, dict[Chamber, np.ndarray]] = {}
    counts: dict[Chamber, int] = {}
    for _, label in pairs:
        for host in CHAMBERS:
            mask = label == host
            n = int(mask.sum())
            if n == 0:
                continue
            centroid = np.argwhere(mask).mean(axis=0)
            coords = _canonical_coords(centroid, math.sqrt(n), grid, extent)
            acc = sums.setdefault(host, {})
            for cls in (host, *ATTACHED.get(host, ())):
                cls_mask = label == cls
                if cls != host and not cls_mask.any():
                    continue
                sample = ndimage.map_coordinates(cls_mask.astype(float), coords, order=0, mode="constant")
                acc[cls] = acc.get(cls, 0.0) + sample
            counts[host] = counts.get(host, 0) + 1
    if not counts:
        raise RefinerUntrainable("refiner untrainable: no accepted pairs")
    fields = {h: {c: np.clip(s / counts[h], 0.0, 1.0) for c, s in per.items()} for h, per in sums.items()}
    return ShapeAtlas(fields, counts, threshold, extent)


def fit_pool_threshold(pairs: list[tuple[Raster, np.ndarray]], candidates, min_region: int = 500,
                       max_hole: int = 1000) -> float | None:
    """Pool cutoff whose cleaned dark-pixel mask best matches the labeled chambers.

    Scores each candidate by mean Dice between the blood pool and the union
    of chamber pixels over all pairs with an image; ties go to the smaller
    cutoff. Returns None when there are no candidates or images.
    """
    pairs = [(img, np.isin(lab, CHAMBERS)) for img, lab in pairs if img is not None]
    if not pairs or not len(candidates):
        return None
    best, best_score = None, -1.0
    for t in sorted(candidates):
        scores = []
        for img, blood in pairs:
            try:
                pool = binarize_clean(img, t, min_region, max_hole)
            except NoBloodPool:
                pool = np.zeros_like(blood)
            total = pool.sum() + blood.sum()
            scores.append(2 * np.logical_and(pool, blood).sum() / total if total else 1.0)
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = float(t), score
    return best


def _place(atlas: ShapeAtlas, host: Chamber, cls: Chamber, centroid, scale: float, shape,
           level: float | None = None) -> np.ndarray:
    """Atlas field of ``cls`` drawn at ``centroid`` with host area ``scale**2``, thresholded
    at ``level`` (default: the atlas threshold)."""
    f = atlas.fields[host][cls]
    g = f.shape[0]
    half = atlas.extent * scale
    r0, r1 = max(0, int(math.floor(centroid[0] - half))), min(shape[0], int(math.ceil(centroid[0] + half)) + 1)
    c0, c1 = max(0, int(math.floor(centroid[1] - half))), min(shape[1], int(math.ceil(centroid[1] + half)) + 1)
    out = np.zeros(shape, dtype=bool)
    if r0 >= r1 or c0 >= c1:
        return out
    rr, cc = np.mgrid[r0:r1, c0:c1].astype(float)
    to_idx = (g - 1) / (2 * atlas.extent)
    ir = ((rr - centroid[0]) / scale + atlas.extent) * to_idx
    ic = ((cc - centroid[1]) / scale + atlas.extent) * to_idx
    vals = ndimage.map_coordinates(f, [ir, ic], order=1, mode="constant", cval=0.0)
    out[r0:r1, c0:c1] = vals >= (atlas.threshold if level is None else level)
    return out


def _largest(mask: np.ndarray) -> np.ndarray:
    comps = connected_components(mask)
    return comps[0] if comps else mask


def atlas_predict(atlas: ShapeAtlas, img: Raster, min_score: float = 0.5, threshold: float = 0.1,
                  min_region: int = 500, max_hole: int = 1000, support: float = 0.01) -> np.ndarray | None:
    """Label blood-pool components by their best-matching atlas shape.

    Each component is scored against every chamber's thresholded atlas
    (Dice, after centroid alignment and area matching). The winner's label
    is the component clipped to the atlas support (field >= ``support``),
    hole-filled: pool regions no training shape reached are trimmed, the
    boundary is not eroded. Returns None when no component scores
    ``min_score`` or more.
    """
    try:
        pool = binarize_clean(img, threshold, min_region, max_hole)
    except NoBloodPool:
        return None
    label = empty_label(img.shape)
    attached: list[tuple[Chamber, np.ndarray]] = []
    hit = False
    for comp in connected_components(pool):
        n = int(comp.sum())
        centroid = np.argwhere(comp).mean(axis=0)
        scale = math.sqrt(n)
        best, best_score = None, -1.0
        for host in atlas.chambers:
            placed = _place(atlas, host, host, centroid, scale, img.shape)
            score = 2 * np.logical_and(placed, comp).sum() / (placed.sum() + n)
            if score > best_score:
                best, best_score = host, score
        if best is None or best_score < min_score:
            continue
        reach = _place(atlas, best, best, centroid, scale, img.shape, level=support)
        region = _largest(fill_holes(reach & comp)) & (label == 0)
        label[region] = best
        hit = True
        for cls in atlas.fields[best]:
            if cls != best:
                attached.append((cls, _place(atlas, best, cls, centroid, scale, img.shape)))
    if not hit:
        return None
    for cls, m in attached:
        label[m & (label == 0) & img.sector_mask] = cls
    return label


@dataclass
class AtlasRefiner:
    """:class:`Refiner` backed by a :class:`ShapeAtlas`.

    Fitting also picks, from ``pool_candidates``, the blood-pool cutoff that
    best reproduces the training labels, so enlarged labels (edge-filled,
    stretched) move the predicted boundaries outward along image edges.
    """

    grid: int = 161
    extent: float = 2.0
    threshold: float = 0.5
    min_score: float = 0.5
    support: float = 0.01
    pool_threshold: float = 0.1
    min_region: int = 500
    max_hole: int = 1000
    pool_candidates: tuple[float, ...] = ()

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> AtlasRefiner:
        return cls(threshold=cfg.atlas_threshold, min_score=cfg.atlas_min_score, support=cfg.atlas_support,
                   pool_threshold=cfg.threshold, min_region=cfg.min_region, max_hole=cfg.max_hole,
                   pool_candidates=tuple(cfg.refiner_thresholds))

    def fit(self, pairs):
        atlas = atlas_fit(pairs, self.grid, self.extent, self.threshold)
        atlas.pool_threshold = fit_pool_threshold(pairs, self.pool_candidates, self.min_region, self.max_hole)
        return atlas

    def predict(self, model: ShapeAtlas, img: Raster) -> np.ndarray | None:
        cutoff = self.pool_threshold if model.pool_threshold is None else model.pool_threshold
        return atlas_predict(model, img, self.min_score, cutoff, self.min_region, self.max_hole, self.support)


# --------------------------------------------------------------------------
# frame access

@dataclass(frozen=True)
class FrameRecord:
    key: Key
    view: str
    split: str
    load: Callable[[], Raster] = field(repr=False, compare=False)
    patient: str = ""
    study: str = ""
    mirrored: bool = False


class FrameStore:
    """Lazily loaded, standardized frames with an access log.

    Every load is appended to ``access_log`` so tests can prove which
    frames a run touched. Derived images (filtered variants) are cached.
    """

    def __init__(self, records: list[FrameRecord], target_spacing: float = 0.5,
                 target_size: tuple[int, int] = (256, 256)):
        self.records = {r.key: r for r in records}
        if len(self.records) != len(records):
            raise ValueError("duplicate frame keys")
        self.target_spacing = target_spacing
        self.target_size = target_size
        self.access_log: list[Key] = []
        self._cache: dict[tuple[Key, str], Raster] = {}

    def keys(self, view: str, splits=("train", "val")) -> list[Key]:
        return sorted((k for k, r in self.records.items() if r.view == view.upper() and r.split in splits),
                      key=repr)

    def image(self, key: Key, kind: str = "raw", cfg: PipelineConfig | None = None) -> Raster:
        cached = self._cache.get((key, kind))
        if cached is not None:
            return cached
        if kind == "raw":
            self.access_log.append(key)
            out = standardize(self.records[key].load(), self.target_spacing, self.target_size)
        else:
            cfg = cfg or PipelineConfig()
            raw = self.image(key, "raw")
            if kind == "bilateral":
                out = apply_filter(raw, "bilateral", sigma_spatial=cfg.sigma_spatial, sigma_range=cfg.sigma_range)
            elif kind == "median":
                out = apply_filter(raw, "median", ksize=cfg.median_ksize)
            elif kind == "hough":
                out = hough_preprocess(raw, cfg.median_ksize, cfg.laplacian_ksize)
            else:
                raise ValueError(f"unknown image kind {kind!r}")
        self._cache[(key, kind)] = out
        return out


def refine_kind(view: str) -> str:
    """Filtered variant the refiner sees for a view."""
    return "median" if view.upper() == "SAX" else "bilateral"


# --------------------------------------------------------------------------
# frame-level QC

def label_segments(label: np.ndarray, spacing: float) -> list[Segment]:
    segs = []
    for ch in CHAMBERS:
        for comp in connected_components(label == ch):
            segs.append(describe(comp, spacing, ch))
    return segs


def qc_label(label: np.ndarray, view: str, spacing: float, qc: QcConfig,
             mirrored: bool = False) -> tuple[np.ndarray | None, str | None]:
    """Re-name a label map's chambers spatially and gate them.

    Returns the re-painted label, or None with the first rejection reason.
    Attached classes (myocardium) are carried over unchanged.
    """
    try:
        assigned = assign_chambers(label_segments(label, spacing), view, mirrored)
    except FrameUnusable as e:
        return None, str(e)
    _, rejected = qc_filter(assigned, qc, view)
    if rejected:
        seg, why = rejected[0]
        return None, f"{seg.chamber.name}: {why}"
    out = empty_label(label.shape)
    for seg in assigned:
        out[seg.mask] = seg.chamber
    extra = (label == Chamber.MYO) & (out == 0)
    out[extra] = Chamber.MYO
    return out, None


# --------------------------------------------------------------------------
# self-learning

@dataclass
class RoundReport:
    step: str
    fitted_on: int
    coverage_before: int
    coverage_after: int
    added: int = 0
    replaced: int = 0
    rejected: int = 0
    elbow: int | None = None
    aborted: str | None = None


def self_learning_round(refiner: Refiner, store: FrameStore, view: str, labels: Labels, qc: QcConfig,
                        cfg: PipelineConfig | None = None, step: str = "") -> tuple[Labels, Any, RoundReport]:
    """Fit on accepted labels, predict every train/val frame, keep QC-passing predictions.

    A frame's label changes only when the new prediction passes QC, so the
    number of labeled frames never shrinks.
    """
    cfg = cfg or PipelineConfig()
    kind = refine_kind(view)
    keys = store.keys(view)
    before = len(labels)
    pairs = [(store.image(k, kind, cfg), labels[k]) for k in keys if k in labels]
    try:
        model = refiner.fit(pairs)
    except RefinerUntrainable as e:
        log.warning("%s: round aborted: %s", step or view, e)
        return dict(labels), None, RoundReport(step, 0, before, before, aborted=str(e))
    report = RoundReport(step, len(pairs), before, before)
    curve = getattr(model, "loss_curve", None)
    if curve is not None and len(curve) >= 3:
        report.elbow = elbow_index(curve, cfg.elbow_threshold)
    out = dict(labels)
    for k in keys:
        img = store.image(k, kind, cfg)
        pred = refiner.predict(model, img)
        if pred is None:
            report.rejected += 1
            continue
        ok, _ = qc_label(pred, view, img.spacing, qc, store.records[k].mirrored)
        if ok is None:
            report.rejected += 1
            continue
        if k in out:
            report.replaced += 1
        else:
            report.added += 1
        out[k] = ok
    if report.added + report.replaced == 0:
        log.warning("%s: QC rejected every prediction; labels unchanged", step or view)
    report.coverage_after = len(out)
    return out, model, report


# --------------------------------------------------------------------------
# step functions

def watershed_label(img: Raster, cfg: PipelineConfig) -> np.ndarray | None:
    """Step A1 for one frame: blood pool split into basins (unnamed, class 1..n)."""
    try:
        pool = binarize_clean(img, cfg.threshold, cfg.min_region, cfg.max_hole)
        basins = watershed(pool, distance_seeds(pool, cfg.min_distance))
    except (NoBloodPool, WatershedUnseeded):
        return None
    if basins.max() > 255:
        return None
    return basins.astype(np.uint8)


def basins_to_label(basins: np.ndarray, view: str, spacing: float, qc: QcConfig,
                    mirrored: bool = False) -> tuple[np.ndarray | None, str | None]:
    segs = [describe(basins == b, spacing) for b in range(1, int(basins.max()) + 1) if (basins == b).any()]
    try:
        assigned = assign_chambers(segs, view, mirrored)
    except FrameUnusable as e:
        return None, str(e)
    _, rejected = qc_filter(assigned, qc, view)
    if rejected:
        seg, why = rejected[0]
        return None, f"{seg.chamber.name}: {why}"
    out = empty_label(basins.shape)
    for seg in assigned:
        out[seg.mask] = seg.chamber
    return out, None


def edge_fill_label(label: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Step A3 shaping: every chamber replaced by its filled boundary ring."""
    masks = {}
    for ch in CHAMBERS:
        m = label == ch
        if m.any():
            try:
                masks[ch] = fill_holes(edge_ring(m, cfg.ring_dilate, cfg.ring_erode))
            except DegenerateSegment:
                masks[ch] = m
    return compose(label.shape, masks)


def lv_stretched_label(label: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    lv = label == Chamber.LV
    if not lv.any():
        return label.copy()
    others = {ch: label == ch for ch in CHAMBERS if ch != Chamber.LV}
    return compose(label.shape, {**others, Chamber.LV: stretch_lv(lv, cfg.lv_ratio)})


def rv_stretched_label(label: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    rv, lv = label == Chamber.RV, label == Chamber.LV
    if not rv.any():
        return label.copy()
    try:
        new_rv = stretch_rv(rv, lv, cfg.rv_beta)
    except MissingReference:
        return label.copy()
    others = {ch: label == ch for ch in CHAMBERS if ch != Chamber.RV}
    return compose(label.shape, {**others, Chamber.RV: new_rv})


def circle_label(shape, center, radius) -> np.ndarray:
    rr, cc = np.indices(shape)
    out = empty_label(shape)
    out[(rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2] = Chamber.LV
    return out


def gradient_ring(img: Raster, center, radius: float, search: float = 8.0, step: float = 0.5) -> np.ndarray:
    """Closed boundary at the strongest intensity edge within ``radius ± search`` along rays.

    Ray radii are median-smoothed around the circle to suppress speckle outliers.
    """
    px = img.pixels
    mag = np.hypot(ndimage.sobel(px, 0, mode="mirror"), ndimage.sobel(px, 1, mode="mirror"))
    n_rays = max(64, int(round(2 * math.pi * radius)))
    theta = np.linspace(0, 2 * math.pi, n_rays, endpoint=False)
    radii = np.arange(max(1.0, radius - search), radius + search + step / 2, step)
    rr = center[0] + np.outer(np.sin(theta), radii)
    cc = center[1] + np.outer(np.cos(theta), radii)
    vals = ndimage.map_coordinates(mag, [rr, cc], order=1, mode="constant")
    best = radii[np.argmax(vals, axis=1)]
    best = ndimage.median_filter(best, size=5, mode="wrap")
    pr = center[0] + best * np.sin(theta)
    pc = center[1] + best * np.cos(theta)
    ring = np.zeros(img.shape, dtype=bool)
    r, c = polygon_perimeter(np.rint(pr).astype(int), np.rint(pc).astype(int), shape=img.shape, clip=False)
    ring[r, c] = True
    return ring


def frame_rng(seed: int, key: Key) -> np.random.Generator:
    """Per-frame generator that does not depend on iteration order."""
    return np.random.default_rng([seed, zlib.crc32(repr(key).encode())])


# --------------------------------------------------------------------------
# orchestration

@dataclass
class PipelineResult:
    view: str
    steps: dict[str, Labels]  # snapshot of accepted labels after each step, in order
    model: Any
    reports: list[RoundReport]
    initial_step: str

    @property
    def final(self) -> Labels:
        return self.steps[next(reversed(self.steps))]

    @property
    def initial(self) -> Labels:
        return self.steps[self.initial_step]


def _shape_step(labels: Labels, store: FrameStore, view: str, qc: QcConfig,
                fn: Callable[[np.ndarray], np.ndarray]) -> Labels:
    """Apply a shaping rule; keep the old label wherever the shaped one fails QC."""
    out = {}
    for k, lab in labels.items():
        rec = store.records[k]
        spacing = store.image(k).spacing
        try:
            new = fn(lab)
        except (DegenerateSegment, MissingReference):
            out[k] = lab
            continue
        ok, _ = qc_label(new, view, spacing, qc, rec.mirrored)
        out[k] = ok if ok is not None else lab
    return out


def sax_circles(store: FrameStore, keys, cfg: PipelineConfig) -> dict[Key, Any]:
    out = {}
    for k in keys:
        try:
            out[k] = hough_circles(store.image(k, "hough", cfg), cfg.hough_min_distance, cfg.hough_r_min,
                                   cfg.hough_r_max, cfg.hough_vote_floor)[0]
        except NoCircleFound:
            continue
    return out


def weak_labels(view: str, store: FrameStore, cfg: PipelineConfig | None = None, qc: QcConfig | None = None,
                refiner: Refiner | None = None, a2c_model: Any = None) -> Labels:
    """Initial QC-passing labels of a view (steps A1, B1 or C1)."""
    view = view.upper()
    cfg = cfg or PipelineConfig()
    qc = qc or QcConfig()
    keys = store.keys(view)
    labels = {}
    if view == "A2C":
        for k in keys:
            img = store.image(k, "bilateral", cfg)
            basins = watershed_label(img, cfg)
            if basins is None:
                continue
            lab, _ = basins_to_label(basins, view, img.spacing, qc, store.records[k].mirrored)
            if lab is not None:
                labels[k] = lab
    elif view == "A4C":
        if a2c_model is None:
            raise PipelineFailure("A4C needs the final A2C refiner model")
        refiner = refiner or AtlasRefiner.from_config(cfg)
        for k in keys:
            img = store.image(k, "bilateral", cfg)
            pred = refiner.predict(a2c_model, img)
            if pred is None:
                continue
            lab, _ = qc_label(pred, view, img.spacing, qc, store.records[k].mirrored)
            if lab is not None:
                labels[k] = lab
    elif view == "SAX":
        for k, c in sax_circles(store, keys, cfg).items():
            spacing = store.image(k).spacing
            lab, _ = qc_label(circle_label(store.image(k).shape, c.center, c.radius), view, spacing, qc)
            if lab is not None:
                labels[k] = lab
    else:
        raise ValueError(f"unknown view {view!r}")
    return labels


def run_view_pipeline(view: str, store: FrameStore, cfg: PipelineConfig | None = None,
                      qc: QcConfig | None = None, refiner: Refiner | None = None,
                      a2c_model: Any = None) -> PipelineResult:
    """Run the weak-label and self-learning steps of one view over train/val frames."""
    view = view.upper()
    if view not in VIEW_CHAMBERS:
        raise ValueError(f"unknown view {view!r}")
    cfg = cfg or PipelineConfig()
    qc = qc or QcConfig()
    refiner = refiner or AtlasRefiner.from_config(cfg)
    first = {"A2C": "A1", "A4C": "B1", "SAX": "C1"}[view]
    labels = weak_labels(view, store, cfg, qc, refiner, a2c_model)
    if not labels:
        raise PipelineFailure(f"{view}: no usable weak labels")
    steps: dict[str, Labels] = {first: labels}
    reports: list[RoundReport] = []

    def rounds(step: str, labels: Labels) -> tuple[Labels, Any]:
        model = None
        for i in range(max(1, cfg.rounds)):
            labels, m, rep = self_learning_round(refiner, store, view, labels, qc, cfg, f"{step}.{i + 1}")
            reports.append(rep)
            model = m if m is not None else model
        steps[step] = labels
        return labels, model

    def shaped(fn: Callable[[np.ndarray], np.ndarray]) -> Labels:
        return _shape_step(labels, store, view, qc, fn)

    if view == "A2C":
        labels, model = rounds("A2", labels)
        labels, model = rounds("A3", shaped(lambda lab: edge_fill_label(lab, cfg)))
        labels, model = rounds("A4", shaped(lambda lab: lv_stretched_label(lab, cfg)))
    elif view == "A4C":
        labels, model = rounds("B2", labels)
        labels, model = rounds("B3", shaped(lambda lab: rv_stretched_label(lab, cfg)))
    else:
        circles = sax_circles(store, list(labels), cfg)
        filled = {}
        for k, lab in labels.items():
            c = circles[k]
            ring = gradient_ring(store.image(k, "median", cfg), c.center, c.radius, cfg.edge_search)
            new = empty_label(ring.shape)
            new[fill_holes(ring)] = Chamber.LV
            ok, _ = qc_label(new, view, store.image(k).spacing, qc)
            filled[k] = ok if ok is not None else lab
        steps["C2"] = filled
        labels, model = rounds("C3", filled)
        rind = {}
        for k, lab in labels.items():
            try:
                rind[k] = myocardial_rind(lab == Chamber.LV, frame_rng(cfg.seed, k), cfg.rind_dilate,
                                          cfg.rind_erode)
            except ValueError:
                rind[k] = lab
        labels, model = rounds("C4", rind)
    return PipelineResult(view, steps, model, reports, first)


def segment_frames(refiner: Refiner, model: Any, store: FrameStore, view: str, keys,
                   cfg: PipelineConfig | None = None, qc: QcConfig | None = None) -> Labels:
    """Apply a fitted refiner to frames (any split); frames without a QC-passing prediction are omitted."""
    cfg = cfg or PipelineConfig()
    qc = qc or QcConfig()
    out = {}
    for k in keys:
        img = store.image(k, refine_kind(view), cfg)
        pred = refiner.predict(model, img)
        if pred is None:
            continue
        lab, _ = qc_label(pred, view, img.spacing, qc, store.records[k].mirrored)
        if lab is not None:
            out[k] = lab
    return out


def save_atlas(atlas: ShapeAtlas) -> bytes:
    arrays = {f"{h.name}.{c.name}": f for h, per in atlas.fields.items() for c, f in per.items()}
    meta = {"counts": {h.name: n for h, n in atlas.counts.items()}, "threshold": atlas.threshold,
            "extent": atlas.extent, "pool_threshold": atlas.pool_threshold}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return buf.getvalue()


def load_atlas(data: bytes) -> ShapeAtlas:
    with np.load(io.BytesIO(data)) as z:
        meta = json.loads(z["__meta__"].tobytes())
        fields: dict[Chamber, dict[Chamber, np.ndarray]] = {}
        for name in z.files:
            if name == "__meta__":
                continue
            h, c = name.split(".")
            fields.setdefault(Chamber[h], {})[Chamber[c]] = z[name]
    counts = {Chamber[h]: int(n) for h, n in meta["counts"].items()}
    return ShapeAtlas(fields, counts, meta["threshold"], meta["extent"], meta.get("pool_threshold"))
