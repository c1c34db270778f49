"""Classical weak-label primitives: blood-pool masks, EDT seeds, watershed,
Hough circles, connected components and label-shaping morphology.

Masks are plain boolean arrays with the same shape as their source raster.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import reconstruction
from skimage.transform import hough_circle

from .raster import Raster, filter as apply_filter

EIGHT = np.ones((3, 3), dtype=bool)
CROSS = ndimage.generate_binary_structure(2, 1)


class NoBloodPool(RuntimeError):
    pass


class WatershedUnseeded(RuntimeError):
    pass


class NoCircleFound(RuntimeError):
    pass


class DegenerateSegment(ValueError):
    pass


@dataclass(frozen=True)
class Circle:
    center: tuple[int, int]
    radius: int
    accumulator_score: float


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= r * r


def remove_small_regions(mask: np.ndarray, min_size: int) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def fill_small_holes(mask: np.ndarray, max_hole: int) -> np.ndarray:
    """Fill background regions smaller than ``max_hole`` that do not touch the border."""
    # background regions are 4-connected, the dual of 8-connected foreground
    holes, n = ndimage.label(~mask)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(holes.ravel())
    border = np.unique(np.concatenate([holes[0], holes[-1], holes[:, 0], holes[:, -1]]))
    fill = sizes < max_hole
    fill[0] = False
    fill[border] = False
    return mask | fill[holes]


def binarize_clean(img: Raster, threshold: float = 0.1, min_region: int = 500, max_hole: int = 1000) -> np.ndarray:
    """Dark-pixel blood-pool mask, cleaned of small specks and small holes.

    Raises NoBloodPool when nothing survives the cleanup.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    mask = (img.pixels < threshold) & img.sector_mask
    mask = remove_small_regions(mask, min_region)
    mask = fill_small_holes(mask, max_hole)
    if not mask.any():
        raise NoBloodPool("no blood pool found")
    return mask


def distance_map(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance to the nearest background pixel; the frame border counts as background."""
    padded = np.pad(mask, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def distance_seeds(mask: np.ndarray, min_distance: float = 20) -> list[tuple[int, int]]:
    """Seed points at maxima of the distance map.

    A pixel qualifies when its distance value is the largest within a disk of
    radius ``min_distance`` around it. Qualifying pixels are visited by
    descending distance (ties in (row, col) order) and kept when they lie at
    least ``min_distance`` from every seed kept so far.
    """
    if min_distance < 1:
        raise ValueError("min_distance must be >= 1")
    if not mask.any():
        return []
    dist = distance_map(mask)
    # cheap pre-screen over the disk clipped to 3x3; the full disk test below is the criterion
    near = disk_euclid(min(min_distance, 1.5))
    cand = (dist == ndimage.maximum_filter(dist, footprint=near, mode="constant")) & mask
    R = int(np.floor(min_distance))
    foot = disk_euclid(min_distance)
    padded = np.pad(dist, R, constant_values=0.0)
    rows, cols = np.nonzero(cand)
    peaks = []
    for r, c in zip(rows, cols):
        window = padded[r:r + 2 * R + 1, c:c + 2 * R + 1]
        if dist[r, c] >= window[foot].max():
            peaks.append((r, c))
    peaks.sort(key=lambda p: (-dist[p], p[0], p[1]))
    chosen: list[tuple[int, int]] = []
    min_d2 = min_distance * min_distance
    for r, c in peaks:
        if all((r - a) ** 2 + (c - b) ** 2 >= min_d2 for a, b in chosen):
            chosen.append((int(r), int(c)))
    return chosen


def disk_euclid(radius: float) -> np.ndarray:
    R = int(np.floor(radius))
    yy, xx = np.mgrid[-R:R + 1, -R:R + 1]
    return yy * yy + xx * xx <= radius * radius


# 4-neighbours first, then diagonals, each group in raster order
OFFSETS8 = ((-1, 0), (0, -1), (0, 1), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))
OFFSETS4 = OFFSETS8[:4]


def flood(elevation: np.ndarray, markers: np.ndarray, mask: np.ndarray, offsets=OFFSETS8) -> np.ndarray:
    """Marker-controlled priority flood restricted to ``mask``.

    The queued pixel with the lowest elevation grows next; ties go to the
    pixel queued earliest (labeled pixels first, in raster order). A pixel
    takes the label of the neighbour that queued it. ``offsets`` lists the
    neighbour steps in the order they are tried.
    """
    h, w = elevation.shape
    W = w + 2
    # a one-pixel false border removes bounds checks
    ok = np.pad(mask.astype(bool), 1).ravel()
    out = np.pad(markers.astype(np.int32), 1).ravel()
    elev = np.pad(elevation.astype(np.float64), 1).ravel().tolist()
    steps = [dr * W + dc for dr, dc in offsets]
    free = (ok & (out == 0)).tolist()
    lab = out.tolist()
    queue = [(elev[i], n, i) for n, i in enumerate(np.flatnonzero(out).tolist())]
    heapq.heapify(queue)
    age = len(queue)
    pop, push = heapq.heappop, heapq.heappush
    while queue:
        _, _, i = pop(queue)
        li = lab[i]
        for s in steps:
            j = i + s
            if free[j]:
                free[j] = False
                lab[j] = li
                push(queue, (elev[j], age, j))
                age += 1
    return np.asarray(lab, dtype=np.int32).reshape(h + 2, W)[1:-1, 1:-1]


def impose_minima(elevation: np.ndarray, markers: np.ndarray, mask: np.ndarray,
                  footprint: np.ndarray = EIGHT) -> np.ndarray:
    """Raise the relief so the markers are its only minima inside ``mask``.

    Each pixel becomes the lowest possible maximum elevation along a path
    from any marker (morphological reconstruction by erosion), with paths
    stepping through ``footprint``. Markers sit one unit below the original
    minimum; pixels no path reaches sit one unit above the maximum.
    """
    lo = float(elevation[mask].min()) - 1.0 if mask.any() else 0.0
    hi = float(elevation[mask].max()) + 1.0 if mask.any() else 1.0
    floor = np.where(mask, elevation, hi)
    floor[markers > 0] = lo
    start = np.where(markers > 0, lo, hi)
    return reconstruction(start, floor, method="erosion", footprint=footprint)


def watershed(mask: np.ndarray, seeds: list[tuple[int, int]]) -> np.ndarray:
    """Split ``mask`` into one basin per seed by flooding the negated distance map.

    The seeds are imposed as the only minima first, so a seed away from a
    distance maximum still grows outward from where it sits. Flooding runs
    over 4-neighbours, which avoids the drift of diagonal steps across
    symmetric ties; pixels joined to a basin only through a corner are then
    reached by an 8-connected pass. Returns an int label image: 0 outside
    the mask and in components holding no seed, ``i + 1`` for seed ``i``.
    """
    if not seeds:
        raise WatershedUnseeded("watershed unseeded")
    markers = np.zeros(mask.shape, dtype=np.int32)
    for i, (r, c) in enumerate(seeds, start=1):
        if not mask[r, c]:
            raise ValueError(f"seed {(r, c)} lies outside the mask")
        markers[r, c] = i
    # the imposed relief must use the same connectivity as the first flood
    relief = impose_minima(-distance_map(mask), markers, mask, CROSS)
    basins = flood(relief, markers, mask, OFFSETS4)
    if np.any(mask & (basins == 0)):
        basins = flood(relief, basins, mask, OFFSETS8)
    return basins


def hough_preprocess(img: Raster, median_ksize: int = 9, laplacian_ksize: int = 5) -> Raster:
    return apply_filter(apply_filter(img, "median", ksize=median_ksize), "laplacian", ksize=laplacian_ksize)


def edge_pixels(edges: Raster, percentile: float = 90.0, margin: int = 7) -> np.ndarray:
    """Pixels whose edge response exceeds the given percentile of sector pixels.

    A ``margin`` strip along the sector boundary is excluded because the
    filters respond to the sector cut itself.
    """
    inner = ndimage.binary_erosion(edges.sector_mask, EIGHT, iterations=margin)
    vals = edges.pixels[inner]
    if vals.size == 0:
        return np.zeros(edges.shape, dtype=bool)
    cut = np.percentile(vals, percentile)
    return inner & (edges.pixels > cut)


def hough_circles(
    edges: Raster,
    min_center_distance: float = 400,
    r_min: int = 20,
    r_max: int = 80,
    vote_floor: float = 0.5,
    edge_percentile: float = 90.0,
) -> list[Circle]:
    """Circle detection on a preprocessed (median then Laplacian) raster.

    Each radius accumulator is normalized by the pixel count of a full circle
    at that radius, so ``vote_floor`` is a fraction of the full-circle votes.
    Peaks are taken in descending score order (ties: smaller radius, then row,
    then column) and kept only if their center lies at least
    ``min_center_distance`` from every kept center.
    """
    if r_min < 1 or r_max < r_min:
        raise ValueError("need 1 <= r_min <= r_max")
    pts = edge_pixels(edges, edge_percentile)
    if not pts.any():
        raise NoCircleFound("no circle found")
    radii = np.arange(r_min, r_max + 1)
    acc = hough_circle(pts, radii, normalize=True, full_output=False)
    # light smoothing centers the peak inside the edge band of finite width
    acc = ndimage.uniform_filter(acc, size=(3, 1, 1), mode="nearest")
    found: list[Circle] = []
    rows, cols = np.indices(acc.shape[1:])
    while True:
        # argmax returns the first maximum in (radius, row, col) order
        idx = int(np.argmax(acc))
        k, r, c = np.unravel_index(idx, acc.shape)
        score = float(acc[k, r, c])
        if not score >= vote_floor:
            break
        found.append(Circle((int(r), int(c)), int(radii[k]), score))
        near = (rows - r) ** 2 + (cols - c) ** 2 < min_center_distance ** 2
        acc[:, near] = -np.inf
        if near.all():
            break
    if not found:
        raise NoCircleFound("no circle found")
    return found


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components, largest first; ties by the first pixel in raster order."""
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    sizes = np.bincount(flat)[1:]
    fg = np.flatnonzero(flat)
    first = np.full(n, flat.size)
    np.minimum.at(first, flat[fg] - 1, fg)
    order = np.lexsort((first, -sizes))
    return [labels == (i + 1) for i in order]


def convex_hull(mask: np.ndarray) -> np.ndarray:
    """Pixels whose centers lie in the convex hull of the foreground pixel centers."""
    pts = np.argwhere(mask)
    out = np.zeros(mask.shape, dtype=bool)
    if len(pts) == 0:
        return out
    hull = _monotone_chain([tuple(p) for p in pts])
    r0, c0 = pts.min(axis=0)
    r1, c1 = pts.max(axis=0)
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    if len(hull) == 1:
        inside = (rr == hull[0][0]) & (cc == hull[0][1])
    elif len(hull) == 2:
        (ar, ac), (br, bc) = hull
        cross = (br - ar) * (cc - ac) - (bc - ac) * (rr - ar)
        inside = cross == 0
    else:
        inside = np.ones(rr.shape, dtype=bool)
        for (ar, ac), (br, bc) in zip(hull, hull[1:] + hull[:1]):
            # counter-clockwise in (row, col) means the interior is on the left
            inside &= (br - ar) * (cc - ac) - (bc - ac) * (rr - ar) >= 0
    out[r0:r1 + 1, c0:c1 + 1] = inside
    return out


def _monotone_chain(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return hull


def fill_holes(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_fill_holes(mask)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, disk(radius))


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    # pixels beyond the frame count as background
    return ndimage.binary_erosion(mask, disk(radius), border_value=0)


def morphology(mask: np.ndarray, op: str, radius: int = 1) -> np.ndarray:
    if op == "dilate":
        return dilate(mask, radius)
    if op == "erode":
        return erode(mask, radius)
    if op == "fill_holes":
        return fill_holes(mask)
    if op == "convex_hull":
        return convex_hull(mask)
    raise ValueError(f"unknown morphology op {op!r}")


def edge_ring(mask: np.ndarray, dilate_px: int = 2, erode_px: int = 2) -> np.ndarray:
    """Band ``dilate(hull) - erode(hull)`` straddling the chamber boundary."""
    if not dilate_px >= erode_px >= 0:
        raise ValueError("need dilate_px >= erode_px >= 0")
    hull = convex_hull(mask)
    if hull.sum() < 9:
        raise DegenerateSegment("degenerate segment")
    if dilate_px == 0 and erode_px == 0:
        return np.zeros_like(mask)
    return dilate(hull, dilate_px) & ~erode(hull, erode_px)
