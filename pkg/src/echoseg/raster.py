"""Image value types plus the standardization and filtering front end."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy import ndimage


class InvalidInput(ValueError):
    """Raised when an image or its parameters cannot be processed."""


@dataclass(frozen=True)
class SectorGeometry:
    """Fan-shaped acquisition region: apex point, opening angle and depth."""

    apex: tuple[float, float]
    opening_angle: float
    depth: float

    def __post_init__(self):
        if not 0 < self.opening_angle < 180:
            raise InvalidInput(f"opening angle {self.opening_angle} outside (0, 180)")
        if self.depth <= 0:
            raise InvalidInput("sector depth must be positive")

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        rows, cols = np.indices(shape, dtype=float)
        dr = rows - self.apex[0]
        dc = cols - self.apex[1]
        radius = np.hypot(dr, dc)
        # angle measured from the downward image axis
        angle = np.degrees(np.arctan2(np.abs(dc), dr))
        return (radius <= self.depth) & (angle <= self.opening_angle / 2) & (dr >= 0)

    def scaled(self, factor: float, offset: tuple[float, float] = (0.0, 0.0)) -> SectorGeometry:
        return SectorGeometry(
            apex=(self.apex[0] * factor + offset[0], self.apex[1] * factor + offset[1]),
            opening_angle=self.opening_angle,
            depth=self.depth * factor,
        )


@dataclass(frozen=True, eq=False)
class Raster:
    """Grayscale frame with isotropic spacing (mm per pixel) and sector geometry.

    Intensities live in [0, 1] and everything outside the sector is zero.
    """

    pixels: np.ndarray
    spacing: float
    sector: SectorGeometry
    _mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidInput("raster pixels must be 2-D")
        if not self.spacing > 0:
            raise InvalidInput(f"invalid spacing {self.spacing}")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise InvalidInput("raster intensities must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def sector_mask(self) -> np.ndarray:
        if self._mask is None:
            object.__setattr__(self, "_mask", self.sector.mask(self.shape))
        return self._mask

    def with_pixels(self, pixels: np.ndarray) -> Raster:
        """Same geometry, new intensities (sector-masked)."""
        return Raster(np.where(self.sector_mask, pixels, 0.0), self.spacing, self.sector, self._mask)

    def mirrored(self) -> Raster:
        """Horizontal mirror; the sector is reflected about the image's vertical midline."""
        apex = (self.sector.apex[0], self.width - 1 - self.sector.apex[1])
        sector = replace(self.sector, apex=apex)
        return Raster(self.pixels[:, ::-1].copy(), self.spacing, sector)


def minmax_in_sector(pixels: np.ndarray, sector_mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(pixels, dtype=np.float64)
    if not sector_mask.any():
        return out
    vals = pixels[sector_mask]
    lo, hi = vals.min(), vals.max()
    # resampling uses float32 weights, so flat input can come back with ~1e-8 spread
    if hi - lo > 1e-6:
        out[sector_mask] = (vals - lo) / (hi - lo)
    return out


def standardize(raw: Raster, target_spacing: float = 0.5, target_size: tuple[int, int] = (256, 256)) -> Raster:
    """Resample to ``target_size`` and min-max normalize inside the sector.

    The frame is first brought to ``target_spacing`` and then fitted into the
    target grid, preserving aspect ratio (the short side is zero-padded, which
    falls outside the sector). Area interpolation is used when shrinking and
    bilinear when enlarging. Pixels outside the sector are first replaced by
    their nearest sector value so interpolation does not darken the rim.
    """
    if raw.height == 0 or raw.width == 0:
        raise InvalidInput("degenerate raster (zero area)")
    th, tw = target_size
    extent_h = raw.height * raw.spacing
    extent_w = raw.width * raw.spacing
    out_spacing = max(extent_h / th, extent_w / tw)
    body_mask = np.ones((th, tw), dtype=bool)
    if raw.shape == (th, tw) and raw.spacing == target_spacing:
        resized, scale, offset = raw.pixels, 1.0, (0.0, 0.0)
        out_spacing = raw.spacing
    else:
        # outside pixels take their nearest sector value so the rim does not blend with zeros
        mid = _resize(_extend_sector(raw.pixels, raw.sector_mask), raw.spacing / target_spacing)
        scale = raw.spacing / out_spacing
        new_h = min(th, max(1, round(raw.height * scale)))
        new_w = min(tw, max(1, round(raw.width * scale)))
        body = _resize_to(mid, (new_h, new_w))
        resized = np.zeros((th, tw))
        top = (th - new_h) // 2
        left = (tw - new_w) // 2
        resized[top:top + new_h, left:left + new_w] = body
        # the padding holds no data even where the fan geometry reaches it
        body_mask[:] = False
        body_mask[top:top + new_h, left:left + new_w] = True
        # pixel-center alignment between the two grids
        half = 0.5 * (scale - 1)
        offset = (top + half, left + half)
    sector = raw.sector.scaled(scale, offset) if scale != 1.0 or offset != (0.0, 0.0) else raw.sector
    mask = sector.mask((th, tw)) & body_mask
    return Raster(minmax_in_sector(np.clip(resized, 0, 1), mask), out_spacing, sector, mask)


def _extend_sector(pixels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any() or mask.all():
        return pixels
    _, (ir, ic) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return pixels[ir, ic]


def _resize_to(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    if (h, w) == img.shape:
        return img.astype(np.float64)
    shrinking = h * w < img.shape[0] * img.shape[1]
    interp = cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR
    return cv2.resize(img.astype(np.float64), (w, h), interpolation=interp)


def _resize(img: np.ndarray, factor: float) -> np.ndarray:
    h = max(1, round(img.shape[0] * factor))
    w = max(1, round(img.shape[1] * factor))
    return _resize_to(img, (h, w))


def _check_kernel(k: int, name: str) -> None:
    if k < 3 or k % 2 == 0:
        raise InvalidInput(f"{name} kernel size must be odd and >= 3, got {k}")


def bilateral(pixels: np.ndarray, sigma_spatial: float = 15.0, sigma_range: float = 0.25) -> np.ndarray:
    """Bilateral filter with a circular spatial support truncated at 3 sigma.

    Borders are mirrored without repeating the edge pixel.
    """
    radius = int(np.ceil(3 * sigma_spatial))
    out = cv2.bilateralFilter(
        pixels.astype(np.float32), 2 * radius + 1, float(sigma_range), float(sigma_spatial),
        borderType=cv2.BORDER_REFLECT_101,
    )
    return out.astype(np.float64)


def laplacian(pixels: np.ndarray, ksize: int = 5) -> np.ndarray:
    return cv2.Laplacian(pixels.astype(np.float64), cv2.CV_64F, ksize=ksize, borderType=cv2.BORDER_REFLECT_101)


def filter(img: Raster, kind: str, **params) -> Raster:
    """Apply one of the named front-end filters, keeping geometry and sector zeros.

    kinds: ``bilateral`` (sigma_spatial=15, sigma_range=0.25), ``median``
    (ksize=9), ``laplacian`` (ksize=5; absolute response re-normalized to
    [0, 1]) and ``contrast_stretch`` (low=2, high=98 percentiles).
    """
    px = img.pixels
    mask = img.sector_mask
    if kind == "bilateral":
        out = bilateral(px, params.get("sigma_spatial", 15.0), params.get("sigma_range", 0.25))
        out = np.clip(out, 0, 1)
    elif kind == "median":
        k = params.get("ksize", 9)
        _check_kernel(k, "median")
        out = ndimage.median_filter(px, size=k, mode="mirror")
    elif kind == "laplacian":
        k = params.get("ksize", 5)
        _check_kernel(k, "laplacian")
        out = minmax_in_sector(np.abs(laplacian(px, k)), mask)
    elif kind == "contrast_stretch":
        lo_p, hi_p = params.get("low", 2.0), params.get("high", 98.0)
        vals = px[mask]
        if vals.size == 0:
            return img
        lo, hi = np.percentile(vals, [lo_p, hi_p])
        out = np.clip((px - lo) / (hi - lo), 0, 1) if hi > lo else np.zeros_like(px)
    else:
        raise InvalidInput(f"unknown filter kind {kind!r}")
    return img.with_pixels(out)
