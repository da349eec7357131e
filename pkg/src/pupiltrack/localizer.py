"""Per-frame pupil center estimation.

The coarse stage thresholds the darkest pixels, keeps the largest
4-connected blob and takes its centroid; the blob's padded bounding box is
the coarse region of interest (CRI).  The refined stage clusters the CRI
pixels on normalized (x, y, intensity) with competitive agglomeration and
returns the centroid of the darkest cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import caa
from .imaging import as_gray

__all__ = [
    "NoDarkRegion",
    "CoarseConfig",
    "Rect",
    "CoarseResult",
    "RefinedResult",
    "coarse_localize",
    "extract_features",
    "refine_localize",
    "localize",
]


class NoDarkRegion(Exception):
    """No usable dark region: closed eye, blank or saturated frame."""


@dataclass(frozen=True)
class CoarseConfig:
    dark_fraction: float = 0.05
    margin: int = 15
    min_region_size: int = 20


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    width: int
    height: int

    def contains(self, x: float, y: float) -> bool:
        return (self.x0 <= x <= self.x0 + self.width - 1
                and self.y0 <= y <= self.y0 + self.height - 1)

    def slices(self) -> tuple[slice, slice]:
        return (slice(self.y0, self.y0 + self.height),
                slice(self.x0, self.x0 + self.width))


@dataclass(frozen=True)
class CoarseResult:
    center: tuple[float, float]
    cri: Rect
    thresholded_pixel_count: int
    threshold: int


@dataclass(frozen=True)
class RefinedResult:
    center: tuple[float, float]
    cluster_count: int
    darkest_cluster_mean_intensity: float
    cri: Rect


def _dark_threshold(img: np.ndarray, fraction: float) -> tuple[np.ndarray, int]:
    """Mask of the pixels at or below the ``fraction`` intensity quantile.

    If the quantile is the brightest level present, only the strictly darker
    pixels are kept; otherwise the whole image would qualify.
    """
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    level = int(np.searchsorted(cdf, fraction * img.size))
    if level >= int(img.max()):
        return img < level, level
    return img <= level, level


def coarse_localize(img, cfg: CoarseConfig | None = None) -> CoarseResult:
    """Threshold + largest dark blob centroid + padded bounding box.

    Raises:
        NoDarkRegion: the kept blob has fewer than ``cfg.min_region_size`` pixels.
    """
    cfg = cfg or CoarseConfig()
    arr = as_gray(img)
    mask, level = _dark_threshold(arr, cfg.dark_fraction)
    if int(arr.min()) == int(arr.max()):
        raise NoDarkRegion("constant image")

    labels, n = ndimage.label(mask)  # default structure is 4-connectivity
    if n == 0:
        raise NoDarkRegion("no pixel below threshold")
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1
    count = int(sizes[best - 1])
    if count < cfg.min_region_size:
        raise NoDarkRegion(f"largest dark region has {count} pixels")

    ys, xs = np.nonzero(labels == best)
    cx, cy = float(xs.mean()), float(ys.mean())
    h, w = arr.shape
    x0 = max(int(xs.min()) - cfg.margin, 0)
    y0 = max(int(ys.min()) - cfg.margin, 0)
    x1 = min(int(xs.max()) + cfg.margin, w - 1)
    y1 = min(int(ys.max()) + cfg.margin, h - 1)
    return CoarseResult((cx, cy), Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1), count, level)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v, dtype=float)
    return (v - lo) / (hi - lo)


def extract_features(img, cri: Rect) -> np.ndarray:
    """(J, 3) array of normalized (x, y, intensity), rows in raster order."""
    arr = as_gray(img)
    h, w = arr.shape
    if cri.width < 1 or cri.height < 1:
        raise ValueError(f"degenerate CRI {cri}")
    if cri.x0 < 0 or cri.y0 < 0 or cri.x0 + cri.width > w or cri.y0 + cri.height > h:
        raise ValueError(f"CRI {cri} exceeds image {w}x{h}")
    patch = arr[cri.slices()].astype(float)
    ys, xs = np.mgrid[0 : cri.height, 0 : cri.width]
    return np.column_stack([
        _minmax(xs.ravel().astype(float)),
        _minmax(ys.ravel().astype(float)),
        _minmax(patch.ravel()),
    ])


def refine_localize(img, coarse: CoarseResult,
                    caa_cfg: caa.CAAConfig | None = None) -> RefinedResult:
    """Centroid of the darkest competitive-agglomeration cluster in the CRI."""
    cri = coarse.cri
    feats = extract_features(img, cri)
    state = caa.run(feats, caa_cfg)
    labels = caa.hard_labels(state)

    n = state.n_clusters
    counts = np.bincount(labels, minlength=n)
    sums = np.bincount(labels, weights=feats[:, 2], minlength=n)
    means = np.full(n, np.inf)
    nonempty = counts > 0
    means[nonempty] = sums[nonempty] / counts[nonempty]
    dark = int(np.argmin(means))  # lowest index wins ties

    members = labels == dark
    rows, cols = np.divmod(np.flatnonzero(members), cri.width)
    cx = cri.x0 + float(cols.mean())
    cy = cri.y0 + float(rows.mean())
    return RefinedResult((cx, cy), n, float(means[dark]), cri)


def localize(img, coarse_cfg: CoarseConfig | None = None,
             caa_cfg: caa.CAAConfig | None = None) -> tuple[CoarseResult, RefinedResult]:
    coarse = coarse_localize(img, coarse_cfg)
    return coarse, refine_localize(img, coarse, caa_cfg)
