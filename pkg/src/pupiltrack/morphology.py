"""Flat grayscale morphology with edge-replicating borders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import as_gray

__all__ = [
    "StructuringElement",
    "disk",
    "square",
    "erode",
    "dilate",
    "opening",
    "closing",
    "preprocess",
]


@dataclass(frozen=True)
class StructuringElement:
    """Flat binary mask whose anchor is the central element.

    ``mask`` has odd side lengths so the anchor sits at its center; the
    mask must be point-symmetric about the anchor and contain it.
    """

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or m.shape[0] % 2 == 0 or m.shape[1] % 2 == 0:
            raise ValueError("mask must be 2-D with odd side lengths")
        if not m[m.shape[0] // 2, m.shape[1] // 2]:
            raise ValueError("mask must contain its anchor")
        if not np.array_equal(m, m[::-1, ::-1]):
            raise ValueError("mask must be symmetric about its anchor")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def half_size(self) -> tuple[int, int]:
        return self.mask.shape[0] // 2, self.mask.shape[1] // 2

    def offsets(self) -> list[tuple[int, int]]:
        """(drow, dcol) of every mask element relative to the anchor."""
        hr, hc = self.half_size
        return [(int(r) - hr, int(c) - hc) for r, c in zip(*np.nonzero(self.mask))]


def disk(radius: int) -> StructuringElement:
    r = int(radius)
    if r < 0:
        raise ValueError("radius must be >= 0")
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return StructuringElement(xx * xx + yy * yy <= r * r)


def square(half_width: int) -> StructuringElement:
    h = int(half_width)
    if h < 0:
        raise ValueError("half_width must be >= 0")
    return StructuringElement(np.ones((2 * h + 1, 2 * h + 1), dtype=bool))


def _rank(img, se: StructuringElement, reduce) -> np.ndarray:
    arr = as_gray(img)
    hr, hc = se.half_size
    padded = np.pad(arr, ((hr, hr), (hc, hc)), mode="edge")
    h, w = arr.shape
    out = None
    for dr, dc in se.offsets():
        view = padded[hr + dr : hr + dr + h, hc + dc : hc + dc + w]
        if out is None:
            out = view.copy()
        else:
            reduce(out, view, out=out)
    return out


def erode(img, se: StructuringElement) -> np.ndarray:
    """Minimum of ``img`` over the mask placed at each pixel."""
    return _rank(img, se, np.minimum)


def dilate(img, se: StructuringElement) -> np.ndarray:
    """Maximum of ``img`` over the mask placed at each pixel."""
    return _rank(img, se, np.maximum)


def opening(img, se: StructuringElement) -> np.ndarray:
    return dilate(erode(img, se), se)


def closing(img, se: StructuringElement) -> np.ndarray:
    return erode(dilate(img, se), se)


def preprocess(img, se_close: StructuringElement | None = None,
               se_open: StructuringElement | None = None) -> np.ndarray:
    """Suppress eyelashes (closing) and then specular highlights (opening).

    Both elements default to a radius-3 disk.
    """
    se_close = disk(3) if se_close is None else se_close
    se_open = disk(3) if se_open is None else se_open
    return opening(closing(img, se_close), se_open)
