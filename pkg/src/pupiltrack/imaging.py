"""Grayscale images, binary PGM I/O and a synthetic eye-sequence generator.

Images are plain 2-D ``numpy.uint8`` arrays indexed ``[row, col]``.  Pixel
``(row, col)`` has its center at image coordinate ``(x, y) = (col, row)``,
which is the convention used by every centroid and ground-truth value in
the package.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PGMError",
    "BadMagicError",
    "MaxvalError",
    "TruncatedPayloadError",
    "SynthConfigError",
    "SynthConfig",
    "as_gray",
    "load_pgm",
    "save_pgm",
    "generate_sequence",
    "save_sequence",
    "load_sequence",
]


class PGMError(ValueError):
    """Malformed PGM file."""


class BadMagicError(PGMError):
    pass


class MaxvalError(PGMError):
    pass


class TruncatedPayloadError(PGMError):
    pass


class SynthConfigError(ValueError):
    """Synthetic sequence configuration violates an invariant."""


def as_gray(img) -> np.ndarray:
    """Validate ``img`` as a non-empty 2-D 8-bit image and return it as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


# ---------------------------------------------------------------------------
# PGM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


def _read_header(data: bytes) -> tuple[int, int, int, int]:
    if data[:2] != b"P5":
        raise BadMagicError(f"bad magic {data[:2]!r}, expected b'P5'")
    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise TruncatedPayloadError(f"header ends before {name}")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise PGMError(f"non-integer {name} {m.group(1)!r}") from None
        pos = m.end()
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise TruncatedPayloadError("missing whitespace after maxval")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PGMError(f"invalid dimensions {width}x{height}")
    if maxval > 255 or maxval < 1:
        raise MaxvalError(f"maxval {maxval} not in [1, 255]")
    return width, height, maxval, pos + 1


def load_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary (P5) PGM file with maxval <= 255.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        BadMagicError: the file is not P5.
        MaxvalError: maxval exceeds 255.
        TruncatedPayloadError: fewer raster bytes than ``width * height``.
    """
    data = Path(path).read_bytes()
    width, height, _, offset = _read_header(data)
    payload = data[offset : offset + width * height]
    if len(payload) < width * height:
        raise TruncatedPayloadError(
            f"expected {width * height} pixel bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def save_pgm(img, path: str | os.PathLike) -> None:
    """Write ``img`` as binary P5 with maxval 255."""
    arr = as_gray(img)
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def save_sequence(frames, out_dir: str | os.PathLike) -> list[Path]:
    """Write frames as ``frame_0000.pgm``, ``frame_0001.pgm``, ... in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(frames):
        p = out / f"frame_{k:04d}.pgm"
        save_pgm(frame, p)
        paths.append(p)
    return paths


def load_sequence(in_dir: str | os.PathLike) -> list[np.ndarray]:
    """Load every ``frame_*.pgm`` of a directory in frame-number order."""
    paths = sorted(Path(in_dir).glob("frame_*.pgm"))
    return [load_pgm(p) for p in paths]


# ---------------------------------------------------------------------------
# Synthetic sequences

@dataclass(frozen=True)
class SynthConfig:
    width: int = 640
    height: int = 480
    frame_count: int = 100
    pupil_radius: float = 72.0
    iris_radius: float = 140.0
    pupil_intensity: float = 30.0
    iris_intensity: float = 110.0
    background_intensity: float = 190.0
    initial_center: tuple[float, float] = (320.0, 240.0)
    velocity: tuple[float, float] = (0.37, -0.21)
    noise_sigma: float = 0.0
    specular_spot_count: int = 0
    specular_spot_radius: float = 2.0
    specular_intensity: float = 250.0
    eyelash_streak_count: int = 0
    seed: int = 0

    def centers(self) -> np.ndarray:
        k = np.arange(self.frame_count, dtype=float)[:, None]
        return np.asarray(self.initial_center, float) + k * np.asarray(self.velocity, float)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SynthConfigError("image dimensions must be positive")
        if self.frame_count < 1:
            raise SynthConfigError("frame_count must be >= 1")
        if self.pupil_radius <= 0 or self.iris_radius <= self.pupil_radius:
            raise SynthConfigError("need 0 < pupil_radius < iris_radius")
        if not (
            0 <= self.pupil_intensity < self.iris_intensity < self.background_intensity <= 255
        ):
            raise SynthConfigError("need pupil < iris < background intensities within [0, 255]")
        if self.noise_sigma < 0:
            raise SynthConfigError("noise_sigma must be >= 0")
        if self.specular_spot_count < 0 or self.eyelash_streak_count < 0:
            raise SynthConfigError("artifact counts must be >= 0")
        c = self.centers()
        r = self.pupil_radius
        inside = (
            (c[:, 0] >= r) & (c[:, 0] <= self.width - 1 - r)
            & (c[:, 1] >= r) & (c[:, 1] <= self.height - 1 - r)
        )
        if not inside.all():
            k = int(np.argmin(inside))
            raise SynthConfigError(
                f"pupil leaves the frame at frame {k} (center {tuple(c[k])})"
            )


_SUB = (np.arange(4) - 1.5) / 4.0  # 4x4 supersampling offsets


def _disk_coverage(shape, cx: float, cy: float, radius: float) -> np.ndarray:
    """Fraction of each pixel's area inside a disk, by 4x4 supersampling.

    Only pixels within one pixel diagonal of the rim are supersampled.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.hypot(xs - cx, ys - cy)
    cov = (d <= radius - 0.75).astype(float)
    rim = np.abs(d - radius) < 0.75
    if rim.any():
        ry, rx = np.nonzero(rim)
        sx = rx[:, None, None] + _SUB[None, None, :]
        sy = ry[:, None, None] + _SUB[None, :, None]
        inside = (sx - cx) ** 2 + (sy - cy) ** 2 <= radius * radius
        cov[ry, rx] = inside.reshape(len(ry), -1).mean(axis=1)
    return cov


def _segment_mask(shape, p0, p1, width: float) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    (x0, y0), (x1, y1) = p0, p1
    vx, vy = x1 - x0, y1 - y0
    t = ((xs - x0) * vx + (ys - y0) * vy) / max(vx * vx + vy * vy, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    d = np.hypot(xs - (x0 + t * vx), ys - (y0 + t * vy))
    return d <= width / 2.0


def _render(cfg: SynthConfig, center, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.height, cfg.width)
    cx, cy = center
    img = np.full(shape, float(cfg.background_intensity))
    iris = _disk_coverage(shape, cx, cy, cfg.iris_radius)
    img += (cfg.iris_intensity - img) * iris
    pupil = _disk_coverage(shape, cx, cy, cfg.pupil_radius)
    img += (cfg.pupil_intensity - img) * pupil

    ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width]
    for _ in range(cfg.specular_spot_count):
        # uniform over the iris disk (pupil included), kept clear of the limbus
        rmax = max(cfg.iris_radius - cfg.specular_spot_radius, 0.0)
        rho = rmax * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        sx, sy = cx + rho * np.cos(phi), cy + rho * np.sin(phi)
        spot = (xs - sx) ** 2 + (ys - sy) ** 2 <= cfg.specular_spot_radius ** 2
        img[spot] = cfg.specular_intensity

    half = cfg.height / 2.0
    for _ in range(cfg.eyelash_streak_count):
        top = (rng.uniform(0, cfg.width - 1), rng.uniform(0, half / 2))
        bottom = (top[0] + rng.uniform(-40, 40), rng.uniform(half / 2, half))
        width = rng.uniform(1.0, 2.0)
        img[_segment_mask(shape, top, bottom, width)] = cfg.pupil_intensity

    if cfg.noise_sigma > 0:
        img += rng.normal(0.0, cfg.noise_sigma, shape)
    return np.rint(np.clip(img, 0, 255)).astype(np.uint8)


def generate_sequence(cfg: SynthConfig) -> tuple[list[np.ndarray], np.ndarray]:
    """Render a synthetic eye sequence with a known pupil trajectory.

    Returns:
        frames: ``cfg.frame_count`` uint8 images.
        truth: ``(frame_count, 2)`` array of true ``(x, y)`` pupil centers.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    truth = cfg.centers()
    frames = [_render(cfg, c, rng) for c in truth]
    return frames, truth
