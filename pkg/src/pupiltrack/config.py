"""Pipeline configuration read from sectioned ``key = value`` files.

Example::

    [input]
    source = synthetic          ; or: directory
    directory = frames/         ; used when source = directory

    [synth]
    frame_count = 100
    noise_sigma = 8
    velocity = 0.37, -0.21

    [run]
    mode = track                ; detect | track
    seed = 0

    [tracker]
    b = fit                     ; or a number
    covariances = em            ; or: fixed (uses q / r below)
    q = 0.01, 0.01, 0.01, 0.01
    r = 1, 1

Unknown sections or keys are rejected so typos do not silently fall back
to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .caa import CAAConfig
from .imaging import SynthConfig, SynthConfigError
from .localizer import CoarseConfig

__all__ = ["ConfigError", "MorphologyConfig", "TrackerConfig", "PipelineConfig", "load_config",
           "parse_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


@dataclass(frozen=True)
class MorphologyConfig:
    close_radius: int = 3
    open_radius: int = 3
    shape: str = "disk"  # disk | square


@dataclass(frozen=True)
class TrackerConfig:
    T: float = 1.0
    b: float | str = "fit"
    b_max: float = 0.05
    calibration_frames: int = 50
    covariances: str = "em"  # em | fixed
    q: tuple[float, ...] = (0.01, 0.01, 0.01, 0.01)
    r: tuple[float, ...] = (1.0, 1.0)
    p0: tuple[float, ...] = (4.0, 25.0, 4.0, 25.0)
    gate: bool = True
    em_iterations: int = 20
    em_warm_start: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    source: str = "synthetic"  # synthetic | directory
    directory: Path | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    mode: str = "detect"  # detect | track
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    caa: CAAConfig = field(default_factory=CAAConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    out_dir: Path = Path("out")
    timing: bool = True
    plots: bool = True
    workers: int = 1

    def with_overrides(self, mode: str | None = None, out_dir=None,
                       seed: int | None = None) -> PipelineConfig:
        cfg = self
        if mode is not None:
            cfg = dataclasses.replace(cfg, mode=mode)
        if out_dir is not None:
            cfg = dataclasses.replace(cfg, out_dir=Path(out_dir))
        if seed is not None:
            cfg = dataclasses.replace(
                cfg,
                synth=dataclasses.replace(cfg.synth, seed=seed),
                caa=dataclasses.replace(cfg.caa, seed=seed),
            )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.source not in ("synthetic", "directory"):
            raise ConfigError(f"input source must be synthetic or directory, not {self.source!r}")
        if self.source == "directory":
            if self.directory is None:
                raise ConfigError("source = directory needs [input] directory")
            if not Path(self.directory).is_dir():
                raise ConfigError(f"input directory {self.directory} does not exist")
        if self.source == "synthetic":
            try:
                self.synth.validate()
            except SynthConfigError as exc:
                raise ConfigError(f"[synth] {exc}") from None
        if self.mode not in ("detect", "track"):
            raise ConfigError(f"mode must be detect or track, not {self.mode!r}")
        if self.morphology.shape not in ("disk", "square"):
            raise ConfigError("morphology shape must be disk or square")
        if self.morphology.close_radius < 0 or self.morphology.open_radius < 0:
            raise ConfigError("structuring element radii must be >= 0")
        if not 0 < self.coarse.dark_fraction < 1:
            raise ConfigError("dark_fraction must lie in (0, 1)")
        t = self.tracker
        if t.covariances not in ("em", "fixed"):
            raise ConfigError("covariances must be em or fixed")
        if not (t.b == "fit" or (isinstance(t.b, (int, float)) and t.b >= 0)):
            raise ConfigError("b must be 'fit' or a number >= 0")
        if len(t.q) != 4 or len(t.r) != 2 or len(t.p0) != 4:
            raise ConfigError("q and p0 need 4 values, r needs 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(template, key: str, text: str):
    """Convert ``text`` to the type of ``template``'s default for ``key``."""
    fields = {f.name: f for f in dataclasses.fields(template)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r}")
    current = getattr(template, key)
    if key == "b":
        return "fit" if text.strip() == "fit" else float(text)
    if key == "cardinality_epsilon":
        return None if text.strip() in ("", "auto") else float(text)
    if isinstance(current, bool):
        return _bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return _floats(text)
    return text.strip()


def _section(parser, name: str, template):
    if not parser.has_section(name):
        return template
    changes = {}
    for key, text in parser.items(name):
        try:
            changes[key] = _coerce(template, key, text)
        except ConfigError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return dataclasses.replace(template, **changes)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


_SECTIONS = {"input", "synth", "run", "morphology", "coarse", "caa", "tracker", "output"}


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    base = Path(base_dir)
    cfg = PipelineConfig()
    top = {}
    allowed = {
        "input": {"source", "directory"},
        "run": {"mode", "seed", "timing", "workers"},
        "output": {"out_dir", "plots"},
    }
    seed = None
    for name, keys in allowed.items():
        if not parser.has_section(name):
            continue
        for key, value in parser.items(name):
            if key not in keys:
                raise ConfigError(f"[{name}] unknown key {key!r}")
            value = value.strip()
            try:
                if key in ("directory", "out_dir"):
                    p = Path(value)
                    top[key] = p if p.is_absolute() else base / p
                elif key == "seed":
                    seed = int(value)
                elif key in ("timing", "plots"):
                    top[key] = _bool(value)
                elif key == "workers":
                    top[key] = int(value)
                else:
                    top[key] = value
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from None

    synth = _section(parser, "synth", cfg.synth)
    if parser.has_section("synth"):
        for key in ("initial_center", "velocity"):
            if len(getattr(synth, key)) != 2:
                raise ConfigError(f"[synth] {key} needs two values")
    cfg = dataclasses.replace(
        cfg,
        synth=synth,
        morphology=_section(parser, "morphology", cfg.morphology),
        coarse=_section(parser, "coarse", cfg.coarse),
        caa=_section(parser, "caa", cfg.caa),
        tracker=_section(parser, "tracker", cfg.tracker),
        **top,
    )
    return cfg.with_overrides(seed=seed)


def load_config(path: str | os.PathLike) -> PipelineConfig:
    """Read a configuration file; relative paths resolve against its directory."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, p.parent)
