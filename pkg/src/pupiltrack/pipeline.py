"""Per-sequence orchestration: detect every frame, optionally track, report."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import em, morphology, tracker
from .config import PipelineConfig
from .imaging import generate_sequence, load_sequence
from .localizer import NoDarkRegion, localize

__all__ = [
    "ZeroFramesError",
    "FrameRecord",
    "Trajectory",
    "MetricsReport",
    "detect_frame",
    "run",
    "compute_metrics",
    "write_csv",
    "read_csv",
    "write_plot_data",
    "write_metrics",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["frame", "x_det", "y_det", "miss", "x_trk", "y_trk", "x_gt", "y_gt", "ms"]


class ZeroFramesError(RuntimeError):
    """The input holds no frames."""


def _r6(v: float | None) -> float | None:
    # values are stored exactly as printed so the CSV round-trips
    return None if v is None else float(f"{v:.6f}")


@dataclass
class FrameRecord:
    frame: int
    det: tuple[float, float] | None = None
    trk: tuple[float, float] | None = None
    gt: tuple[float, float] | None = None
    ms: float | None = None

    @property
    def miss(self) -> bool:
        return self.det is None


@dataclass
class Trajectory:
    records: list[FrameRecord] = field(default_factory=list)
    tracked: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """(n, 2) array of det / trk / gt with NaN where absent."""
        out = np.full((len(self.records), 2), np.nan)
        for i, r in enumerate(self.records):
            v = getattr(r, name)
            if v is not None:
                out[i] = v
        return out

    @property
    def has_truth(self) -> bool:
        return any(r.gt is not None for r in self.records)


@dataclass
class MetricsReport:
    frames: int
    misses: int
    det_mae_x: float | None = None
    det_mae_y: float | None = None
    det_rmse_x: float | None = None
    det_rmse_y: float | None = None
    trk_mae_x: float | None = None
    trk_mae_y: float | None = None
    trk_rmse_x: float | None = None
    trk_rmse_y: float | None = None
    mean_ms: float | None = None
    p95_ms: float | None = None

    def lines(self) -> list[str]:
        out = []
        for k, v in asdict(self).items():
            if v is None:
                continue
            out.append(f"{k} = {v:.9g}" if isinstance(v, float) else f"{k} = {v}")
        return out


# ---------------------------------------------------------------------------

def _structuring(shape: str, radius: int) -> morphology.StructuringElement:
    return morphology.disk(radius) if shape == "disk" else morphology.square(radius)


def detect_frame(img, cfg: PipelineConfig) -> tuple[float, float] | None:
    """Preprocess + coarse + refined localization; ``None`` on a miss."""
    m = cfg.morphology
    pre = morphology.preprocess(
        img, _structuring(m.shape, m.close_radius), _structuring(m.shape, m.open_radius)
    )
    try:
        _, refined = localize(pre, cfg.coarse, cfg.caa)
    except NoDarkRegion as exc:
        log.debug("miss: %s", exc)
        return None
    return refined.center


def _timed_detect(img, cfg):
    t0 = time.perf_counter()
    c = detect_frame(img, cfg)
    return c, (time.perf_counter() - t0) * 1000.0


def _load_input(cfg: PipelineConfig):
    if cfg.source == "synthetic":
        frames, truth = generate_sequence(cfg.synth)
        return frames, truth
    frames = load_sequence(cfg.directory)
    return frames, None


def _fit_tracker_models(meas: np.ndarray, cfg: PipelineConfig):
    """Choose b, Q, R from the detections according to the tracker config."""
    tc = cfg.tracker
    dyn = tracker.DynamicsModel(Q=np.diag(tc.q), T=tc.T)
    obs = tracker.ObservationModel(R=np.diag(tc.r), b=0.0)
    valid = np.all(np.isfinite(meas), axis=1)
    em_ok = tc.covariances == "em" and valid.sum() >= 10

    if em_ok:
        Q, R = em.em_fit(meas, dyn, obs, tc.em_iterations, tc.p0, tc.em_warm_start)
        dyn, obs = tracker.DynamicsModel(Q=Q, T=tc.T), tracker.ObservationModel(R=R)

    if tc.b == "fit":
        # calibration prefix tracked with b = 0
        trk = tracker.PupilTracker(dyn, obs, tc.p0, gate=None)
        states, cs, prev = [], [], []
        for c in meas:
            if len(cs) >= tc.calibration_frames:
                break
            ok = bool(np.all(np.isfinite(c)))
            before = trk.obs.c_prev
            st = trk.step(tracker.Measurement(c) if ok else tracker.Measurement.missing())
            if ok and st is not None and before is not None:
                states.append(st.s)
                cs.append(c)
                prev.append(before)
        b = tracker.fit_b(states, cs, prev, b_max=tc.b_max) if cs else 0.0
    else:
        b = float(tc.b)

    obs = tracker.ObservationModel(R=obs.R, b=b)
    if em_ok and b != 0.0:
        Q, R = em.em_fit(meas, dyn, obs, tc.em_iterations, tc.p0, tc.em_warm_start)
        dyn, obs = tracker.DynamicsModel(Q=Q, T=tc.T), tracker.ObservationModel(R=R, b=b)
    log.info("tracker models: b=%g diag(Q)=%s diag(R)=%s", b, np.diag(dyn.Q), np.diag(obs.R))
    return dyn, obs


def run(cfg: PipelineConfig) -> tuple[Trajectory, MetricsReport]:
    """Process a whole sequence.

    Raises:
        ZeroFramesError: the input has no frames.
    """
    frames, truth = _load_input(cfg)
    if not frames:
        raise ZeroFramesError(f"no frames in {cfg.directory or 'synthetic input'}")

    if cfg.mode == "detect" and cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda f: _timed_detect(f, cfg), frames))
    else:
        results = [_timed_detect(f, cfg) for f in frames]

    traj = Trajectory(tracked=cfg.mode == "track")
    for k, (c, ms) in enumerate(results):
        traj.records.append(FrameRecord(
            frame=k,
            det=None if c is None else (_r6(c[0]), _r6(c[1])),
            gt=None if truth is None else (_r6(truth[k][0]), _r6(truth[k][1])),
            ms=_r6(ms) if cfg.timing else None,
        ))

    if cfg.mode == "track":
        meas = np.array([(np.nan, np.nan) if c is None else c for c, _ in results], float)
        dyn, obs = _fit_tracker_models(meas, cfg)
        gate = tracker.CHI2_GATE_99 if cfg.tracker.gate else None
        trk = tracker.PupilTracker(dyn, obs, cfg.tracker.p0, gate)
        for rec, c in zip(traj.records, meas):
            ok = bool(np.all(np.isfinite(c)))
            st = trk.step(tracker.Measurement(c) if ok else tracker.Measurement.missing())
            if st is not None:
                rec.trk = (_r6(st.s[0]), _r6(st.s[2]))

    return traj, compute_metrics(traj)


def _axis_errors(est: np.ndarray, gt: np.ndarray):
    ok = np.all(np.isfinite(est), axis=1) & np.all(np.isfinite(gt), axis=1)
    if not ok.any():
        return None, None, None, None
    e = np.abs(est[ok] - gt[ok])
    mae = e.mean(axis=0)
    rmse = np.sqrt((e**2).mean(axis=0))
    return float(mae[0]), float(mae[1]), float(rmse[0]), float(rmse[1])


def compute_metrics(traj: Trajectory) -> MetricsReport:
    rep = MetricsReport(frames=len(traj), misses=sum(r.miss for r in traj.records))
    if traj.has_truth:
        gt = traj.column("gt")
        rep.det_mae_x, rep.det_mae_y, rep.det_rmse_x, rep.det_rmse_y = _axis_errors(
            traj.column("det"), gt)
        if traj.tracked:
            rep.trk_mae_x, rep.trk_mae_y, rep.trk_rmse_x, rep.trk_rmse_y = _axis_errors(
                traj.column("trk"), gt)
    ms = [r.ms for r in traj.records if r.ms is not None]
    if ms:
        rep.mean_ms = float(np.mean(ms))
        rep.p95_ms = float(np.percentile(ms, 95))
    return rep


# ---------------------------------------------------------------------------
# Output

def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.6f}"


def write_csv(traj: Trajectory, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in traj.records:
            det = r.det or (None, None)
            trk = r.trk or (None, None)
            gt = r.gt or (None, None)
            w.writerow([r.frame, _fmt(det[0]), _fmt(det[1]), int(r.miss),
                        _fmt(trk[0]), _fmt(trk[1]), _fmt(gt[0]), _fmt(gt[1]), _fmt(r.ms)])


def read_csv(path: str | os.PathLike) -> Trajectory:
    """Parse a trajectory written by :func:`write_csv`."""
    def pair(row, a, b):
        if row[a] == "" or row[b] == "":
            return None
        return float(row[a]), float(row[b])

    traj = Trajectory()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            rec = FrameRecord(
                frame=int(row["frame"]),
                det=pair(row, "x_det", "y_det"),
                trk=pair(row, "x_trk", "y_trk"),
                gt=pair(row, "x_gt", "y_gt"),
                ms=float(row["ms"]) if row["ms"] else None,
            )
            traj.records.append(rec)
    traj.tracked = any(r.trk is not None for r in traj.records)
    return traj


def write_plot_data(traj: Trajectory, path: str | os.PathLike) -> list[Path]:
    """Write ``<stem>_x.dat`` and ``<stem>_y.dat`` whitespace-separated series.

    Columns: frame, truth (if known), detection, tracked (track mode only);
    absent values are ``nan``.
    """
    base = Path(path)
    stem = base.with_suffix("") if base.suffix else base
    cols = []
    if traj.has_truth:
        cols.append(("truth", traj.column("gt")))
    cols.append(("detection", traj.column("det")))
    if traj.tracked:
        cols.append(("tracked", traj.column("trk")))

    paths = []
    for axis, name in ((0, "x"), (1, "y")):
        p = Path(f"{stem}_{name}.dat")
        with open(p, "w") as fh:
            fh.write("# frame " + " ".join(c for c, _ in cols) + "\n")
            for i, r in enumerate(traj.records):
                vals = []
                for _, arr in cols:
                    v = arr[i, axis]
                    vals.append("nan" if math.isnan(v) else f"{v:.6f}")
                fh.write(f"{r.frame} " + " ".join(vals) + "\n")
        paths.append(p)
    return paths


def write_metrics(rep: MetricsReport, path: str | os.PathLike) -> None:
    Path(path).write_text("\n".join(rep.lines()) + "\n")
