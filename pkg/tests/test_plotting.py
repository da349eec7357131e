import matplotlib.image as mpimg

from pupiltrack.pipeline import FrameRecord, Trajectory
from pupiltrack.plotting import plot_trajectory


def _traj(with_truth, tracked):
    recs = []
    for k in range(10):
        gt = (k + 0.0, 2 * k + 0.0) if with_truth else None
        det = None if k == 4 else (k + 0.1, 2 * k - 0.1)
        trk = (k + 0.05, 2 * k - 0.02) if tracked else None
        recs.append(FrameRecord(k, det, trk, gt, 1.0))
    return Trajectory(recs, tracked=tracked)


def test_figures_written(tmp_path):
    paths = plot_trajectory(_traj(True, True), tmp_path)
    assert [p.name for p in paths] == ["trajectory_x.png", "trajectory_y.png"]
    tall = mpimg.imread(paths[0])
    flat = mpimg.imread(plot_trajectory(_traj(False, False), tmp_path, stem="bare")[0])
    # the error panel only appears when truth is known
    assert tall.shape[0] > flat.shape[0]
