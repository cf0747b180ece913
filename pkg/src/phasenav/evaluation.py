"""Trajectory accuracy metrics: absolute and relative pose error.

Trajectories are timestamped position + attitude sequences. Pairs are
associated by nearest timestamp within a 10 ms window. The absolute
error is reported as the RMS of paired position errors; the relative
error compares translation (and rotation, in degrees) of pose
increments over a fixed index offset, which makes it invariant to any
rigid transform applied to a whole trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import quat
from .util import csv_rows

ASSOCIATION_WINDOW = 0.010  # s


@dataclass(eq=False)
class TrajectoryRecord:
    times: np.ndarray
    positions: np.ndarray    # (N, 3)
    quaternions: np.ndarray  # (N, 4) scalar-first body-to-world

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.quaternions = np.asarray(self.quaternions, dtype=float)
        n = self.times.size
        if self.positions.shape != (n, 3) or self.quaternions.shape != (n, 4):
            raise ValueError("need one position and quaternion per timestamp")
        if n >= 2 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def to_csv(self, path) -> None:
        """Rows ``t,px,py,pz,qw,qx,qy,qz``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])
            for t, p, q in zip(self.times, self.positions, self.quaternions):
                writer.writerow(
                    [repr(float(t))]
                    + [repr(float(v)) for v in p]
                    + [repr(float(v)) for v in q]
                )

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        times, positions, quaternions = [], [], []
        for row in csv_rows(path):
            if row[0] == "t":
                continue
            vals = [float(v) for v in row]
            times.append(vals[0])
            positions.append(vals[1:4])
            quaternions.append(vals[4:8])
        if not times:
            raise ValueError("empty trajectory file")
        return cls(
            times=np.array(times),
            positions=np.array(positions),
            quaternions=np.array(quaternions),
        )


def associate(
    est: TrajectoryRecord,
    ref: TrajectoryRecord,
    window: float = ASSOCIATION_WINDOW,
) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (est_idx, ref_idx) matched by nearest timestamp.

    Raises:
        ValueError: no pair falls within the window.
    """
    ref_times = ref.times
    est_idx, ref_idx = [], []
    for i, t in enumerate(est.times):
        j = int(np.searchsorted(ref_times, t))
        best, best_dt = None, window
        for cand in (j - 1, j):
            if 0 <= cand < ref_times.size:
                dt = abs(ref_times[cand] - t)
                if dt <= best_dt:
                    best, best_dt = cand, dt
        if best is not None:
            est_idx.append(i)
            ref_idx.append(best)
    if not est_idx:
        raise ValueError("no timestamp pairs within the association window")
    return np.array(est_idx), np.array(ref_idx)


def ate(est: TrajectoryRecord, ref: TrajectoryRecord) -> float:
    """Root-mean-square paired position error in meters."""
    ei, ri = associate(est, ref)
    diffs = est.positions[ei] - ref.positions[ri]
    return float(np.sqrt(np.mean(np.sum(diffs**2, axis=1))))


def _relative_pose(positions, quaternions, i, j):
    rot_i = quat.to_rotation_matrix(quaternions[i])
    trans = rot_i.T @ (positions[j] - positions[i])
    rel_q = quat.multiply(quat.conjugate(quaternions[i]), quaternions[j])
    return trans, rel_q


def rpe_trans(est: TrajectoryRecord, ref: TrajectoryRecord, delta: int = 1) -> tuple[float, float]:
    """Mean relative pose error over an index offset of ``delta``.

    Returns (translation error in meters, rotation error in degrees),
    averaged over the N - delta associated pose increments.

    Raises:
        ValueError: delta < 1 or not enough associated pairs.
    """
    if delta < 1:
        raise ValueError("delta must be at least 1")
    ei, ri = associate(est, ref)
    n = ei.size
    if n <= delta:
        raise ValueError("trajectory shorter than the evaluation offset")
    t_errs = np.empty(n - delta)
    r_errs = np.empty(n - delta)
    for a in range(n - delta):
        b = a + delta
        t_ref, q_ref = _relative_pose(ref.positions, ref.quaternions, ri[a], ri[b])
        t_est, q_est = _relative_pose(est.positions, est.quaternions, ei[a], ei[b])
        t_errs[a] = np.linalg.norm(t_ref - t_est)
        rel = quat.multiply(quat.conjugate(q_ref), q_est)
        r_errs[a] = np.degrees(quat.rotation_angle(rel))
    return float(t_errs.mean()), float(r_errs.mean())


def export_cdf(errors, path) -> None:
    """Write ``error,fraction`` rows: sorted values against k/N."""
    errors = np.sort(np.asarray(errors, dtype=float))
    if errors.size == 0:
        raise ValueError("no errors to export")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error", "fraction"])
        for i, e in enumerate(errors, 1):
            writer.writerow([repr(float(e)), repr(i / errors.size)])


def write_metrics_report(path, metrics: dict) -> None:
    """Key-value report, one ``name value`` line per metric."""
    with open(path, "w") as fh:
        for key, value in metrics.items():
            fh.write(f"{key} {value}\n")


def format_metrics(metrics: dict) -> str:
    return "".join(f"{key} {value}\n" for key, value in metrics.items())
