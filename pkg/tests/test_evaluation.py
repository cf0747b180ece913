import numpy as np
import pytest

from phasenav import quat
from phasenav.evaluation import (
    TrajectoryRecord,
    associate,
    ate,
    export_cdf,
    format_metrics,
    rpe_trans,
    write_metrics_report,
)
from phasenav.util import csv_rows


def random_record(rng, n=20, t0=0.0):
    times = t0 + np.arange(n) * 0.1
    positions = rng.normal(0.0, 5.0, size=(n, 3))
    quaternions = np.array([quat.normalize(rng.normal(size=4)) for _ in range(n)])
    return TrajectoryRecord(times=times, positions=positions, quaternions=quaternions)


def rigid_transform(record, rotvec, translation):
    """Apply one world-frame rigid transform to every pose."""
    q_r = quat.from_rotvec(rotvec)
    rot = quat.to_rotation_matrix(q_r)
    return TrajectoryRecord(
        times=record.times.copy(),
        positions=record.positions @ rot.T + np.asarray(translation),
        quaternions=np.array([quat.multiply(q_r, q) for q in record.quaternions]),
    )


def brute_force_ate(est, ref):
    return float(np.sqrt(np.mean(
        [np.sum((pe - pr) ** 2) for pe, pr in zip(est.positions, ref.positions)]
    )))


def brute_force_rpe(est, ref, delta):
    t_errs, r_errs = [], []
    for i in range(len(ref) - delta):
        j = i + delta
        rot_ref = quat.to_rotation_matrix(ref.quaternions[i])
        rot_est = quat.to_rotation_matrix(est.quaternions[i])
        dt_ref = rot_ref.T @ (ref.positions[j] - ref.positions[i])
        dt_est = rot_est.T @ (est.positions[j] - est.positions[i])
        t_errs.append(np.linalg.norm(dt_ref - dt_est))
        dq_ref = quat.multiply(quat.conjugate(ref.quaternions[i]), ref.quaternions[j])
        dq_est = quat.multiply(quat.conjugate(est.quaternions[i]), est.quaternions[j])
        rel = quat.multiply(quat.conjugate(dq_ref), dq_est)
        r_errs.append(np.degrees(quat.rotation_angle(rel)))
    return float(np.mean(t_errs)), float(np.mean(r_errs))


def test_trajectory_record_validation():
    with pytest.raises(ValueError):
        TrajectoryRecord(times=[0.0, 1.0], positions=np.zeros((3, 3)),
                         quaternions=np.tile([1.0, 0, 0, 0], (2, 1)))
    with pytest.raises(ValueError, match="strictly increasing"):
        TrajectoryRecord(times=[0.0, 0.0], positions=np.zeros((2, 3)),
                         quaternions=np.tile([1.0, 0, 0, 0], (2, 1)))


def test_trajectory_csv_round_trip(tmp_path, rng):
    record = random_record(rng, n=7)
    path = tmp_path / "traj.csv"
    record.to_csv(path)
    back = TrajectoryRecord.from_csv(path)
    assert np.array_equal(back.times, record.times)
    assert np.array_equal(back.positions, record.positions)
    assert np.array_equal(back.quaternions, record.quaternions)
    empty = tmp_path / "empty.csv"
    empty.write_text("t,px,py,pz,qw,qx,qy,qz\n")
    with pytest.raises(ValueError, match="empty trajectory"):
        TrajectoryRecord.from_csv(empty)


def test_associate_nearest_within_window(rng):
    ref = random_record(rng, n=10)
    # shift est timestamps by 4 ms: still within the 10 ms window
    est = TrajectoryRecord(times=ref.times + 0.004, positions=ref.positions,
                           quaternions=ref.quaternions)
    ei, ri = associate(est, ref)
    assert np.array_equal(ei, np.arange(10))
    assert np.array_equal(ri, np.arange(10))
    # a 50 ms shift exceeds the window everywhere
    far = TrajectoryRecord(times=ref.times + 0.05, positions=ref.positions,
                           quaternions=ref.quaternions)
    with pytest.raises(ValueError, match="association window"):
        associate(far, ref)


def test_ate_matches_brute_force(rng):
    for _ in range(10):
        ref = random_record(rng)
        est = TrajectoryRecord(times=ref.times,
                               positions=ref.positions + rng.normal(0.0, 0.3, ref.positions.shape),
                               quaternions=ref.quaternions)
        assert ate(est, ref) == pytest.approx(brute_force_ate(est, ref), abs=1e-12)


def test_ate_zero_on_identical(rng):
    ref = random_record(rng)
    assert ate(ref, ref) == 0.0


def test_ate_common_translation_invariance(rng):
    ref = random_record(rng)
    est = TrajectoryRecord(times=ref.times,
                           positions=ref.positions + rng.normal(0.0, 0.5, ref.positions.shape),
                           quaternions=ref.quaternions)
    shift = np.array([10.0, -4.0, 2.0])
    ref_shifted = TrajectoryRecord(times=ref.times, positions=ref.positions + shift,
                                   quaternions=ref.quaternions)
    est_shifted = TrajectoryRecord(times=est.times, positions=est.positions + shift,
                                   quaternions=est.quaternions)
    assert ate(est_shifted, ref_shifted) == pytest.approx(ate(est, ref), abs=1e-12)


def test_rpe_matches_brute_force(rng):
    for delta in (1, 3):
        ref = random_record(rng, n=15)
        est = TrajectoryRecord(
            times=ref.times,
            positions=ref.positions + rng.normal(0.0, 0.2, ref.positions.shape),
            quaternions=np.array([
                quat.normalize(q + rng.normal(0.0, 0.01, 4)) for q in ref.quaternions
            ]),
        )
        got = rpe_trans(est, ref, delta=delta)
        want = brute_force_rpe(est, ref, delta)
        assert got[0] == pytest.approx(want[0], abs=1e-12)
        assert got[1] == pytest.approx(want[1], abs=1e-12)


def test_rpe_rigid_transform_invariance(rng):
    ref = random_record(rng, n=12)
    est = TrajectoryRecord(
        times=ref.times,
        positions=ref.positions + rng.normal(0.0, 0.2, ref.positions.shape),
        quaternions=np.array([
            quat.normalize(q + rng.normal(0.0, 0.01, 4)) for q in ref.quaternions
        ]),
    )
    base = rpe_trans(est, ref)
    moved = rigid_transform(est, [0.3, -0.2, 0.9], [100.0, 50.0, -20.0])
    after = rpe_trans(moved, ref)
    assert after[0] == pytest.approx(base[0], abs=1e-9)
    assert after[1] == pytest.approx(base[1], abs=1e-9)


def test_rpe_validation(rng):
    ref = random_record(rng, n=5)
    with pytest.raises(ValueError, match="delta"):
        rpe_trans(ref, ref, delta=0)
    with pytest.raises(ValueError, match="shorter than"):
        rpe_trans(ref, ref, delta=5)


def test_export_cdf(tmp_path):
    path = tmp_path / "cdf.csv"
    export_cdf([3.0, 1.0, 2.0], path)
    rows = csv_rows(path)
    assert rows[0] == ["error", "fraction"]
    assert [float(r[0]) for r in rows[1:]] == [1.0, 2.0, 3.0]
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([1 / 3, 2 / 3, 1.0])
    with pytest.raises(ValueError):
        export_cdf([], tmp_path / "none.csv")


def test_metrics_report(tmp_path):
    metrics = {"ate_m": 0.25, "rpe_t_m": 0.01}
    text = format_metrics(metrics)
    assert text == "ate_m 0.25\nrpe_t_m 0.01\n"
    path = tmp_path / "metrics.txt"
    write_metrics_report(path, metrics)
    assert path.read_text() == text
