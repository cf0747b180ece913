import numpy as np
import pytest

from phasenav.classifier import ArchConfig, init_params
from phasenav.positioning import (
    LocalizeConfig,
    PositionFix,
    error_statistics,
    invalid_fix,
    localize_epoch,
    trilaterate,
    write_fix_log,
)
from phasenav.ranging import RangeEstimate
from phasenav.scenario import TrpSite
from phasenav.signal import SubcarrierFrame, comb_mask
from phasenav.util import SPEED_OF_LIGHT, csv_rows

SITES = [
    TrpSite("A", [0.0, 0.0, 10.0]),
    TrpSite("B", [60.0, 0.0, 10.0]),
    TrpSite("C", [0.0, 60.0, 10.0]),
    TrpSite("D", [60.0, 60.0, 10.0]),
]
UE = np.array([21.0, 34.0, 1.5])


def make_range(distance, trp_id, lam=1665.0):
    """RangeEstimate satisfying the phase/cycle reconstruction invariant."""
    return RangeEstimate(
        distance=distance,
        spacing=6,
        virtual_wavelength=lam,
        avg_phase_diff=2.0 * np.pi * distance / lam,
        cycle_count=0,
        trp_id=trp_id,
    )


def true_ranges(ue=UE, sites=SITES):
    return [make_range(float(np.linalg.norm(ue - s.position)), s.id) for s in sites]


def delay_frame_for(site, ue, num_subcarriers=3276, comb_size=6, spacing=30e3):
    mask = comb_mask(num_subcarriers, comb_size, 0)
    tau = np.linalg.norm(ue - site.position) / SPEED_OF_LIGHT
    freqs = np.arange(num_subcarriers) * spacing
    values = np.where(mask, np.exp(-2j * np.pi * freqs * tau), 0.0)
    return SubcarrierFrame(values=values, allocation_mask=mask, subcarrier_spacing=spacing)


def rigged_classifier(nlos_logit):
    """Constant-verdict model: zeroed last layer, fixed output bias."""
    arch = ArchConfig(input_length=3276, conv1_filters=4, conv1_width=5,
                      conv2_filters=4, conv2_width=3, dense1_units=8, dense2_units=4)
    params = init_params(arch, seed=0)
    params.feat_mean = np.zeros(arch.input_length)
    params.feat_std = np.ones(arch.input_length)
    params.weights["fc3_w"][:] = 0.0
    params.weights["fc3_b"][:] = [-nlos_logit, nlos_logit]
    return params


def test_trilaterate_exact_2d():
    fix = trilaterate(true_ranges(), SITES, mode="2D", init=np.array([30.0, 30.0, 1.5]))
    assert np.allclose(fix.position, UE, atol=1e-7)
    assert fix.rms_residual < 1e-7
    assert fix.valid and fix.reason == ""
    assert fix.trps_used == ["A", "B", "C", "D"]


def test_trilaterate_exact_3d_with_height_bounds():
    fix = trilaterate(true_ranges(), SITES, mode="3D",
                      init=np.array([30.0, 30.0, 1.0]), height_bounds=(0.0, 5.0))
    assert np.allclose(fix.position, UE, atol=1e-6)
    assert fix.valid


def test_trilaterate_requires_three_ranges():
    with pytest.raises(ValueError, match="insufficient LOS links"):
        trilaterate(true_ranges()[:2], SITES)


def test_trilaterate_unknown_site():
    bad = [make_range(10.0, "Z"), make_range(11.0, "A"), make_range(12.0, "B")]
    with pytest.raises(ValueError, match="unknown site"):
        trilaterate(bad, SITES)


def test_trilaterate_degenerate_collinear():
    line = [
        TrpSite("A", [0.0, 0.0, 10.0]),
        TrpSite("B", [50.0, 0.0, 10.0]),
        TrpSite("C", [100.0, 0.0, 10.0]),
    ]
    ranges = [make_range(float(np.linalg.norm([50.0, 0.0, 1.5] - s.position)), s.id) for s in line]
    with pytest.raises(ValueError, match="degenerate geometry"):
        trilaterate(ranges, line, mode="2D", init=np.array([50.0, 0.0, 1.5]))


def test_trilaterate_residual_gate():
    ranges = true_ranges()
    ranges[0] = make_range(ranges[0].distance + 5.0, "A")
    fix = trilaterate(ranges, SITES, mode="2D", init=np.array([30.0, 30.0, 1.5]),
                      residual_gate=0.5)
    assert not fix.valid
    assert fix.reason == "residual gate"


def test_trilaterate_displacement_bound():
    fix = trilaterate(true_ranges(), SITES, mode="2D",
                      init=np.array([300.0, 300.0, 1.5]), shift_bound=10.0)
    assert not fix.valid
    assert fix.reason == "displacement bound"


def test_invalid_fix_shape():
    fix = invalid_fix("insufficient LOS links", excluded=["A", "B"])
    assert not fix.valid
    assert np.all(np.isnan(fix.position))
    assert fix.excluded == ["A", "B"]
    assert fix.reason == "insufficient LOS links"


def localize_config(**kw):
    base = dict(trps=SITES, k_schedule=[6, 102, 1632], max_distance=200.0,
                mode="2D", init=np.array([30.0, 30.0, 1.5]))
    base.update(kw)
    return LocalizeConfig(**base)


def test_localize_epoch_without_classifier():
    frames = {s.id: delay_frame_for(s, UE) for s in SITES}
    fix = localize_epoch(frames, None, localize_config())
    assert fix.valid
    assert np.allclose(fix.position, UE, atol=1e-6)
    assert fix.excluded == []


def test_localize_epoch_too_few_links():
    frames = {s.id: delay_frame_for(s, UE) for s in SITES[:2]}
    fix = localize_epoch(frames, None, localize_config())
    assert not fix.valid
    assert fix.reason == "insufficient LOS links"


def test_localize_epoch_classifier_excludes_all():
    frames = {s.id: delay_frame_for(s, UE) for s in SITES}
    fix = localize_epoch(frames, rigged_classifier(+10.0), localize_config())
    assert not fix.valid
    assert fix.reason == "insufficient LOS links"
    assert fix.excluded == ["A", "B", "C", "D"]


def test_localize_epoch_classifier_keeps_all():
    frames = {s.id: delay_frame_for(s, UE) for s in SITES}
    fix = localize_epoch(frames, rigged_classifier(-10.0), localize_config())
    assert fix.valid
    assert np.allclose(fix.position, UE, atol=1e-6)
    assert fix.excluded == []


def test_error_statistics_percentiles():
    fixes = [
        PositionFix(position=[float(e), 0.0, 0.0], rms_residual=0.0,
                    trps_used=[], mode="2D", valid=True)
        for e in range(1, 101)
    ]
    truths = np.zeros((100, 3))
    stats = error_statistics(fixes, truths)
    assert stats.percentiles_2d[90] == pytest.approx(90.1)
    assert stats.percentiles_2d[70] == pytest.approx(70.3)
    assert stats.n == 100
    values, cumulative = stats.cdf_2d
    assert values[0] == 1.0 and values[-1] == 100.0
    assert cumulative[-1] == 1.0
    with pytest.raises(ValueError, match="one truth"):
        error_statistics(fixes, truths[:10])
    with pytest.raises(ValueError, match="no fixes"):
        error_statistics([], np.zeros((0, 3)))


def test_write_fix_log(tmp_path):
    fixes = [
        trilaterate(true_ranges(), SITES, mode="2D", init=np.array([30.0, 30.0, 1.5])),
        invalid_fix("insufficient LOS links", excluded=["A", "C"]),
    ]
    path = tmp_path / "fixes.csv"
    write_fix_log(path, [0.0, 1.0], fixes)
    rows = csv_rows(path)
    assert rows[0] == ["t", "valid", "x", "y", "z", "residual", "n_trps", "excluded_ids"]
    assert int(rows[1][1]) == 1
    assert float(rows[1][2]) == pytest.approx(UE[0], abs=1e-7)
    assert int(rows[2][1]) == 0
    assert rows[2][7] == "A;C"
