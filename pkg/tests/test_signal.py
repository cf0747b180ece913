import numpy as np
import pytest

from phasenav.signal import (
    SubcarrierFrame,
    apply_phase_offsets,
    comb_mask,
    correct_phase_offsets,
    generate_reference_frame,
    read_frame_csv,
    write_frame_csv,
)


def small_frame(values=None, K=12, comb=3, offset=0, scs=30e3):
    mask = comb_mask(K, comb, offset)
    if values is None:
        values = np.where(mask, 1.0 + 0.0j, 0.0j)
    return SubcarrierFrame(values=values, allocation_mask=mask, subcarrier_spacing=scs)


def test_comb_mask_pattern():
    mask = comb_mask(12, 3, 1)
    assert np.array_equal(np.flatnonzero(mask), [1, 4, 7, 10])
    with pytest.raises(ValueError):
        comb_mask(12, 3, 3)
    with pytest.raises(ValueError):
        comb_mask(12, 0, 0)


def test_frame_validation_rejects_bad_shapes():
    mask = comb_mask(8, 2, 0)
    with pytest.raises(ValueError):
        SubcarrierFrame(values=np.ones((2, 4), dtype=complex), allocation_mask=mask.reshape(2, 4), subcarrier_spacing=30e3)
    with pytest.raises(ValueError):
        SubcarrierFrame(values=np.ones(8, dtype=complex), allocation_mask=mask[:4], subcarrier_spacing=30e3)
    with pytest.raises(ValueError):
        SubcarrierFrame(values=np.ones(8, dtype=complex), allocation_mask=mask, subcarrier_spacing=0.0)
    with pytest.raises(ValueError):
        SubcarrierFrame(values=np.ones(8, dtype=complex), allocation_mask=np.zeros(8, bool), subcarrier_spacing=30e3)
    irregular = np.zeros(8, bool)
    irregular[[0, 2, 3]] = True
    with pytest.raises(ValueError):
        SubcarrierFrame(values=np.ones(8, dtype=complex), allocation_mask=irregular, subcarrier_spacing=30e3)


def test_frame_properties():
    frame = small_frame(K=12, comb=3, offset=2)
    assert frame.num_subcarriers == 12
    assert frame.comb_size == 3
    assert np.array_equal(frame.allocated_indices, [2, 5, 8, 11])


def test_reference_frame_unit_magnitude_and_determinism(umi_config):
    a = generate_reference_frame(umi_config, sequence_seed=99)
    b = generate_reference_frame(umi_config, sequence_seed=99)
    c = generate_reference_frame(umi_config, sequence_seed=100)
    mask = a.allocation_mask
    assert np.allclose(np.abs(a.values[mask]), 1.0)
    assert np.all(a.values[~mask] == 0.0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    # stored code phases reproduce the values
    assert np.allclose(a.values[mask], np.exp(1j * a.reference_phases[mask]))


def test_phase_offset_round_trip(umi_config, rng):
    ref = generate_reference_frame(umi_config, sequence_seed=5)
    # act as if a channel rotated every allocated bin
    rotated = ref.values * np.exp(-1j * 0.37)
    received = SubcarrierFrame(
        values=rotated,
        allocation_mask=ref.allocation_mask.copy(),
        subcarrier_spacing=ref.subcarrier_spacing,
    )
    corrected = correct_phase_offsets(received, ref)
    mask = ref.allocation_mask
    # code phases stripped: only the channel rotation remains
    assert np.allclose(corrected.values[mask], np.exp(-1j * 0.37))
    assert np.all(corrected.reference_phases == 0.0)
    restored = apply_phase_offsets(corrected, ref)
    assert np.allclose(restored.values, received.values)


def test_correct_phase_offsets_rejects_mismatched_frames(umi_config):
    ref = generate_reference_frame(umi_config, sequence_seed=5)
    other = small_frame()
    with pytest.raises(ValueError):
        correct_phase_offsets(other, ref)


def test_frame_csv_round_trip(tmp_path, umi_config):
    ref = generate_reference_frame(umi_config, sequence_seed=11)
    path = tmp_path / "frame.csv"
    write_frame_csv(ref, path)
    values, mask = read_frame_csv(path)
    assert np.array_equal(values, ref.values)
    assert np.array_equal(mask, ref.allocation_mask)


def test_read_frame_csv_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_frame_csv(path)
