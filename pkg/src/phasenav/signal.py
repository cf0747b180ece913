"""Reference-signal frames on a comb-allocated subcarrier grid.

A frame is one OFDM-style snapshot: complex values on K subcarriers, a
boolean allocation mask (every n-th subcarrier carries the sounding
sequence), and the pseudo-random code phases that were modulated onto
the allocated bins so a receiver can strip them off again.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .util import csv_rows, wrap_pi

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, annotation only
    from .scenario import ScenarioConfig


@dataclass(eq=False)
class SubcarrierFrame:
    """One frequency-domain frame.

    Attributes:
        values: complex amplitude per subcarrier, length K.
        allocation_mask: True where the sounding comb is allocated.
        subcarrier_spacing: Hz between adjacent subcarriers.
        reference_phases: code phase (radians) modulated on each
            allocated bin; zero on unallocated bins and on frames whose
            code has already been stripped.
    """

    values: np.ndarray
    allocation_mask: np.ndarray
    subcarrier_spacing: float
    reference_phases: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.allocation_mask = np.asarray(self.allocation_mask, dtype=bool)
        if self.reference_phases is None:
            self.reference_phases = np.zeros(self.values.size)
        self.reference_phases = np.asarray(self.reference_phases, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("frame values must be one-dimensional")
        if self.allocation_mask.shape != self.values.shape:
            raise ValueError("allocation mask shape differs from values")
        if self.reference_phases.shape != self.values.shape:
            raise ValueError("reference phase shape differs from values")
        if self.subcarrier_spacing <= 0.0:
            raise ValueError("subcarrier spacing must be positive")
        idx = np.flatnonzero(self.allocation_mask)
        if idx.size == 0:
            raise ValueError("frame has no allocated subcarriers")
        if idx.size > 1:
            steps = np.diff(idx)
            if not np.all(steps == steps[0]):
                raise ValueError("allocation mask is not a regular comb")
            if idx[0] >= steps[0]:
                raise ValueError("comb offset must be smaller than the comb size")

    @property
    def num_subcarriers(self) -> int:
        return self.values.size

    @property
    def allocated_indices(self) -> np.ndarray:
        return np.flatnonzero(self.allocation_mask)

    @property
    def comb_size(self) -> int:
        idx = self.allocated_indices
        return int(idx[1] - idx[0]) if idx.size > 1 else self.values.size


def comb_mask(num_subcarriers: int, comb_size: int, comb_offset: int) -> np.ndarray:
    """Boolean mask that is True at indices congruent to the offset."""
    if comb_size < 1 or not 0 <= comb_offset < comb_size:
        raise ValueError("comb offset must lie in [0, comb_size)")
    return np.arange(num_subcarriers) % comb_size == comb_offset


def generate_reference_frame(config: "ScenarioConfig", sequence_seed: int) -> SubcarrierFrame:
    """Build a unit-magnitude sounding frame with seeded code phases.

    Allocated bins get magnitude one and a pseudo-random phase drawn
    from ``sequence_seed``; unallocated bins are exactly zero. The same
    seed always yields the same frame.

    Args:
        config: deployment configuration carrying the grid parameters.
        sequence_seed: seed of the code-phase sequence.

    Returns:
        The sounding frame, with ``reference_phases`` recording the
        drawn code phases.
    """
    mask = comb_mask(config.num_subcarriers, config.comb_size, config.comb_offset)
    rng = np.random.default_rng(sequence_seed)
    phases = np.zeros(config.num_subcarriers)
    phases[mask] = wrap_pi(rng.uniform(-np.pi, np.pi, int(mask.sum())))
    values = np.zeros(config.num_subcarriers, dtype=complex)
    values[mask] = np.exp(1j * phases[mask])
    return SubcarrierFrame(
        values=values,
        allocation_mask=mask,
        subcarrier_spacing=config.subcarrier_spacing,
        reference_phases=phases,
    )


def _check_compatible(a: SubcarrierFrame, b: SubcarrierFrame) -> None:
    if a.num_subcarriers != b.num_subcarriers:
        raise ValueError("frames have different subcarrier counts")
    if not np.array_equal(a.allocation_mask, b.allocation_mask):
        raise ValueError("allocation masks differ")
    if a.subcarrier_spacing != b.subcarrier_spacing:
        raise ValueError("subcarrier spacings differ")


def correct_phase_offsets(received: SubcarrierFrame, reference: SubcarrierFrame) -> SubcarrierFrame:
    """Strip the reference code phases from a received frame.

    Rotates every allocated bin by the negative of the reference code
    phase, leaving only channel-induced phase. Magnitudes and
    unallocated bins are untouched.
    """
    _check_compatible(received, reference)
    out = received.values.copy()
    mask = received.allocation_mask
    out[mask] = out[mask] * np.exp(-1j * reference.reference_phases[mask])
    return SubcarrierFrame(
        values=out,
        allocation_mask=mask.copy(),
        subcarrier_spacing=received.subcarrier_spacing,
        reference_phases=np.zeros(received.num_subcarriers),
    )


def apply_phase_offsets(frame: SubcarrierFrame, reference: SubcarrierFrame) -> SubcarrierFrame:
    """Inverse of :func:`correct_phase_offsets` (re-modulates the code)."""
    _check_compatible(frame, reference)
    out = frame.values.copy()
    mask = frame.allocation_mask
    out[mask] = out[mask] * np.exp(1j * reference.reference_phases[mask])
    return SubcarrierFrame(
        values=out,
        allocation_mask=mask.copy(),
        subcarrier_spacing=frame.subcarrier_spacing,
        reference_phases=reference.reference_phases.copy(),
    )


def write_frame_csv(frame: SubcarrierFrame, path) -> None:
    """Serialize a frame as ``index,re,im,allocated`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "re", "im", "allocated"])
        for i in range(frame.num_subcarriers):
            writer.writerow(
                [
                    i,
                    repr(float(frame.values[i].real)),
                    repr(float(frame.values[i].imag)),
                    int(frame.allocation_mask[i]),
                ]
            )


def read_frame_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back ``index,re,im,allocated`` rows -> (values, mask)."""
    rows = csv_rows(path)
    if not rows or rows[0][:2] != ["index", "re"]:
        raise ValueError("not a frame CSV")
    idx, re, im, alloc = [], [], [], []
    for row in rows[1:]:
        idx.append(int(row[0]))
        re.append(float(row[1]))
        im.append(float(row[2]))
        alloc.append(bool(int(row[3])))
    order = np.argsort(idx)
    values = (np.array(re) + 1j * np.array(im))[order]
    return values, np.array(alloc)[order]
