"""Carrier-phase ranging over virtual wavelengths.

Differencing subcarriers spaced k apart synthesizes a virtual wave of
wavelength c/(k*spacing). A coarse-to-fine cascade of spacings avoids
the integer cycle ambiguity: the coarsest virtual wavelength exceeds
every distance the deployment can present (cycle count zero), and each
finer level inherits its cycle count from the previous estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import floor

import numpy as np

from .signal import SubcarrierFrame
from .util import SPEED_OF_LIGHT, TWO_PI, wrap_progressive


@dataclass(frozen=True)
class RangeEstimate:
    """One distance estimate at a single subcarrier spacing."""

    distance: float
    spacing: int              # subcarrier index spacing k
    virtual_wavelength: float
    avg_phase_diff: float     # (0, 2*pi]
    cycle_count: int
    trp_id: str = ""

    def __post_init__(self):
        if not 0.0 < self.avg_phase_diff <= TWO_PI + 1e-12:
            raise ValueError("averaged phase difference must lie in (0, 2*pi]")
        reconstructed = (self.avg_phase_diff / TWO_PI + self.cycle_count) * self.virtual_wavelength
        if abs(self.distance - reconstructed) > 1e-9:
            raise ValueError("distance is inconsistent with phase, cycles, and wavelength")


@dataclass(frozen=True)
class CascadeResult:
    """Final cascade estimate plus every intermediate level."""

    final: RangeEstimate
    levels: tuple = field(default_factory=tuple)

    @property
    def distance(self) -> float:
        return self.final.distance


def virtual_wavelength(delta_f: float) -> float:
    """Wavelength c/delta_f of the wave synthesized by a frequency offset."""
    if delta_f <= 0.0:
        raise ValueError("frequency offset must be positive")
    return SPEED_OF_LIGHT / delta_f


def _check_spacing(frame: SubcarrierFrame, k: int) -> None:
    if not 0 < k <= frame.num_subcarriers // 2:
        raise ValueError("subcarrier spacing k must lie in (0, K/2]")


def avg_phase_diff_vector(frame: SubcarrierFrame, k: int) -> float:
    """Baseline estimator: arg of the summed per-pair difference vectors.

    Sums value[i+k] - value[i] over every index pair of the full grid,
    unallocated bins included, and returns the argument of the sum.
    Kept for comparison studies; noise on unallocated bins leaks into
    this estimator but not into the robust one.

    Raises:
        ValueError: k outside (0, K/2], or a sum of exactly zero
            magnitude (all values identical), whose argument is
            undefined.
    """
    _check_spacing(frame, k)
    v = frame.values
    total = v[k:].sum() - v[: v.size - k].sum()
    if total == 0.0:
        raise ValueError("summed difference vector has zero magnitude")
    return float(np.angle(total))


def avg_phase_diff_robust(frame: SubcarrierFrame, k: int) -> float:
    """Averaged per-pair phase progression over allocated bins only.

    Every allocated pair (i, i+k) contributes its wrapped phase
    difference, mapped into (0, 2*pi] under the progression convention
    (the higher-frequency bin is always phase-ahead); the estimate is
    the arithmetic mean. With the exp(-j*2*pi*f*tau) reception kernel a
    pure delay appears as a negative slope of the complex argument, so
    the per-pair progression is angle(lower) - angle(higher).

    Raises:
        ValueError: k outside (0, K/2], k not aligned with the comb, or
            no allocated pair at this spacing.
    """
    _check_spacing(frame, k)
    idx = frame.allocated_indices
    n = frame.comb_size
    if k % n != 0:
        raise ValueError("spacing k is misaligned with the allocation comb")
    r = k // n
    if r >= idx.size:
        raise ValueError("no allocated subcarrier pair at this spacing")
    lo = frame.values[idx[: idx.size - r]]
    hi = frame.values[idx[r:]]
    diffs = wrap_progressive(np.angle(lo) - np.angle(hi))
    return float(diffs.mean())


def range_single_k(
    frame: SubcarrierFrame,
    k: int,
    assumed_cycles: int = 0,
    trp_id: str = "",
) -> RangeEstimate:
    """Distance from the averaged phase progression at one spacing.

    distance = (avg_diff / 2*pi + cycles) * virtual_wavelength, with the
    cycle count supplied by the caller (zero when the virtual wavelength
    is known to exceed the true distance).
    """
    dphi = avg_phase_diff_robust(frame, k)
    lam = virtual_wavelength(k * frame.subcarrier_spacing)
    distance = (dphi / TWO_PI + assumed_cycles) * lam
    return RangeEstimate(
        distance=distance,
        spacing=k,
        virtual_wavelength=lam,
        avg_phase_diff=dphi,
        cycle_count=assumed_cycles,
        trp_id=trp_id,
    )


def default_k_schedule(num_subcarriers: int, comb_size: int) -> list[int]:
    """Three-level coarse-to-fine spacing schedule.

    Coarsest level is one comb step; the middle level is the geometric
    mean point of the span; the finest is the largest comb-aligned
    spacing strictly below K/2.
    """
    n = comb_size
    K = num_subcarriers
    coarse = n
    mid = n * int(np.ceil(np.sqrt(K / (2.0 * n))))
    fine = n * ((K // 2 - 1) // n)
    schedule = sorted({coarse, mid, fine})
    if any(not 0 < k <= K // 2 for k in schedule):
        raise ValueError("grid too small for a cascade schedule")
    return schedule


def range_cascade(
    frame: SubcarrierFrame,
    k_schedule,
    max_distance: float,
    trp_id: str = "",
) -> CascadeResult:
    """Coarse-to-fine ranging with cycle handoff between levels.

    The first schedule entry must synthesize a wavelength longer than
    ``max_distance`` so its cycle count is zero by construction. Each
    finer level rounds (previous distance)/(wavelength) - (measured
    fraction) to the nearest integer cycle count; exact half-cycle ties
    round up, keeping the handoff deterministic.

    Args:
        frame: corrected received frame.
        k_schedule: strictly ascending comb-aligned spacings.
        max_distance: upper bound on the true link distance, used only
            to verify the coarsest level is ambiguity-free.

    Returns:
        CascadeResult with the finest-level estimate and all levels.
    """
    schedule = [int(k) for k in k_schedule]
    if not schedule:
        raise ValueError("empty spacing schedule")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("spacing schedule must be strictly ascending")
    if max_distance <= 0.0:
        raise ValueError("max distance must be positive")
    lam0 = virtual_wavelength(schedule[0] * frame.subcarrier_spacing)
    if lam0 <= max_distance:
        raise ValueError(
            f"coarsest virtual wavelength {lam0:.1f} m does not exceed "
            f"the deployment bound {max_distance:.1f} m; ambiguity not excluded"
        )

    levels = []
    estimate = range_single_k(frame, schedule[0], assumed_cycles=0, trp_id=trp_id)
    levels.append(estimate)
    for k in schedule[1:]:
        dphi = avg_phase_diff_robust(frame, k)
        lam = virtual_wavelength(k * frame.subcarrier_spacing)
        cycles = int(floor(estimate.distance / lam - dphi / TWO_PI + 0.5))
        estimate = RangeEstimate(
            distance=(dphi / TWO_PI + cycles) * lam,
            spacing=k,
            virtual_wavelength=lam,
            avg_phase_diff=dphi,
            cycle_count=cycles,
            trp_id=trp_id,
        )
        levels.append(estimate)
    return CascadeResult(final=estimate, levels=tuple(levels))


def predicted_range_std(
    frame_subcarriers: int,
    comb_size: int,
    k: int,
    subcarrier_spacing: float,
    phase_noise_std: float,
) -> float:
    """Analytic range error std at one cascade level under phase noise.

    The arithmetic mean over pairs telescopes: interior bins appear once
    with each sign and cancel, leaving 2*min(r, P) surviving noise terms
    (r = k/comb_size, P = allocated pair count). The resulting distance
    std is lambda_v * sigma * sqrt(2*min(r, P)) / (2*pi*P).
    """
    mask_count = len(range(0, frame_subcarriers, comb_size))
    r = k // comb_size
    pairs = mask_count - r
    if pairs < 1:
        raise ValueError("no allocated pair at this spacing")
    surviving = 2 * min(r, pairs)
    dphi_std = phase_noise_std * np.sqrt(surviving) / pairs
    lam = virtual_wavelength(k * subcarrier_spacing)
    return float(lam * dphi_std / TWO_PI)


def write_ranging_csv(path, results) -> None:
    """Diagnostics rows ``trp_id,k,lambda_v_m,dphi_rad,N,d_m`` per level."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trp_id", "k", "lambda_v_m", "dphi_rad", "N", "d_m"])
        for result in results:
            for level in result.levels:
                writer.writerow(
                    [
                        level.trp_id,
                        level.spacing,
                        repr(float(level.virtual_wavelength)),
                        repr(float(level.avg_phase_diff)),
                        level.cycle_count,
                        repr(float(level.distance)),
                    ]
                )
