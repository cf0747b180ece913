"""Range-based position solving and epoch-level localization.

Trilateration is a damped-free Gauss-Newton fit of the range residuals
with an optional height prior: 2D mode pins the height to the
initialization and solves in the ground plane, 3D mode solves all three
coordinates (optionally box-bounded in height to break the mirror
ambiguity of coplanar site layouts).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import waveform_magnitude
from .classifier import ModelParams, classify_nlos
from .ranging import CascadeResult, RangeEstimate, range_cascade
from .scenario import DEFAULT_UE_HEIGHT, TrpSite

MAX_ITERATIONS = 50
STEP_TOLERANCE = 1e-6       # m; convergence threshold on the update norm
DEFAULT_RESIDUAL_GATE = 1.0  # m; noiseless-LOS residuals are micrometers
DEFAULT_SHIFT_BOUND = 100.0  # m; practical limit on init-to-fix displacement


@dataclass(eq=False)
class PositionFix:
    """Solver output for one epoch."""

    position: np.ndarray
    rms_residual: float
    trps_used: list
    mode: str
    valid: bool
    reason: str = ""
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.mode not in ("2D", "3D"):
            raise ValueError("mode must be '2D' or '3D'")

    def error_2d(self, truth) -> float:
        return float(np.linalg.norm((self.position - np.asarray(truth))[:2]))

    def error_3d(self, truth) -> float:
        return float(np.linalg.norm(self.position - np.asarray(truth)))


def _site_positions(ranges, trps) -> np.ndarray:
    by_id = {t.id: t.position for t in trps}
    positions = []
    for r in ranges:
        if r.trp_id not in by_id:
            raise ValueError(f"range references unknown site {r.trp_id!r}")
        positions.append(by_id[r.trp_id])
    return np.array(positions)


def trilaterate(
    ranges,
    trps,
    mode: str = "3D",
    init=None,
    residual_gate: float = DEFAULT_RESIDUAL_GATE,
    shift_bound: float = DEFAULT_SHIFT_BOUND,
    height_bounds: tuple | None = None,
) -> PositionFix:
    """Gauss-Newton range intersection.

    Args:
        ranges: RangeEstimate per usable link (>= 3 required), each
            carrying the id of its site.
        trps: TrpSite list resolving those ids.
        mode: '2D' solves x,y with z pinned to the init height; '3D'
            solves all coordinates.
        init: starting point; defaults to the site centroid at the
            default UE height.
        residual_gate: fix is flagged invalid when the RMS range
            residual exceeds this (NLOS contamination shows up here).
        shift_bound: fix is flagged invalid when it lands farther than
            this from the initialization.
        height_bounds: optional (lo, hi) clamp on z in 3D mode,
            breaking the mirror ambiguity of coplanar sites.

    Returns:
        PositionFix; ``valid`` reflects the residual and displacement
        gates, not solver convergence.

    Raises:
        ValueError: fewer than three ranges ("insufficient LOS links")
            or a rank-deficient geometry ("degenerate geometry").
    """
    ranges = list(ranges)
    if len(ranges) < 3:
        raise ValueError("insufficient LOS links for a position fix")
    if mode not in ("2D", "3D"):
        raise ValueError("mode must be '2D' or '3D'")
    sites = _site_positions(ranges, trps)
    dists = np.array([r.distance for r in ranges])

    if init is None:
        init = np.array([*sites[:, :2].mean(axis=0), DEFAULT_UE_HEIGHT])
    init = np.asarray(init, dtype=float)
    x = init.copy()
    free = slice(0, 2) if mode == "2D" else slice(0, 3)

    def residuals(p):
        return np.linalg.norm(p - sites, axis=1) - dists

    r = residuals(x)
    for _ in range(MAX_ITERATIONS):
        delta = x - sites
        norms = np.maximum(np.linalg.norm(delta, axis=1), 1e-9)
        jac = (delta / norms[:, None])[:, free]
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e12:
            raise ValueError("degenerate geometry: sites do not constrain the fix")
        step = np.linalg.solve(jtj, -jac.T @ r)
        # plain Gauss-Newton with step halving as a guard against overshoot
        scale = 1.0
        for _ in range(12):
            trial = x.copy()
            trial[free] = trial[free] + scale * step
            if mode == "3D" and height_bounds is not None:
                trial[2] = np.clip(trial[2], height_bounds[0], height_bounds[1])
            r_trial = residuals(trial)
            if np.sum(r_trial**2) <= np.sum(r**2) or scale < 1e-6:
                break
            scale *= 0.5
        x, r = trial, r_trial
        if np.linalg.norm(scale * step) < STEP_TOLERANCE:
            break

    rms = float(np.sqrt(np.mean(r**2)))
    shift = float(np.linalg.norm(x - init))
    valid = rms <= residual_gate and shift <= shift_bound
    reason = ""
    if not valid:
        reason = "residual gate" if rms > residual_gate else "displacement bound"
    return PositionFix(
        position=x,
        rms_residual=rms,
        trps_used=[r_.trp_id for r_ in ranges],
        mode=mode,
        valid=valid,
        reason=reason,
    )


@dataclass(eq=False)
class LocalizeConfig:
    """Epoch-level localization settings."""

    trps: list
    k_schedule: list
    max_distance: float
    mode: str = "2D"
    nlos_threshold: float = 0.5
    residual_gate: float = DEFAULT_RESIDUAL_GATE
    shift_bound: float = DEFAULT_SHIFT_BOUND
    init: np.ndarray | None = None
    height_bounds: tuple | None = None


def invalid_fix(reason: str, mode: str = "2D", excluded=()) -> PositionFix:
    return PositionFix(
        position=np.full(3, np.nan),
        rms_residual=np.nan,
        trps_used=[],
        mode=mode,
        valid=False,
        reason=reason,
        excluded=list(excluded),
    )


def localize_epoch(
    frames: dict,
    classifier_params: ModelParams | None,
    config: LocalizeConfig,
) -> PositionFix:
    """Classify links, range the survivors, and solve for position.

    Args:
        frames: corrected received frame per site id.
        classifier_params: CNN used to discard NLOS-classified links
            (NLOS probability >= config.nlos_threshold); None disables
            filtering and uses every link.
        config: schedule, geometry, and gating settings.

    Returns:
        A PositionFix; when fewer than three links survive the filter
        the fix is invalid with reason "insufficient LOS links" rather
        than an exception.
    """
    ids = sorted(frames)
    excluded = []
    survivors = ids
    if classifier_params is not None and ids:
        feats = np.vstack([waveform_magnitude(frames[i]) for i in ids])
        nlos = classify_nlos(classifier_params, feats, config.nlos_threshold)
        survivors = [i for i, bad in zip(ids, nlos) if not bad]
        excluded = [i for i, bad in zip(ids, nlos) if bad]

    if len(survivors) < 3:
        return invalid_fix("insufficient LOS links", config.mode, excluded)

    ranges = [
        range_cascade(frames[i], config.k_schedule, config.max_distance, trp_id=i).final
        for i in survivors
    ]
    fix = trilaterate(
        ranges,
        config.trps,
        mode=config.mode,
        init=config.init,
        residual_gate=config.residual_gate,
        shift_bound=config.shift_bound,
        height_bounds=config.height_bounds,
    )
    fix.excluded = excluded
    return fix


@dataclass(eq=False)
class ErrorStats:
    """Percentile and CDF summary of fix errors."""

    percentiles_2d: dict
    percentiles_3d: dict
    cdf_2d: tuple
    cdf_3d: tuple
    n: int


PERCENTILE_LEVELS = (70, 80, 90)


def _cdf(errors: np.ndarray) -> tuple:
    s = np.sort(errors)
    return s, np.arange(1, s.size + 1) / s.size


def error_statistics(fixes, truths) -> ErrorStats:
    """Percentiles (70/80/90) and CDF points of 2D and 3D errors.

    Statistics run over exactly the fixes supplied; callers filter
    invalid fixes first. Percentiles use linear interpolation, so
    errors {1..100} m give a 90th percentile of 90.1 m.
    """
    fixes = list(fixes)
    truths = np.asarray(truths, dtype=float)
    if len(fixes) != truths.shape[0]:
        raise ValueError("need one truth position per fix")
    if not fixes:
        raise ValueError("no fixes to summarize")
    err2 = np.array([f.error_2d(t) for f, t in zip(fixes, truths)])
    err3 = np.array([f.error_3d(t) for f, t in zip(fixes, truths)])
    return ErrorStats(
        percentiles_2d={p: float(np.percentile(err2, p)) for p in PERCENTILE_LEVELS},
        percentiles_3d={p: float(np.percentile(err3, p)) for p in PERCENTILE_LEVELS},
        cdf_2d=_cdf(err2),
        cdf_3d=_cdf(err3),
        n=len(fixes),
    )


def write_fix_log(path, times, fixes) -> None:
    """Fix log rows ``t,valid,x,y,z,residual,n_trps,excluded_ids``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "valid", "x", "y", "z", "residual", "n_trps", "excluded_ids"])
        for t, fix in zip(times, fixes):
            writer.writerow(
                [
                    repr(float(t)),
                    int(fix.valid),
                    repr(float(fix.position[0])),
                    repr(float(fix.position[1])),
                    repr(float(fix.position[2])),
                    repr(float(fix.rms_residual)),
                    len(fix.trps_used),
                    ";".join(fix.excluded),
                ]
            )
