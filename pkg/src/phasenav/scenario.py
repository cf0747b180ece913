"""Deployment geometry: sites, obstacle maps, UE tracks, coverage planning.

Obstacles are axis-aligned boxes; visibility is a straight-line test
between antenna positions against the open box interiors. Coverage is
evaluated on a square ground grid at a configurable UE antenna height.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import yaml

from .channel import LosProbabilityModel, NoiseConfig

VALID_COMB_SIZES = (1, 2, 4, 6, 8, 12)
DEFAULT_UE_HEIGHT = 1.5  # m; coverage evaluation height


@dataclass(frozen=True)
class TrpSite:
    """One transmission/reception point."""

    id: str
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise ValueError(f"site {self.id}: position must be a finite 3-vector")
        if self.position[2] < 0.0:
            raise ValueError(f"site {self.id}: antenna height must be non-negative")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned ground rectangle."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("rectangle has no area")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin


@dataclass(frozen=True)
class ObstacleMap:
    """Axis-aligned boxes; (min corner, max corner) per box."""

    boxes: tuple = ()

    def __post_init__(self):
        parsed = []
        for lo, hi in self.boxes:
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            if lo.shape != (3,) or hi.shape != (3,):
                raise ValueError("box corners must be 3-vectors")
            if np.any(hi < lo):
                raise ValueError("box max corner must dominate the min corner")
            parsed.append((lo, hi))
        object.__setattr__(self, "boxes", tuple(parsed))

    @classmethod
    def from_file(cls, path) -> "ObstacleMap":
        """Read ``xmin ymin zmin xmax ymax zmax`` per line."""
        boxes = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = [float(v) for v in line.split()]
                if len(parts) != 6:
                    raise ValueError(f"{path}:{lineno}: expected 6 numbers")
                boxes.append((parts[:3], parts[3:]))
        return cls(boxes=tuple(boxes))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            for lo, hi in self.boxes:
                fh.write(" ".join(repr(float(v)) for v in (*lo, *hi)) + "\n")


@dataclass(eq=False)
class WaypointTrack:
    """Sampled piecewise-linear UE track at constant speed."""

    times: np.ndarray
    positions: np.ndarray
    speed: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape != (self.times.size, 3):
            raise ValueError("need one 3-d position per timestamp")
        if self.times.size < 2:
            raise ValueError("a track needs at least two samples")
        dts = np.diff(self.times)
        if np.any(dts <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        speeds = steps / dts
        if self.speed > 0.0 and np.any(np.abs(speeds - self.speed) > 0.01 * self.speed):
            raise ValueError("sample spacing is inconsistent with the declared speed")

    @property
    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(eq=False)
class ScenarioConfig:
    """Full deployment configuration for one study."""

    carrier_frequency: float = 3.8e9
    bandwidth: float = 100e6
    subcarrier_spacing: float = 30e3
    num_subcarriers: int = 3276
    comb_size: int = 6
    comb_offset: int = 0
    trp_list: list = field(default_factory=list)
    ue_init: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, DEFAULT_UE_HEIGHT]))
    ue_speed: float = 3.0 / 3.6
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    rng_seed: int = 0

    def __post_init__(self):
        self.ue_init = np.asarray(self.ue_init, dtype=float)
        if self.carrier_frequency <= 0.0 or self.bandwidth <= 0.0 or self.subcarrier_spacing <= 0.0:
            raise ValueError("frequencies must be positive")
        if self.num_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.num_subcarriers * self.subcarrier_spacing > self.bandwidth:
            raise ValueError("subcarrier grid exceeds the configured bandwidth")
        if self.comb_size not in VALID_COMB_SIZES:
            raise ValueError(f"comb size must be one of {VALID_COMB_SIZES}")
        if not 0 <= self.comb_offset < self.comb_size:
            raise ValueError("comb offset must lie in [0, comb_size)")
        if not self.trp_list:
            raise ValueError("need at least one site")
        if self.ue_init.shape != (3,) or not np.all(np.isfinite(self.ue_init)):
            raise ValueError("ue_init must be a finite 3-vector")
        if self.ue_speed < 0.0:
            raise ValueError("speed must be non-negative")
        ids = [t.id for t in self.trp_list]
        if len(set(ids)) != len(ids):
            raise ValueError("site ids must be unique")

    @property
    def max_link_distance(self) -> float:
        """Largest site-to-UE distance the deployment can present.

        Bounding value used to verify that the coarsest cascade level is
        ambiguity-free: distance from each site to the farthest corner
        of the bounding box spanned by sites and initial UE position.
        """
        pts = np.vstack([t.position for t in self.trp_list] + [self.ue_init])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        return float(
            max(
                np.linalg.norm(corners - t.position, axis=1).max()
                for t in self.trp_list
            )
        )


def generate_random_waypoint_track(
    config: ScenarioConfig,
    area: Rect,
    duration: float,
    dt: float,
) -> WaypointTrack:
    """Random-waypoint track sampled every ``dt`` at the configured speed.

    Waypoints are drawn uniformly in ``area``; direction changes only at
    sample instants, so every consecutive-sample distance is exactly
    speed*dt and all samples stay inside the area. Height is pinned to
    the configured UE height.

    Raises:
        ValueError: non-positive dt, duration shorter than one step, or
            an area too small for a single step at the given speed.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n_steps = int(round(duration / dt))
    if n_steps < 1:
        raise ValueError("duration must cover at least one step")
    if config.ue_speed <= 0.0:
        raise ValueError("track generation needs a positive speed")
    step = config.ue_speed * dt
    if min(area.width, area.height) < step:
        raise ValueError("area is smaller than a single step at this speed")

    rng = np.random.default_rng(config.rng_seed)
    z = config.ue_init[2]
    cur = np.array(
        [
            np.clip(config.ue_init[0], area.xmin, area.xmax),
            np.clip(config.ue_init[1], area.ymin, area.ymax),
        ]
    )
    positions = [np.array([cur[0], cur[1], z])]
    remaining = n_steps
    while remaining > 0:
        for _ in range(1000):
            target = rng.uniform([area.xmin, area.ymin], [area.xmax, area.ymax])
            dist = float(np.linalg.norm(target - cur))
            if dist >= step:
                break
        else:  # pragma: no cover - guarded by the area size check above
            raise ValueError("could not draw a reachable waypoint")
        leg_steps = min(int(dist / step), remaining)
        direction = (target - cur) / dist
        for _ in range(leg_steps):
            cur = cur + direction * step
            positions.append(np.array([cur[0], cur[1], z]))
        remaining -= leg_steps
    times = np.arange(n_steps + 1) * dt
    return WaypointTrack(times=times, positions=np.array(positions), speed=config.ue_speed)


def _segment_hits_box(p: np.ndarray, q: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    """True iff the open segment p->q passes through the open box interior.

    Slab test with strict comparisons: grazing a face, edge, or corner
    does not count as blocking, and neither does an endpoint touching
    the surface.
    """
    d = q - p
    tmin, tmax = 0.0, 1.0
    for a in range(3):
        if abs(d[a]) < 1e-300:
            if not (lo[a] < p[a] < hi[a]):
                return False
        else:
            t1 = (lo[a] - p[a]) / d[a]
            t2 = (hi[a] - p[a]) / d[a]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin >= tmax:
                return False
    return tmax > tmin


def los_visible(tx_pos, rx_pos, obstacles: ObstacleMap) -> bool:
    """Straight-line visibility between two antenna positions.

    Args:
        tx_pos, rx_pos: distinct 3-d positions in meters.
        obstacles: the box map to test against.

    Returns:
        True when no box interior intersects the open segment.
    """
    p = np.asarray(tx_pos, dtype=float)
    q = np.asarray(rx_pos, dtype=float)
    if np.array_equal(p, q):
        raise ValueError("visibility is undefined for coincident endpoints")
    return not any(_segment_hits_box(p, q, lo, hi) for lo, hi in obstacles.boxes)


@dataclass(eq=False)
class CoverageGrid:
    """Per-cell LOS site counts over a ground region."""

    counts: np.ndarray        # (ny, nx) int
    cell_size: float
    region: Rect
    ue_height: float

    def fraction_with_at_least(self, k: int) -> float:
        return float(np.mean(self.counts >= k))

    @property
    def fraction_positionable(self) -> float:
        """Fraction of cells where at least three sites keep LOS."""
        return self.fraction_with_at_least(3)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.counts.shape
        xs = self.region.xmin + (np.arange(nx) + 0.5) * self.cell_size
        ys = self.region.ymin + (np.arange(ny) + 0.5) * self.cell_size
        return xs, ys

    def to_csv(self, path) -> None:
        xs, ys = self.cell_centers()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "los_count"])
            for j, y in enumerate(ys):
                for i, x in enumerate(xs):
                    writer.writerow([repr(float(x)), repr(float(y)), int(self.counts[j, i])])


def coverage_grid(
    obstacles: ObstacleMap,
    trps,
    cell_size: float,
    region: Rect,
    ue_height: float = DEFAULT_UE_HEIGHT,
) -> CoverageGrid:
    """Count LOS sites per cell center across a square ground grid.

    Cell centers sit at ``ue_height``. Only whole cells are evaluated;
    a region smaller than one cell is an error.
    """
    if cell_size <= 0.0:
        raise ValueError("cell size must be positive")
    nx = int(region.width / cell_size)
    ny = int(region.height / cell_size)
    if nx < 1 or ny < 1:
        raise ValueError("region is smaller than a single cell")
    counts = np.zeros((ny, nx), dtype=int)
    for j in range(ny):
        y = region.ymin + (j + 0.5) * cell_size
        for i in range(nx):
            x = region.xmin + (i + 0.5) * cell_size
            center = np.array([x, y, ue_height])
            c = 0
            for trp in trps:
                if np.array_equal(trp.position, center) or los_visible(trp.position, center, obstacles):
                    c += 1
            counts[j, i] = c
    return CoverageGrid(counts=counts, cell_size=cell_size, region=region, ue_height=ue_height)


# --- config file round trip (nested key-value text via YAML) ---------------


def scenario_to_dict(config: ScenarioConfig) -> dict:
    return {
        "carrier_frequency": float(config.carrier_frequency),
        "bandwidth": float(config.bandwidth),
        "subcarrier_spacing": float(config.subcarrier_spacing),
        "num_subcarriers": int(config.num_subcarriers),
        "comb_size": int(config.comb_size),
        "comb_offset": int(config.comb_offset),
        "trps": [
            {"id": t.id, "position": [float(v) for v in t.position]} for t in config.trp_list
        ],
        "ue": {
            "init": [float(v) for v in config.ue_init],
            "speed": float(config.ue_speed),
        },
        "noise": {
            "snr_db": float(config.noise.snr_db),
            "phase_noise_std": float(config.noise.phase_noise_std),
            "nlos_excess_delay_scale": float(config.noise.nlos_excess_delay_scale),
            "nlos_tap_count": int(config.noise.nlos_tap_count),
            "los_scatter_count": int(config.noise.los_scatter_count),
            "los_scatter_power_db": float(config.noise.los_scatter_power_db),
            "los_probability": {
                "breakpoint_m": float(config.noise.los_probability_model.breakpoint_m),
                "decay_m": float(config.noise.los_probability_model.decay_m),
                "scale": float(config.noise.los_probability_model.scale),
            },
        },
        "rng_seed": int(config.rng_seed),
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    noise_data = dict(data.get("noise", {}))
    los_data = noise_data.pop("los_probability", {})
    noise = NoiseConfig(
        los_probability_model=LosProbabilityModel(**{k: float(v) for k, v in los_data.items()}),
        **noise_data,
    )
    ue = data.get("ue", {})
    return ScenarioConfig(
        carrier_frequency=float(data["carrier_frequency"]),
        bandwidth=float(data["bandwidth"]),
        subcarrier_spacing=float(data["subcarrier_spacing"]),
        num_subcarriers=int(data["num_subcarriers"]),
        comb_size=int(data["comb_size"]),
        comb_offset=int(data.get("comb_offset", 0)),
        trp_list=[TrpSite(id=str(t["id"]), position=t["position"]) for t in data["trps"]],
        ue_init=np.asarray(ue.get("init", [0.0, 0.0, DEFAULT_UE_HEIGHT]), dtype=float),
        ue_speed=float(ue.get("speed", 3.0 / 3.6)),
        noise=noise,
        rng_seed=int(data.get("rng_seed", 0)),
    )


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key-value mapping")
    return scenario_from_dict(data)


def save_scenario(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(config), fh, sort_keys=True)
