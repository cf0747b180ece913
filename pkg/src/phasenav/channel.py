"""Simplified tapped-delay-line radio channel and link labeling.

The channel model is deliberately light: a LOS draw is a dominant tap at
the geometric delay plus optional weak scatter, an NLOS draw is a small
cluster of Rayleigh taps displaced by exponentially distributed excess
delay. It exists to drive the ranging, classification, and positioning
studies, not to reproduce any standardized channel in detail.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .signal import SubcarrierFrame
from .util import SPEED_OF_LIGHT, csv_rows

DEFAULT_LABEL_THRESHOLD = 10e-9  # s; roughly one delay-resolution bin in the UMi setup


@dataclass(frozen=True)
class LosProbabilityModel:
    """Distance-decaying LOS probability with a full-visibility breakpoint.

    p(d) = scale                                          for d <= breakpoint
    p(d) = scale * (b/d + exp(-d/decay) * (1 - b/d))      otherwise

    ``constant(p)`` pins the probability to p at every distance.
    """

    breakpoint_m: float = 18.0
    decay_m: float = 36.0
    scale: float = 1.0

    def __post_init__(self):
        if self.breakpoint_m <= 0.0 or self.decay_m <= 0.0:
            raise ValueError("breakpoint and decay must be positive")
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError("scale must lie in [0, 1]")

    @classmethod
    def constant(cls, p: float) -> "LosProbabilityModel":
        return cls(breakpoint_m=np.inf, decay_m=1.0, scale=p)

    def probability(self, distance: float) -> float:
        d = float(distance)
        if d <= self.breakpoint_m:
            p = 1.0
        else:
            b = self.breakpoint_m / d
            p = b + np.exp(-d / self.decay_m) * (1.0 - b)
        return float(np.clip(self.scale * p, 0.0, 1.0))


@dataclass(frozen=True)
class NoiseConfig:
    """Impairment knobs for channel draws and frame reception.

    snr_db is defined against the mean allocated-bin power of the
    transmitted frame; additive noise lands on every bin, allocated or
    not. phase_noise_std is the per-bin phase jitter in radians.
    """

    snr_db: float = np.inf
    phase_noise_std: float = 0.0
    nlos_excess_delay_scale: float = 100e-9
    nlos_tap_count: int = 5
    los_probability_model: LosProbabilityModel = field(default_factory=LosProbabilityModel)
    los_scatter_count: int = 3
    los_scatter_power_db: float = -15.0

    def __post_init__(self):
        if self.phase_noise_std < 0.0:
            raise ValueError("phase noise std must be non-negative")
        if self.nlos_tap_count < 1:
            raise ValueError("NLOS draws need at least one tap")
        if self.nlos_excess_delay_scale <= 0.0:
            raise ValueError("excess delay scale must be positive")
        if self.los_scatter_count < 0:
            raise ValueError("scatter count must be non-negative")


@dataclass(eq=False)
class ChannelRealization:
    """One drawn multipath realization between a site and the UE."""

    delays: np.ndarray      # s, sorted ascending
    gains: np.ndarray       # complex tap gains
    is_los: bool
    tx_pos: np.ndarray
    rx_pos: np.ndarray
    path_loss_db: float

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.gains = np.asarray(self.gains, dtype=complex)
        self.tx_pos = np.asarray(self.tx_pos, dtype=float)
        self.rx_pos = np.asarray(self.rx_pos, dtype=float)
        if self.delays.shape != self.gains.shape:
            raise ValueError("delay and gain arrays differ in shape")
        if self.delays.size and (np.any(np.diff(self.delays) < 0.0) or self.delays[0] < 0.0):
            raise ValueError("tap delays must be sorted and non-negative")
        if self.is_los:
            if self.delays.size == 0:
                raise ValueError("a LOS realization needs a direct tap")
            if abs(self.delays[0] - self.geometric_delay) > 1e-12:
                raise ValueError("LOS first tap must sit at the geometric delay")

    @property
    def geometric_delay(self) -> float:
        return float(np.linalg.norm(self.rx_pos - self.tx_pos)) / SPEED_OF_LIGHT


@dataclass(eq=False)
class PowerDelayProfile:
    delays: np.ndarray  # s, uniform grid
    powers: np.ndarray

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        if self.delays.shape != self.powers.shape:
            raise ValueError("delay and power arrays differ in shape")
        if np.any(self.powers < 0.0):
            raise ValueError("powers must be non-negative")

    @property
    def peak_delay(self) -> float:
        return float(self.delays[int(np.argmax(self.powers))])

    @property
    def total_power(self) -> float:
        return float(self.powers.sum())


@dataclass(frozen=True)
class LinkLabel:
    """Delay-comparison verdict for one link."""

    is_los: bool
    tau_diff: float   # s
    tau_est: float    # s
    tau_true: float   # s


def _rayleigh_gains(rng: np.random.Generator, count: int, total_power: float) -> np.ndarray:
    sigma = np.sqrt(total_power / count / 2.0)
    return sigma * (rng.standard_normal(count) + 1j * rng.standard_normal(count))


def draw_channel(
    tx_pos,
    rx_pos,
    noise: NoiseConfig,
    rng: np.random.Generator,
    force_state: bool | None = None,
    carrier_frequency: float = 3.8e9,
) -> ChannelRealization:
    """Draw one LOS/NLOS tapped-delay-line realization.

    Args:
        tx_pos, rx_pos: site and UE positions in meters.
        noise: impairment configuration (tap counts, excess delay scale,
            LOS probability curve).
        rng: generator driving every random draw.
        force_state: True forces LOS, False forces NLOS, None samples
            the state from the LOS probability at the horizontal
            distance.
        carrier_frequency: only used for the free-space path_loss_db
            bookkeeping field; tap gains are normalized.
    """
    tx = np.asarray(tx_pos, dtype=float)
    rx = np.asarray(rx_pos, dtype=float)
    d3 = float(np.linalg.norm(rx - tx))
    if d3 == 0.0:
        raise ValueError("transmitter and receiver coincide")
    tau_geo = d3 / SPEED_OF_LIGHT

    if force_state is None:
        d2 = float(np.linalg.norm((rx - tx)[:2]))
        is_los = rng.random() < noise.los_probability_model.probability(d2)
    else:
        is_los = bool(force_state)

    if is_los:
        delays = [tau_geo]
        gains = [1.0 + 0.0j]
        scatter_power = 10.0 ** (noise.los_scatter_power_db / 10.0)
        if noise.los_scatter_count > 0 and scatter_power > 0.0:
            excess = rng.exponential(noise.nlos_excess_delay_scale, noise.los_scatter_count)
            delays.extend(tau_geo + np.sort(excess))
            gains.extend(_rayleigh_gains(rng, noise.los_scatter_count, scatter_power))
        delays = np.asarray(delays)
        gains = np.asarray(gains, dtype=complex)
    else:
        excess = np.sort(rng.exponential(noise.nlos_excess_delay_scale, noise.nlos_tap_count))
        delays = tau_geo + excess
        gains = _rayleigh_gains(rng, noise.nlos_tap_count, 1.0)

    path_loss_db = 20.0 * np.log10(4.0 * np.pi * d3 * carrier_frequency / SPEED_OF_LIGHT)
    return ChannelRealization(
        delays=delays,
        gains=gains,
        is_los=is_los,
        tx_pos=tx,
        rx_pos=rx,
        path_loss_db=float(path_loss_db),
    )


def apply_channel(
    frame: SubcarrierFrame,
    channel: ChannelRealization,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> SubcarrierFrame:
    """Propagate a frame through a realization and add receiver noise.

    The frequency response uses the exp(-j*2*pi*f*tau) kernel, so a pure
    delay shows up as a negative phase slope across subcarriers and the
    inverse transform of the frame peaks at +tau. Additive complex
    Gaussian noise lands on all K bins at the configured SNR (relative
    to the mean allocated-bin power of the input frame); per-bin phase
    jitter multiplies the signal component only.
    """
    freqs = np.arange(frame.num_subcarriers) * frame.subcarrier_spacing
    response = (channel.gains[None, :] * np.exp(-2j * np.pi * np.outer(freqs, channel.delays))).sum(axis=1)
    out = frame.values * response

    if noise.phase_noise_std > 0.0:
        out = out * np.exp(1j * rng.normal(0.0, noise.phase_noise_std, out.size))

    if np.isfinite(noise.snr_db):
        signal_power = float(np.mean(np.abs(frame.values[frame.allocation_mask]) ** 2))
        noise_var = signal_power * 10.0 ** (-noise.snr_db / 10.0)
        sigma = np.sqrt(noise_var / 2.0)
        out = out + sigma * (rng.standard_normal(out.size) + 1j * rng.standard_normal(out.size))

    return SubcarrierFrame(
        values=out,
        allocation_mask=frame.allocation_mask.copy(),
        subcarrier_spacing=frame.subcarrier_spacing,
        reference_phases=frame.reference_phases.copy(),
    )


def compute_pdp(frame: SubcarrierFrame) -> PowerDelayProfile:
    """Power-delay profile from the allocated bins of a frame.

    The allocated bins are decimated to their comb grid before the
    orthonormal inverse transform: transforming the comb in place
    instead would replicate every tap at multiples of K/n bins, and
    under noise the replicas trade argmax wins with the true peak. The
    decimated profile keeps the full 1/(K*spacing) delay resolution;
    its unambiguous range shrinks to 1/(n*spacing), still three orders
    beyond any deployment's propagation delays. Total PDP power equals
    the allocated-bin spectral power exactly (Parseval).
    """
    values = frame.values[frame.allocation_mask]
    h = np.fft.ifft(values, norm="ortho")
    K = frame.num_subcarriers
    delays = np.arange(values.size) / (K * frame.subcarrier_spacing)
    return PowerDelayProfile(delays=delays, powers=np.abs(h) ** 2)


def waveform_magnitude(frame: SubcarrierFrame) -> np.ndarray:
    """Time-domain magnitude of the raw received frame (length K).

    This is the classifier's input representation: the orthonormal
    inverse transform of the *full* frame, noise bins included.
    """
    return np.abs(np.fft.ifft(frame.values, norm="ortho"))


def label_link(
    channel: ChannelRealization,
    pdp: PowerDelayProfile,
    threshold: float = DEFAULT_LABEL_THRESHOLD,
) -> LinkLabel:
    """Label a link by comparing the PDP peak delay to the geometric one.

    NLOS iff |tau_est - tau_true| exceeds the threshold.
    """
    if threshold <= 0.0:
        raise ValueError("label threshold must be positive")
    tau_est = pdp.peak_delay
    tau_true = channel.geometric_delay
    tau_diff = abs(tau_est - tau_true)
    return LinkLabel(is_los=tau_diff <= threshold, tau_diff=tau_diff, tau_est=tau_est, tau_true=tau_true)


def write_labeled_dataset(path, labels, tau_diffs, magnitudes) -> None:
    """Write classifier rows: ``label,tau_diff_ns,K`` then K magnitudes."""
    labels = np.asarray(labels, dtype=bool)
    tau_diffs = np.asarray(tau_diffs, dtype=float)
    magnitudes = np.asarray(magnitudes, dtype=float)
    if magnitudes.ndim != 2 or labels.shape[0] != magnitudes.shape[0]:
        raise ValueError("need one label per magnitude row")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for is_los, tau_diff, row in zip(labels, tau_diffs, magnitudes):
            writer.writerow(
                ["LOS" if is_los else "NLOS", repr(float(tau_diff * 1e9)), row.size]
                + [repr(float(v)) for v in row]
            )


def read_labeled_dataset(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read classifier rows back -> (labels, tau_diff_ns, magnitudes)."""
    labels, tau_ns, rows = [], [], []
    for row in csv_rows(path):
        if row[0] not in ("LOS", "NLOS"):
            raise ValueError(f"bad label {row[0]!r}")
        k = int(row[2])
        if len(row) != 3 + k:
            raise ValueError("magnitude count does not match the declared length")
        labels.append(row[0] == "LOS")
        tau_ns.append(float(row[1]))
        rows.append([float(v) for v in row[3:]])
    if not rows:
        raise ValueError("empty dataset")
    return np.asarray(labels), np.asarray(tau_ns), np.asarray(rows)
