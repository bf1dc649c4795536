"""Event-level Monte Carlo of pair generation and detection, plus rate oracles.

Each SPDC process (one per served channel pair) emits a Poisson(mu) number
of pairs per pulse. Every photon is independently transmitted and detected
with probability ``efficiency * transmission`` and tagged at
``pulse_time + slot_offset + jitter`` in integer picoseconds. Detectors have
no dead time, so a detector may carry several tags with the same time.

Randomness is drawn per (chunk, process) from ``numpy.random.SeedSequence``
children, so a run is fully determined by its seed and chunk size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .atwm_plan import PumpSchedule

PS_PER_S = 10**12
DEFAULT_CHUNK_PULSES = 1 << 22
DEFAULT_WINDOW_PS = 100


@dataclass(frozen=True)
class SourceParams:
    mu: float = 0.01
    rep_rate: float = 60e6

    def __post_init__(self):
        if not 0 <= self.mu <= 0.2:
            raise ValueError(f"mu={self.mu} outside the modelled range [0, 0.2]")
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")

    @property
    def period_ps(self) -> float:
        return PS_PER_S / self.rep_rate


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.7
    dark_rate: float = 70.0  # counts/s
    jitter_sigma: float = 0.0  # ps

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must be a probability")
        if self.dark_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("dark_rate and jitter_sigma must be non-negative")


@dataclass(frozen=True)
class LinkParams:
    transmission: float = 0.17

    def __post_init__(self):
        if not 0 <= self.transmission <= 1:
            raise ValueError("transmission must be a probability")


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    detector_id: str
    tags: np.ndarray  # int64 ps, sorted
    duration_ps: int

    def __post_init__(self):
        t = np.asarray(self.tags, dtype=np.int64)
        if t.ndim != 1:
            raise ValueError("tags must be one-dimensional")
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] >= self.duration_ps):
            raise ValueError("tags must be sorted and inside [0, duration)")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "tags", t)

    def __len__(self):
        return self.tags.size

    def __eq__(self, other):
        return (
            isinstance(other, TimeTagStream)
            and self.detector_id == other.detector_id
            and self.duration_ps == other.duration_ps
            and np.array_equal(self.tags, other.tags)
        )


def _arm(det: DetectorParams, link: LinkParams) -> float:
    return det.efficiency * link.transmission


def expected_pair_rate(
    source: SourceParams,
    det_a: DetectorParams,
    det_b: DetectorParams,
    link_a: LinkParams,
    link_b: LinkParams,
) -> float:
    """True coincidences per second, first order in mu."""
    return source.mu * source.rep_rate * _arm(det_a, link_a) * _arm(det_b, link_b)


def expected_accidental_rate(
    source: SourceParams,
    det_a: DetectorParams,
    det_b: DetectorParams,
    link_a: LinkParams,
    link_b: LinkParams,
    unrelated_slots: bool = True,
    window_ps: float = DEFAULT_WINDOW_PS,
) -> float:
    """Accidental coincidences per second inside one gated slot.

    With p_x = mu * eta_x * T_x the per-pulse singles probability of each arm:

    * ``unrelated_slots=True``: the two photons come from independent SPDC
      processes sharing a slot, probability ``p_a * p_b`` per pulse.
    * ``unrelated_slots=False``: the slot of the pair itself; a reference
      photon of one pair meets the partner of another pair, probability
      ``p_a * p_b * (1 - eta_b * T_b)`` per pulse.

    Dark counts add ``2 w d_a d_b`` for window half-width w, plus the
    dark-signal cross terms ``2 w (d_a s_b + d_b s_a)`` where s_x = p_x R is
    the slot signal rate of each arm.
    """
    pa = source.mu * _arm(det_a, link_a)
    pb = source.mu * _arm(det_b, link_b)
    per_pulse = pa * pb if unrelated_slots else pa * pb * (1 - _arm(det_b, link_b))
    w = window_ps / PS_PER_S
    r = source.rep_rate
    darks = 2 * w * det_a.dark_rate * det_b.dark_rate
    cross = 2 * w * (det_a.dark_rate * pb * r + det_b.dark_rate * pa * r)
    return per_pulse * r + darks + cross


def pulse_start(pulse_index, period_ps: float):
    """Integer-ps start time of a pulse (array or scalar index)."""
    return np.floor(np.asarray(pulse_index, dtype=np.float64) * period_ps).astype(np.int64)


def _users(schedule: PumpSchedule) -> list[int]:
    return [c.channel_number for c in schedule.channels]


def iter_network_chunks(
    schedule: PumpSchedule,
    source: SourceParams,
    detectors: Mapping[int, DetectorParams],
    links: Mapping[int, LinkParams],
    duration: float,
    seed: int,
    chunk_pulses: int = DEFAULT_CHUNK_PULSES,
) -> Iterator[tuple[int, int, dict[int, np.ndarray]]]:
    """Yield ``(start_ps, stop_ps, {channel: sorted tags})`` chunk by chunk.

    Chunk boundaries fall on pulse times, and every slot of a pulse lands in
    the chunk of that pulse (jitter permitting).
    """
    users = _users(schedule)
    missing = [u for u in users if u not in detectors or u not in links]
    if missing:
        raise ValueError(f"no detector/link parameters for channels {missing}")
    period = source.period_ps
    duration_ps = int(round(duration * PS_PER_S))
    n_pulses = int(math.floor(duration_ps / period))
    processes = [
        (a.channel_number, b.channel_number, s.time_offset)
        for s in schedule.slots
        for a, b in s.served_pairs
    ]
    arm = {u: _arm(detectors[u], links[u]) for u in users}
    root = np.random.SeedSequence(seed)
    n_chunks = max(1, -(-n_pulses // chunk_pulses))
    for ci, ss in enumerate(root.spawn(n_chunks)):
        first = ci * chunk_pulses
        count = max(0, min(chunk_pulses, n_pulses - first))
        start = int(math.floor(first * period)) if ci else 0
        stop = duration_ps if ci == n_chunks - 1 else int(math.floor((first + count) * period))
        streams = {u: [] for u in users}
        children = ss.spawn(len(processes) + len(users))
        for (a, b, offset), child in zip(processes, children):
            rng = np.random.default_rng(child)
            k = rng.poisson(source.mu * count) if count else 0
            if k == 0:
                continue
            qa, qb = arm[a], arm[b]
            both, a_only, b_only, _ = rng.multinomial(
                k, [qa * qb, qa * (1 - qb), (1 - qa) * qb, (1 - qa) * (1 - qb)]
            )
            idx_both = rng.integers(0, count, both)
            idx_a = np.concatenate([idx_both, rng.integers(0, count, a_only)])
            idx_b = np.concatenate([idx_both, rng.integers(0, count, b_only)])
            for user, idx in ((a, idx_a), (b, idx_b)):
                t = pulse_start(first + idx, period) + offset
                sigma = detectors[user].jitter_sigma
                if sigma > 0:
                    t = t + np.rint(rng.normal(0.0, sigma, t.size)).astype(np.int64)
                streams[user].append(t)
        for user, child in zip(users, children[len(processes):]):
            rng = np.random.default_rng(child)
            d = detectors[user].dark_rate
            n_dark = rng.poisson(d * (stop - start) / PS_PER_S) if stop > start else 0
            if n_dark:
                streams[user].append(rng.integers(start, stop, n_dark, dtype=np.int64))
        out = {}
        for user in users:
            t = np.sort(np.concatenate(streams[user])) if streams[user] else np.empty(0, np.int64)
            out[user] = t[(t >= 0) & (t < duration_ps)]
        yield start, stop, out


def simulate_network(
    schedule: PumpSchedule,
    source: SourceParams,
    detectors: Mapping[int, DetectorParams],
    links: Mapping[int, LinkParams],
    duration: float,
    seed: int,
    chunk_pulses: int = DEFAULT_CHUNK_PULSES,
) -> dict[int, TimeTagStream]:
    """Tag streams for every user of one network, keyed by channel number."""
    duration_ps = int(round(duration * PS_PER_S))
    parts: dict[int, list[np.ndarray]] = {u: [] for u in _users(schedule)}
    for _, _, chunk in iter_network_chunks(
        schedule, source, detectors, links, duration, seed, chunk_pulses
    ):
        for u, t in chunk.items():
            parts[u].append(t)
    out = {}
    for u, ts in parts.items():
        tags = np.sort(np.concatenate(ts)) if ts else np.empty(0, np.int64)
        out[u] = TimeTagStream(schedule.node(u), tags, duration_ps)
    return out


def uniform_params(
    schedule: PumpSchedule, detector: DetectorParams, link: LinkParams
) -> tuple[dict[int, DetectorParams], dict[int, LinkParams]]:
    users = _users(schedule)
    return {u: detector for u in users}, {u: link for u in users}


def transmission_for_rate(
    target_rate: float, source: SourceParams, efficiency: float
) -> float:
    """Per-arm transmission giving ``target_rate`` true coincidences per second."""
    t = math.sqrt(target_rate / (source.mu * source.rep_rate)) / efficiency
    if t > 1:
        raise ValueError("target rate is unreachable even with lossless links")
    return t


@dataclass(frozen=True)
class HomModel:
    max_visibility_v0: float
    dip_sigma_tau: float  # ps
    relative_delay_tau: float = 0.0  # ps, centre of the dip

    def __post_init__(self):
        if not 0 <= self.max_visibility_v0 <= 1:
            raise ValueError("v0 must lie in [0, 1]")
        if self.dip_sigma_tau <= 0:
            raise ValueError("dip width must be positive")


def hom_coincidence_curve(model: HomModel, delays) -> np.ndarray:
    """Coincidence rate relative to the distinguishable level R_t (Gaussian dip)."""
    tau = np.asarray(delays, dtype=float) - model.relative_delay_tau
    return 1.0 - model.max_visibility_v0 * np.exp(-(tau**2) / (2 * model.dip_sigma_tau**2))


def _sigma_omega(bandwidth_nm: float, center_nm: float) -> float:
    # FWHM in nm -> rms angular frequency of the intensity spectrum, rad/ps
    dnu_thz = 299792.458 * bandwidth_nm / center_nm**2
    return 2 * math.pi * dnu_thz / (2 * math.sqrt(2 * math.log(2)))


def mode_overlap_from_filters(
    bw_a_nm: float,
    bw_b_nm: float,
    timing_mismatch_ps: float = 0.0,
    center_nm: float = 1552.52,
    calibration: float = 1.0,
) -> float:
    """Overlap of two Gaussian-filtered photons arriving ``timing_mismatch_ps`` apart.

    ``calibration * 2 s_a s_b / (s_a**2 + s_b**2) * exp(-2 s**2 tau**2)`` with
    ``s**-2 = s_a**-2 + s_b**-2`` and s_x the rms angular bandwidths.
    ``calibration`` lumps every other distinguishability into one factor.
    """
    if bw_a_nm <= 0 or bw_b_nm <= 0:
        raise ValueError("filter bandwidths must be positive")
    if not 0 <= calibration <= 1:
        raise ValueError("calibration must lie in [0, 1]")
    sa, sb = _sigma_omega(bw_a_nm, center_nm), _sigma_omega(bw_b_nm, center_nm)
    s2 = sa**2 * sb**2 / (sa**2 + sb**2)
    return calibration * 2 * sa * sb / (sa**2 + sb**2) * math.exp(-2 * s2 * timing_mismatch_ps**2)


def hom_model_from_filters(
    bw_a_nm: float, bw_b_nm: float, center_nm: float = 1552.52, calibration: float = 1.0
) -> HomModel:
    """Gaussian dip whose depth and width follow from the same overlap model."""
    sa, sb = _sigma_omega(bw_a_nm, center_nm), _sigma_omega(bw_b_nm, center_nm)
    s2 = sa**2 * sb**2 / (sa**2 + sb**2)
    v0 = mode_overlap_from_filters(bw_a_nm, bw_b_nm, 0.0, center_nm, calibration)
    return HomModel(v0, 1 / (2 * math.sqrt(s2)))
