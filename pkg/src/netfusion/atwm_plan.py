"""Pump and channel planning for time/wavelength multiplexed networks.

Frequencies live on the 100 GHz ITU grid and are held as integer counts of
0.1 THz ("ticks") so that pair matching is exact; wavelengths are derived.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

C_NM_THZ = 299792.458
GRID_ORIGIN_TICKS = 1900  # 190.0 THz
TICK_THZ = 0.1


class ScheduleInfeasibleError(ValueError):
    """The pump train does not fit inside one laser period."""


def ticks_to_wavelength_nm(ticks: int | float) -> float:
    return C_NM_THZ / (ticks * TICK_THZ)


def wavelength_to_frequency_thz(wavelength_nm: float) -> float:
    return C_NM_THZ / wavelength_nm


@dataclass(frozen=True, order=True)
class ItuChannel:
    channel_number: int

    @classmethod
    def coerce(cls, value: "ItuChannel | int") -> "ItuChannel":
        if isinstance(value, ItuChannel):
            return value
        if isinstance(value, bool) or int(value) != value:
            raise ValueError(f"channel number must be an integer, got {value!r}")
        return cls(int(value))

    @property
    def ticks(self) -> int:
        return GRID_ORIGIN_TICKS + self.channel_number

    @property
    def frequency(self) -> float:
        """Optical frequency in THz."""
        return self.ticks * TICK_THZ

    @property
    def wavelength(self) -> float:
        """Vacuum wavelength in nm."""
        return ticks_to_wavelength_nm(self.ticks)

    def __str__(self):
        return f"CH{self.channel_number}"


@dataclass(frozen=True)
class PumpSlot:
    slot_index: int
    sh_ticks: int
    time_offset: int  # ps
    served_pairs: tuple[tuple[ItuChannel, ItuChannel], ...]

    @property
    def sh_frequency(self) -> float:
        return self.sh_ticks * TICK_THZ

    @property
    def sh_wavelength(self) -> float:
        return ticks_to_wavelength_nm(self.sh_ticks)

    @property
    def telecom_frequency(self) -> float:
        return self.sh_frequency / 2

    @property
    def telecom_wavelength(self) -> float:
        return ticks_to_wavelength_nm(self.sh_ticks / 2)


@dataclass(frozen=True)
class PumpSchedule:
    network_id: str
    channels: tuple[ItuChannel, ...]
    delta_t: int  # ps
    rep_period: float  # ps
    slots: tuple[PumpSlot, ...]

    @property
    def n_users(self) -> int:
        return len(self.channels)

    def slot(self, index: int) -> PumpSlot:
        for s in self.slots:
            if s.slot_index == index:
                return s
        raise KeyError(index)

    def node(self, channel: "ItuChannel | int") -> str:
        return node_name(self.network_id, ItuChannel.coerce(channel))

    def without_slot(self, index: int) -> "PumpSchedule":
        return PumpSchedule(
            self.network_id,
            self.channels,
            self.delta_t,
            self.rep_period,
            tuple(s for s in self.slots if s.slot_index != index),
        )


def node_name(network_id: str, channel: ItuChannel) -> str:
    return f"{network_id}:{channel}" if network_id else str(channel)


def channel_range(first: int, last: int) -> list[ItuChannel]:
    return [ItuChannel(n) for n in range(first, last + 1)]


def rep_period_ps(rep_rate_hz: float) -> float:
    return 1e12 / rep_rate_hz


def pair_slot_index(rank_a: int, rank_b: int) -> int:
    """Slot of a pair from 1-based frequency ranks; equal sums share a slot."""
    return rank_a + rank_b - 2


def plan_pumps(
    channels: Iterable["ItuChannel | int"],
    delta_t: int = 300,
    rep_period: float = rep_period_ps(60e6),
    network_id: str = "",
) -> PumpSchedule:
    """Build the 2N-3 slot pump train serving every unordered channel pair once.

    Channels must be distinct and equally spaced on the grid. Slots are
    ordered by increasing second-harmonic frequency (decreasing wavelength
    index), and slot k starts ``(k - 1) * delta_t`` after the laser pulse.
    """
    chans = [ItuChannel.coerce(c) for c in channels]
    n = len(chans)
    if n < 2:
        raise ValueError("a network needs at least two users")
    if len(set(chans)) != n:
        dupes = sorted({str(c) for c in chans if chans.count(c) > 1})
        raise ValueError(f"duplicate channels: {', '.join(dupes)}")
    chans.sort()
    steps = {b.ticks - a.ticks for a, b in zip(chans, chans[1:])}
    if len(steps) > 1:
        raise ValueError("channels must be equally spaced on the grid")
    if delta_t <= 0 or rep_period <= 0:
        raise ValueError("delta_t and rep_period must be positive")
    n_slots = 2 * n - 3
    if n_slots * delta_t >= rep_period:
        raise ScheduleInfeasibleError(
            f"pump train does not fit: (2N−3)·Δt < period violated "
            f"({n_slots}·{delta_t} ps = {n_slots * delta_t} ps >= {rep_period:g} ps)"
        )

    by_slot: dict[int, list[tuple[ItuChannel, ItuChannel]]] = {}
    sums: dict[int, int] = {}
    for (ra, a), (rb, b) in itertools.combinations(enumerate(chans, start=1), 2):
        k = pair_slot_index(ra, rb)
        by_slot.setdefault(k, []).append((a, b))
        s = a.ticks + b.ticks
        assert sums.setdefault(k, s) == s
    slots = tuple(
        PumpSlot(k, sums[k], (k - 1) * delta_t, tuple(by_slot[k])) for k in range(1, n_slots + 1)
    )
    return PumpSchedule(network_id, tuple(chans), int(delta_t), float(rep_period), slots)


def slot_of_pair(schedule: PumpSchedule, a: "ItuChannel | int", b: "ItuChannel | int") -> int:
    a, b = ItuChannel.coerce(a), ItuChannel.coerce(b)
    if a == b:
        raise ValueError("a user is never paired with itself")
    for c in (a, b):
        if c not in schedule.channels:
            raise ValueError(f"{c} is not in network {schedule.network_id or '?'}")
    key = tuple(sorted((a, b)))
    for s in schedule.slots:
        if key in s.served_pairs:
            return s.slot_index
    raise ValueError(f"pair {a}-{b} is not served by any slot")


def pair_slot_map(schedule: PumpSchedule) -> dict[tuple[int, int], int]:
    """``(lower channel number, higher channel number) -> slot index``."""
    return {
        (a.channel_number, b.channel_number): s.slot_index
        for s in schedule.slots
        for a, b in s.served_pairs
    }


DIRECT = "direct"
SWAPPED = "swapped"


@dataclass(frozen=True)
class TopologyGraph:
    """Undirected simple graph with labelled edge kinds."""

    nodes: tuple[str, ...]
    edges: Mapping[frozenset, str] = field(default_factory=dict)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if len(set(nodes)) != len(nodes):
            raise ValueError("duplicate node names")
        known = set(nodes)
        edges = {}
        for e, kind in dict(self.edges).items():
            e = frozenset(e)
            if len(e) != 2:
                raise ValueError(f"self-loop or malformed edge {set(e)}")
            if not e <= known:
                raise ValueError(f"edge {sorted(e)} references unknown node")
            edges[e] = kind
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def edge_count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.edges)
        return sum(1 for k in self.edges.values() if k == kind)

    def is_complete(self) -> bool:
        n = len(self.nodes)
        return len(self.edges) == n * (n - 1) // 2

    def missing_edges(self) -> list[tuple[str, str]]:
        return [
            (a, b)
            for a, b in itertools.combinations(self.nodes, 2)
            if frozenset((a, b)) not in self.edges
        ]

    def to_dict(self) -> dict:
        order = {n: i for i, n in enumerate(self.nodes)}
        edges = sorted(
            (sorted(e, key=order.__getitem__) + [k] for e, k in self.edges.items()),
            key=lambda r: (order[r[0]], order[r[1]]),
        )
        return {
            "nodes": list(self.nodes),
            "edges": [{"a": a, "b": b, "kind": k} for a, b, k in edges],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TopologyGraph":
        return cls(
            tuple(doc["nodes"]),
            {frozenset((e["a"], e["b"])): e["kind"] for e in doc["edges"]},
        )


@dataclass(frozen=True)
class ConnectivityReport:
    graph: TopologyGraph
    missing_pairs: tuple[tuple[ItuChannel, ItuChannel], ...]

    @property
    def fully_connected(self) -> bool:
        return not self.missing_pairs


def verify_full_connectivity(schedule: PumpSchedule) -> ConnectivityReport:
    """Graph of the links a schedule actually serves, plus any missing pairs."""
    served = {p for s in schedule.slots for p in s.served_pairs}
    chans = sorted(schedule.channels)
    wanted = list(itertools.combinations(chans, 2))
    edges = {
        frozenset((schedule.node(a), schedule.node(b))): DIRECT for a, b in wanted if (a, b) in served
    }
    graph = TopologyGraph(tuple(schedule.node(c) for c in chans), edges)
    return ConnectivityReport(graph, tuple(p for p in wanted if p not in served))


def fuse_topologies(
    a: TopologyGraph, b: TopologyGraph, sacrificed_a: str, sacrificed_b: str
) -> TopologyGraph:
    """Merge two complete graphs through a swap between one node of each."""
    if sacrificed_a not in a.nodes:
        raise ValueError(f"{sacrificed_a} is not a node of the first network")
    if sacrificed_b not in b.nodes:
        raise ValueError(f"{sacrificed_b} is not a node of the second network")
    if set(a.nodes) & set(b.nodes):
        raise ValueError("networks share node names")
    for g in (a, b):
        if not g.is_complete():
            raise ValueError("both networks must be fully connected before fusion")
    keep_a = [n for n in a.nodes if n != sacrificed_a]
    keep_b = [n for n in b.nodes if n != sacrificed_b]
    edges = {}
    for g, sac in ((a, sacrificed_a), (b, sacrificed_b)):
        for e, kind in g.edges.items():
            if sac not in e:
                edges[e] = kind
    for x in keep_a:
        for y in keep_b:
            edges[frozenset((x, y))] = SWAPPED
    return TopologyGraph(tuple(keep_a + keep_b), edges)


@dataclass(frozen=True)
class AlignmentSetting:
    index: int
    pairs: tuple[tuple[ItuChannel, ItuChannel], ...]


def alignment_schedule(
    idlers_a: Sequence["ItuChannel | int"], idlers_b: Sequence["ItuChannel | int"]
) -> list[AlignmentSetting]:
    """Cyclic delay settings overlapping every A idler with every B idler once.

    Setting d pairs the i-th A idler with the ((i + d - 2) mod n + 1)-th B
    idler (1-based), so setting 1 is the diagonal and the n settings form a
    Latin square over the n*n cross pairs.
    """
    ia = [ItuChannel.coerce(c) for c in idlers_a]
    ib = [ItuChannel.coerce(c) for c in idlers_b]
    if len(ia) != len(ib):
        raise ValueError(f"idler lists differ in size ({len(ia)} vs {len(ib)})")
    if not ia:
        raise ValueError("no idlers to align")
    n = len(ia)
    return [
        AlignmentSetting(d, tuple((ia[i], ib[(i + d - 1) % n]) for i in range(n)))
        for d in range(1, n + 1)
    ]


def bsm_delay_offsets(
    schedule_a: PumpSchedule,
    schedule_b: PumpSchedule,
    setting: AlignmentSetting,
    bsm_channel: "ItuChannel | int",
) -> dict[int, int]:
    """Per-pair extra delay (ps) on network B's pump so the CH-bsm photons overlap.

    Keyed by the B idler channel number; each value is the B-side delay that
    moves the B slot of (bsm, idler_b) onto the A slot of (bsm, idler_a).
    """
    bsm = ItuChannel.coerce(bsm_channel)
    out = {}
    for ca, cb in setting.pairs:
        ta = schedule_a.slot(slot_of_pair(schedule_a, bsm, ca)).time_offset
        tb = schedule_b.slot(slot_of_pair(schedule_b, bsm, cb)).time_offset
        out[cb.channel_number] = ta - tb
    return out


def schedule_to_dict(schedule: PumpSchedule) -> dict:
    return {
        "network_id": schedule.network_id,
        "channels": [c.channel_number for c in schedule.channels],
        "delta_t_ps": schedule.delta_t,
        "rep_period_ps": round(schedule.rep_period, 3),
        "slot_count": len(schedule.slots),
        "slots": [
            {
                "slot_index": s.slot_index,
                "sh_frequency_thz": round(s.sh_frequency, 1),
                "sh_wavelength_nm": round(s.sh_wavelength, 2),
                "telecom_wavelength_nm": round(s.telecom_wavelength, 2),
                "time_offset_ps": s.time_offset,
                "pairs": [[a.channel_number, b.channel_number] for a, b in s.served_pairs],
            }
            for s in schedule.slots
        ],
    }


def schedule_from_dict(doc: Mapping) -> PumpSchedule:
    slots = tuple(
        PumpSlot(
            int(s["slot_index"]),
            int(round(s["sh_frequency_thz"] / TICK_THZ)),
            int(s["time_offset_ps"]),
            tuple((ItuChannel(a), ItuChannel(b)) for a, b in s["pairs"]),
        )
        for s in doc["slots"]
    )
    return PumpSchedule(
        doc.get("network_id", ""),
        tuple(ItuChannel(c) for c in doc["channels"]),
        int(doc["delta_t_ps"]),
        float(doc["rep_period_ps"]),
        slots,
    )
