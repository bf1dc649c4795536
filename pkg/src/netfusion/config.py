"""Scenario configuration: JSON parsing, validation and canonical serialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .atwm_plan import ItuChannel, PumpSchedule, plan_pumps, rep_period_ps
from .photon_sim import DetectorParams, LinkParams, SourceParams, mode_overlap_from_filters
from .quantum_state import BellKind
from .swap_engine import BsmOutcome

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _get(doc: Mapping, key: str, path: str, kind, default=...):
    if key not in doc:
        if default is ...:
            raise ConfigError("missing required entry", f"{path}{key}")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"expected {name}, got {type(value).__name__}", f"{path}{key}")
    return value


def _known(doc: Mapping, keys: tuple[str, ...], path: str) -> None:
    """Reject misspelled or unsupported entries instead of ignoring them."""
    for k in doc:
        if k not in keys:
            raise ConfigError(f"unknown entry (expected one of {', '.join(keys)})", f"{path}{k}")


def _build(cls, path: str, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def _parse_channels(value, path: str) -> tuple[int, ...]:
    if isinstance(value, Mapping):
        first = _get(value, "first", path + ".", int)
        last = _get(value, "last", path + ".", int)
        if last < first:
            raise ConfigError("last channel precedes first", path)
        return tuple(range(first, last + 1))
    if isinstance(value, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in value):
        return tuple(value)
    raise ConfigError("expected a list of channel numbers or {first, last}", path)


@dataclass(frozen=True)
class NetworkConfig:
    id: str
    channels: tuple[int, ...]
    delta_t_ps: int = 300
    rep_rate_hz: float = 60e6
    source: SourceParams = SourceParams()
    detector: DetectorParams = DetectorParams()
    link: LinkParams = LinkParams()
    detector_overrides: Mapping[int, DetectorParams] = field(default_factory=dict)
    link_overrides: Mapping[int, LinkParams] = field(default_factory=dict)

    def schedule(self) -> PumpSchedule:
        return plan_pumps(self.channels, self.delta_t_ps, rep_period_ps(self.rep_rate_hz), self.id)

    def detectors(self) -> dict[int, DetectorParams]:
        return {c: self.detector_overrides.get(c, self.detector) for c in self.channels}

    def links(self) -> dict[int, LinkParams]:
        return {c: self.link_overrides.get(c, self.link) for c in self.channels}

    def to_dict(self) -> dict:
        det = lambda d: {  # noqa: E731
            "efficiency": d.efficiency,
            "dark_rate": d.dark_rate,
            "jitter_sigma_ps": d.jitter_sigma,
        }
        return {
            "id": self.id,
            "channels": list(self.channels),
            "delta_t_ps": self.delta_t_ps,
            "rep_rate_hz": self.rep_rate_hz,
            "source": {"mu": self.source.mu},
            "detectors": {
                **det(self.detector),
                "per_channel": {str(c): det(d) for c, d in sorted(self.detector_overrides.items())},
            },
            "links": {
                "transmission": self.link.transmission,
                "per_channel": {
                    str(c): {"transmission": l.transmission}
                    for c, l in sorted(self.link_overrides.items())
                },
            },
        }


_DETECTOR_KEYS = ("efficiency", "dark_rate", "jitter_sigma_ps")


def _parse_detector(doc: Mapping, path: str, base: DetectorParams, extra=()) -> DetectorParams:
    if not isinstance(doc, Mapping):
        raise ConfigError("expected an object", path.rstrip("."))
    _known(doc, _DETECTOR_KEYS + tuple(extra), path)
    return _build(
        DetectorParams,
        path.rstrip("."),
        efficiency=_get(doc, "efficiency", path, float, base.efficiency),
        dark_rate=_get(doc, "dark_rate", path, float, base.dark_rate),
        jitter_sigma=_get(doc, "jitter_sigma_ps", path, float, base.jitter_sigma),
    )


def _parse_network(doc: Any, path: str) -> NetworkConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("expected an object", path.rstrip("."))
    _known(doc, ("id", "channels", "delta_t_ps", "rep_rate_hz", "source", "detectors", "links"), path)
    nid = _get(doc, "id", path, str)
    channels = _parse_channels(doc.get("channels"), f"{path}channels")
    rep = _get(doc, "rep_rate_hz", path, float, 60e6)
    src_doc = _get(doc, "source", path, dict, {})
    _known(src_doc, ("mu",), f"{path}source.")
    source = _build(SourceParams, f"{path}source", mu=_get(src_doc, "mu", f"{path}source.", float, 0.01), rep_rate=rep)
    det_doc = _get(doc, "detectors", path, dict, {})
    detector = _parse_detector(det_doc, f"{path}detectors.", DetectorParams(), ("per_channel",))
    det_over = {}
    for key, sub in _get(det_doc, "per_channel", f"{path}detectors.", dict, {}).items():
        det_over[_channel_key(key, f"{path}detectors.per_channel.{key}")] = _parse_detector(
            sub, f"{path}detectors.per_channel.{key}.", detector
        )
    link_doc = _get(doc, "links", path, dict, {})
    _known(link_doc, ("transmission", "per_channel"), f"{path}links.")
    link = _build(LinkParams, f"{path}links", transmission=_get(link_doc, "transmission", f"{path}links.", float, 0.17))
    link_over = {}
    for key, sub in _get(link_doc, "per_channel", f"{path}links.", dict, {}).items():
        p = f"{path}links.per_channel.{key}"
        if not isinstance(sub, Mapping):
            raise ConfigError("expected an object", p)
        _known(sub, ("transmission",), p + ".")
        link_over[_channel_key(key, p)] = _build(
            LinkParams, p, transmission=_get(sub, "transmission", p + ".", float)
        )
    cfg = NetworkConfig(
        id=nid,
        channels=channels,
        delta_t_ps=_get(doc, "delta_t_ps", path, int, 300),
        rep_rate_hz=rep,
        source=source,
        detector=detector,
        link=link,
        detector_overrides=det_over,
        link_overrides=link_over,
    )
    stray = [c for c in list(det_over) + list(link_over) if c not in channels]
    if stray:
        raise ConfigError(f"overrides for channels not in the network: {stray}", f"{path}channels")
    return cfg


def _channel_key(key: str, path: str) -> int:
    try:
        return int(key.removeprefix("CH"))
    except ValueError:
        raise ConfigError("channel key must be a channel number", path) from None


@dataclass(frozen=True)
class FilterSpec:
    bw_a_nm: float = 0.1
    bw_b_nm: float = 0.1
    timing_mismatch_ps: float = 0.0
    calibration: float = 1.0

    def xi(self) -> float:
        return mode_overlap_from_filters(
            self.bw_a_nm, self.bw_b_nm, self.timing_mismatch_ps, calibration=self.calibration
        )


@dataclass(frozen=True)
class FusionConfig:
    bsm_channel: int = 31
    xi: float | None = 1.0
    filters: FilterSpec | None = None
    xi_per_pair: Mapping[tuple[int, int], float] = field(default_factory=dict)
    alignment: str | tuple[tuple[tuple[int, int], ...], ...] = "auto"
    outcome: BsmOutcome = BsmOutcome.PSI_MINUS
    input_visibility: float = 1.0

    def effective_xi(self) -> float:
        return self.filters.xi() if self.filters is not None else float(self.xi)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"bsm_channel": self.bsm_channel, "outcome": self.outcome.value}
        if self.filters is not None:
            d["filters"] = {
                "bw_a_nm": self.filters.bw_a_nm,
                "bw_b_nm": self.filters.bw_b_nm,
                "timing_mismatch_ps": self.filters.timing_mismatch_ps,
                "calibration": self.filters.calibration,
            }
        else:
            d["xi"] = self.xi
        if self.xi_per_pair:
            d["xi_per_pair"] = {f"{a}-{b}": v for (a, b), v in sorted(self.xi_per_pair.items())}
        d["alignment"] = (
            self.alignment
            if isinstance(self.alignment, str)
            else [[list(p) for p in s] for s in self.alignment]
        )
        d["input_visibility"] = self.input_visibility
        return d


def _parse_fusion(doc: Mapping) -> FusionConfig:
    p = "fusion."
    _known(doc, ("bsm_channel", "xi", "filters", "xi_per_pair", "alignment", "outcome", "input_visibility"), p)
    filters = None
    if "filters" in doc:
        f = _get(doc, "filters", p, dict)
        fp = p + "filters."
        _known(f, ("bw_a_nm", "bw_b_nm", "timing_mismatch_ps", "calibration"), fp)
        filters = FilterSpec(
            _get(f, "bw_a_nm", fp, float, 0.1),
            _get(f, "bw_b_nm", fp, float, 0.1),
            _get(f, "timing_mismatch_ps", fp, float, 0.0),
            _get(f, "calibration", fp, float, 1.0),
        )
        try:
            filters.xi()
        except ValueError as exc:
            raise ConfigError(str(exc), "fusion.filters") from None
        xi = None
    else:
        xi = _get(doc, "xi", p, float, 1.0)
        if not 0 <= xi <= 1:
            raise ConfigError("xi must lie in [0, 1]", "fusion.xi")
    per_pair = {}
    for key, v in _get(doc, "xi_per_pair", p, dict, {}).items():
        try:
            a, b = (int(x) for x in key.split("-"))
        except ValueError:
            raise ConfigError("keys must look like '32-33'", f"fusion.xi_per_pair.{key}") from None
        if not isinstance(v, (int, float)) or not 0 <= v <= 1:
            raise ConfigError("xi must be a number in [0, 1]", f"fusion.xi_per_pair.{key}")
        per_pair[(a, b)] = float(v)
    align = doc.get("alignment", "auto")
    if align != "auto":
        if not isinstance(align, list):
            raise ConfigError("expected 'auto' or a list of settings", "fusion.alignment")
        try:
            align = tuple(tuple((int(a), int(b)) for a, b in s) for s in align)
        except (TypeError, ValueError):
            raise ConfigError("each setting must be a list of [a, b] channel pairs", "fusion.alignment") from None
    try:
        outcome = BsmOutcome(_get(doc, "outcome", p, str, "psi-"))
    except ValueError:
        raise ConfigError("outcome must be 'psi-' or 'psi+'", "fusion.outcome") from None
    if outcome is BsmOutcome.INCONCLUSIVE:
        raise ConfigError("outcome must be 'psi-' or 'psi+'", "fusion.outcome")
    vin = _get(doc, "input_visibility", p, float, 1.0)
    if not 0 <= vin <= 1:
        raise ConfigError("input_visibility must lie in [0, 1]", "fusion.input_visibility")
    return FusionConfig(
        bsm_channel=_get(doc, "bsm_channel", p, int, 31),
        xi=xi,
        filters=filters,
        xi_per_pair=per_pair,
        alignment=align,
        outcome=outcome,
        input_visibility=vin,
    )


@dataclass(frozen=True)
class RunConfig:
    duration_s: float = 1.0
    seed: int = 1
    window_ps: int = 100
    chunk_pulses: int = 1 << 22
    outputs: tuple[str, ...] = ("plan", "simulate", "matrix", "xcorr", "fringes", "hom", "swap-report")

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "seed": self.seed,
            "window_ps": self.window_ps,
            "chunk_pulses": self.chunk_pulses,
            "outputs": list(self.outputs),
        }


ANALYSIS_DEFAULTS = {
    "xcorr": {"reference": 31, "bin_ps": 20, "span_ps": 1000},
    "fringes": {"points": 16, "peak_rate": 1.0, "integration_s": 400.0, "seed": 7},
    "hom": {"v0": [0.75, 0.835, 0.907], "sigma_ps": 2000.0, "delay_span_ps": 10000, "delay_step_ps": 500, "rt_counts": 1000},
}


@dataclass(frozen=True)
class ScenarioConfig:
    networks: tuple[NetworkConfig, ...]
    fusion: FusionConfig | None = None
    run: RunConfig = RunConfig()
    analysis: Mapping[str, Mapping[str, Any]] = field(default_factory=lambda: json.loads(json.dumps(ANALYSIS_DEFAULTS)))

    def network(self, nid: str) -> NetworkConfig:
        for n in self.networks:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "networks": [n.to_dict() for n in self.networks],
            "run": self.run.to_dict(),
            "analysis": self.analysis,
        }
        if self.fusion is not None:
            d["fusion"] = self.fusion.to_dict()
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _parse_analysis(doc: Mapping) -> dict:
    out = json.loads(json.dumps(ANALYSIS_DEFAULTS))
    for key, sub in doc.items():
        if key not in out:
            raise ConfigError("unknown analysis section", f"analysis.{key}")
        if not isinstance(sub, Mapping):
            raise ConfigError("expected an object", f"analysis.{key}")
        for k, v in sub.items():
            if k not in out[key]:
                raise ConfigError("unknown setting", f"analysis.{key}.{k}")
            out[key][k] = v
    return out


def parse_config(doc: Any) -> ScenarioConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("top level must be an object")
    _known(doc, ("format_version", "networks", "fusion", "run", "analysis"), "")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}", "format_version")
    nets = doc.get("networks")
    if not isinstance(nets, list) or not nets:
        raise ConfigError("need a non-empty list of networks", "networks")
    networks = tuple(_parse_network(n, f"networks[{i}].") for i, n in enumerate(nets))
    ids = [n.id for n in networks]
    if len(set(ids)) != len(ids):
        raise ConfigError("network ids must be unique", "networks")
    for i, n in enumerate(networks):
        try:
            for c in n.channels:
                ItuChannel.coerce(c)
        except ValueError as exc:
            raise ConfigError(str(exc), f"networks[{i}].channels") from None
    fusion = None
    if "fusion" in doc:
        fusion = _parse_fusion(_get(doc, "fusion", "", dict))
        if len(networks) != 2:
            raise ConfigError("fusion needs exactly two networks", "networks")
        for i, n in enumerate(networks):
            if fusion.bsm_channel not in n.channels:
                raise ConfigError(
                    f"bsm_channel {fusion.bsm_channel} is not in network {n.id}",
                    f"networks[{i}].channels",
                )
    run_doc = _get(doc, "run", "", dict, {})
    _known(run_doc, ("duration_s", "seed", "window_ps", "chunk_pulses", "outputs"), "run.")
    run = RunConfig(
        duration_s=_get(run_doc, "duration_s", "run.", float, 1.0),
        seed=_get(run_doc, "seed", "run.", int, 1),
        window_ps=_get(run_doc, "window_ps", "run.", int, 100),
        chunk_pulses=_get(run_doc, "chunk_pulses", "run.", int, 1 << 22),
        outputs=tuple(_get(run_doc, "outputs", "run.", list, list(RunConfig.outputs))),
    )
    if run.duration_s < 0:
        raise ConfigError("duration must be non-negative", "run.duration_s")
    stray = [o for o in run.outputs if o not in RunConfig.outputs]
    if stray:
        raise ConfigError(f"unknown outputs {stray} (expected a subset of {list(RunConfig.outputs)})", "run.outputs")
    if run.chunk_pulses <= 0:
        raise ConfigError("chunk_pulses must be positive", "run.chunk_pulses")
    analysis = _parse_analysis(_get(doc, "analysis", "", dict, {}))
    return ScenarioConfig(networks, fusion, run, analysis)


def loads(text: str) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{exc.msg} (column {exc.colno})", line=exc.lineno) from None
    return parse_config(doc)


def load(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def input_state_source(fusion: FusionConfig):
    """(network, idler) -> input link state: a phi+ Werner state of the configured visibility."""
    from .quantum_state import werner_state

    state = werner_state(BellKind.PHI_PLUS, fusion.input_visibility)
    return lambda network_id, channel: state
