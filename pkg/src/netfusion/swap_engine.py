"""Linear-optics Bell-state measurement and two-network fusion."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import quantum_state as qs
from .analysis import fidelity_from_visibility
from .atwm_plan import (
    AlignmentSetting,
    ItuChannel,
    PumpSchedule,
    TopologyGraph,
    bsm_delay_offsets,
    fuse_topologies,
    slot_of_pair,
    verify_full_connectivity,
)
from .quantum_state import BellKind, DensityMatrix


class Detector(enum.Enum):
    H1 = "D_H1"
    V1 = "D_V1"
    H2 = "D_H2"
    V2 = "D_V2"


class BsmOutcome(enum.Enum):
    PSI_MINUS = "psi-"
    PSI_PLUS = "psi+"
    INCONCLUSIVE = "inconclusive"

    @property
    def bell_kind(self) -> BellKind:
        if self is BsmOutcome.INCONCLUSIVE:
            raise ValueError("an inconclusive outcome heralds no Bell state")
        return BellKind.PSI_MINUS if self is BsmOutcome.PSI_MINUS else BellKind.PSI_PLUS


class CoverageError(ValueError):
    """Alignment settings leave some cross-network pair unswapped."""


_PATTERNS = {
    frozenset({Detector.H1, Detector.V2}): BsmOutcome.PSI_MINUS,
    frozenset({Detector.V1, Detector.H2}): BsmOutcome.PSI_MINUS,
    frozenset({Detector.H1, Detector.V1}): BsmOutcome.PSI_PLUS,
    frozenset({Detector.H2, Detector.V2}): BsmOutcome.PSI_PLUS,
}


def classify_pattern(clicks: Iterable[Detector | str]) -> BsmOutcome:
    """Map a set of clicked BSM detectors to the heralded outcome."""
    p = frozenset(Detector(c) if isinstance(c, str) else c for c in clicks)
    return _PATTERNS.get(p, BsmOutcome.INCONCLUSIVE)


def all_patterns() -> list[frozenset]:
    dets = list(Detector)
    return [
        frozenset(c) for r in range(len(dets) + 1) for c in itertools.combinations(dets, r)
    ]


_HV = np.kron(qs.H, qs.V)
_VH = np.kron(qs.V, qs.H)


def _branch(m4: np.ndarray, ket: np.ndarray) -> np.ndarray:
    # <ket| rho |ket> on the leading qubit pair of a (4,4,4,4) tensor
    return np.einsum("i,iajb,j->ab", ket.conj(), m4, ket)


def _swap_tensor(rho_a: DensityMatrix, rho_b: DensityMatrix) -> np.ndarray:
    if rho_a.qubit_count != 2 or rho_b.qubit_count != 2:
        raise qs.StateError("swap inputs must be two-qubit (CH31, idler) states")
    joint = qs.tensor(rho_a, rho_b)
    order = list(qs.BSM_QUBITS) + list(qs.IDLER_QUBITS)
    return qs.permute_qubits(joint, order).matrix.reshape(4, 4, 4, 4)


def _unnormalized_branch(m4: np.ndarray, outcome: BsmOutcome, xi: float) -> np.ndarray:
    coherent = _branch(m4, qs.bell_vector(outcome.bell_kind))
    # distinguishable photons: HV and VH each reach a conclusive pattern of
    # this outcome with probability 1/2, without interfering
    incoherent = 0.5 * (_branch(m4, _HV) + _branch(m4, _VH))
    out = xi * coherent + (1 - xi) * incoherent
    return (out + out.conj().T) / 2


def bsm_branch_probabilities(
    rho_a: DensityMatrix, rho_b: DensityMatrix, xi: float = 1.0
) -> dict[BsmOutcome, float]:
    _check_xi(xi)
    m4 = _swap_tensor(rho_a, rho_b)
    out = {
        o: float(np.trace(_unnormalized_branch(m4, o, xi)).real)
        for o in (BsmOutcome.PSI_MINUS, BsmOutcome.PSI_PLUS)
    }
    out[BsmOutcome.INCONCLUSIVE] = 1.0 - sum(out.values())
    return out


def click_probabilities(rho_pair: DensityMatrix, xi: float = 1.0) -> dict[frozenset, float]:
    """Click-pattern distribution for the two BSM photons (non-resolving detectors).

    ``rho_pair`` is the joint polarization state of (CH31_A, CH31_B). Photons
    with equal polarization bunch when they interfere; in the HV/VH sector
    the psi+ part bunches and the psi- part antibunches. The non-interfering
    fraction ``1 - xi`` leaves each photon in a random port.
    """
    _check_xi(xi)
    if rho_pair.qubit_count != 2:
        raise qs.StateError("click_probabilities needs the two-qubit BSM state")
    m = rho_pair.matrix
    pop = lambda ket: float((ket.conj() @ m @ ket).real)  # noqa: E731
    p_hh = pop(np.kron(qs.H, qs.H))
    p_vv = pop(np.kron(qs.V, qs.V))
    hv_total = pop(_HV) + pop(_VH)
    p_minus = xi * pop(qs.bell_vector(BellKind.PSI_MINUS)) + (1 - xi) * hv_total / 2
    p_plus = hv_total - p_minus
    D = Detector
    probs = {p: 0.0 for p in all_patterns()}
    bunched = xi / 2 + (1 - xi) / 4
    probs[frozenset({D.H1})] = probs[frozenset({D.H2})] = p_hh * bunched
    probs[frozenset({D.V1})] = probs[frozenset({D.V2})] = p_vv * bunched
    probs[frozenset({D.H1, D.H2})] = p_hh * (1 - xi) / 2
    probs[frozenset({D.V1, D.V2})] = p_vv * (1 - xi) / 2
    probs[frozenset({D.H1, D.V2})] = p_minus / 2
    probs[frozenset({D.V1, D.H2})] = p_minus / 2
    probs[frozenset({D.H1, D.V1})] = p_plus / 2
    probs[frozenset({D.H2, D.V2})] = p_plus / 2
    return probs


def _check_xi(xi: float):
    if not 0 <= xi <= 1:
        raise ValueError(f"mode overlap xi={xi} is not in [0, 1]")


def swapped_state(
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
    outcome: BsmOutcome = BsmOutcome.PSI_MINUS,
    xi: float = 1.0,
) -> tuple[float, DensityMatrix]:
    """Heralded idler state after a BSM on the two CH31 photons.

    ``rho_a`` and ``rho_b`` are (CH31, idler) states of each network. A
    fraction ``xi`` of the events interferes on the beam splitter and projects
    onto the heralded Bell state; the rest is an incoherent mixture of the HV
    and VH projections. For Bell-diagonal inputs this equals
    ``xi * rho_ideal + (1 - xi) * diag(rho_ideal)``.
    """
    _check_xi(xi)
    if outcome is BsmOutcome.INCONCLUSIVE:
        raise ValueError("cannot compute a swapped state for an inconclusive outcome")
    m4 = _swap_tensor(rho_a, rho_b)
    branch = _unnormalized_branch(m4, outcome, xi)
    p = float(np.trace(branch).real)
    if p <= qs.ATOL:
        raise qs.ImpossibleOutcomeError(f"outcome {outcome.value} has probability {p:.3g}")
    return min(p, 1.0), DensityMatrix(branch / np.trace(branch).real)


def fringe_visibility_of_state(rho: DensityMatrix, basis: str) -> float:
    """Analytic visibility of a two-photon fringe.

    The first photon is projected on ``basis`` ('H' or 'D'); the second is
    analysed along a linear polarization swept over all angles phi, giving a
    rate ``a + b cos 2phi + c sin 2phi``; visibility is ``sqrt(b^2+c^2)/a``.
    """
    p_first = qs.BASIS_PROJECTORS[basis]
    a = rho.expectation(np.kron(p_first, np.eye(2))) / 2
    b = rho.expectation(np.kron(p_first, qs.PAULI_Z)) / 2
    c = rho.expectation(np.kron(p_first, qs.PAULI_X)) / 2
    if a <= 0:
        raise ValueError(f"no coincidences with the first photon in {basis}")
    return float(np.hypot(b, c) / a)


@dataclass(frozen=True)
class SwapConfig:
    mode_overlap_xi: float = 1.0
    bsm_outcome_filter: BsmOutcome = BsmOutcome.PSI_MINUS

    def __post_init__(self):
        _check_xi(self.mode_overlap_xi)
        if self.bsm_outcome_filter is BsmOutcome.INCONCLUSIVE:
            raise ValueError("fusion must herald a conclusive outcome")


@dataclass(frozen=True)
class SwapRecord:
    a_channel: int
    b_channel: int
    setting_index: int
    xi: float
    outcome_probabilities: Mapping[BsmOutcome, float]
    outcome_counts: Mapping[BsmOutcome, int] | None
    state: DensityMatrix
    visibility_hv: float
    visibility_da: float
    fidelity: float
    state_fidelity: float

    def to_dict(self) -> dict:
        d = {
            "a_channel": self.a_channel,
            "b_channel": self.b_channel,
            "setting_index": self.setting_index,
            "xi": self.xi,
            "outcome_probabilities": {o.value: p for o, p in self.outcome_probabilities.items()},
            "visibility_hv": self.visibility_hv,
            "visibility_da": self.visibility_da,
            "fidelity": self.fidelity,
            "state_fidelity": self.state_fidelity,
            "state_real": np.real(self.state.matrix).tolist(),
            "state_imag": np.imag(self.state.matrix).tolist(),
        }
        if self.outcome_counts is not None:
            d["outcome_counts"] = {o.value: int(n) for o, n in self.outcome_counts.items()}
        return d


@dataclass(frozen=True)
class FusionReport:
    bsm_channel: int
    outcome: BsmOutcome
    records: tuple[SwapRecord, ...]
    topology: TopologyGraph
    delays_ps: Mapping[int, Mapping[int, int]] = field(default_factory=dict)

    def record(self, a_channel: int, b_channel: int) -> SwapRecord:
        for r in self.records:
            if (r.a_channel, r.b_channel) == (a_channel, b_channel):
                return r
        raise KeyError((a_channel, b_channel))

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean([r.fidelity for r in self.records]))

    @property
    def mean_visibility(self) -> float:
        return float(np.mean([r.visibility_da for r in self.records]))

    def to_dict(self) -> dict:
        return {
            "bsm_channel": self.bsm_channel,
            "outcome": self.outcome.value,
            "mean_fidelity": self.mean_fidelity,
            "mean_visibility_da": self.mean_visibility,
            "pairs": [r.to_dict() for r in self.records],
            "alignment_delays_ps": {
                str(d): {str(k): v for k, v in m.items()} for d, m in self.delays_ps.items()
            },
            "topology": self.topology.to_dict(),
        }


StateSource = Callable[[str, int], DensityMatrix]


def ideal_inputs(network_id: str, idler_channel: int) -> DensityMatrix:
    return qs.bell_state(BellKind.PHI_PLUS)


def run_fusion(
    plan_a: PumpSchedule,
    plan_b: PumpSchedule,
    schedule: list[AlignmentSetting],
    config: SwapConfig = SwapConfig(),
    input_states: StateSource = ideal_inputs,
    bsm_channel: int = 31,
    xi_per_pair: Mapping[tuple[int, int], float] | None = None,
    trials: int | None = None,
    seed: int = 0,
) -> FusionReport:
    """State-level swap for every cross-network idler pair.

    ``input_states(network_id, idler_channel)`` supplies the (CH-bsm, idler)
    state of each link. With ``trials`` set, BSM outcome counts are drawn
    from the branch probabilities with one substream per pair.
    """
    bsm = ItuChannel(bsm_channel)
    for plan in (plan_a, plan_b):
        if bsm not in plan.channels:
            raise ValueError(f"network {plan.network_id!r} has no {bsm}")
    idlers_a = [c for c in plan_a.channels if c != bsm]
    idlers_b = [c for c in plan_b.channels if c != bsm]
    setting_of: dict[tuple[int, int], int] = {}
    delays: dict[int, dict[int, int]] = {}
    for s in schedule:
        for ca, cb in s.pairs:
            setting_of.setdefault((ca.channel_number, cb.channel_number), s.index)
        delays[s.index] = bsm_delay_offsets(plan_a, plan_b, s, bsm)
    wanted = [(a.channel_number, b.channel_number) for a in idlers_a for b in idlers_b]
    uncovered = [p for p in wanted if p not in setting_of]
    if uncovered:
        raise CoverageError(f"alignment leaves cross pairs unswapped: {uncovered}")

    # slot lookups double as a check that every link is actually served
    for a, b in wanted:
        slot_of_pair(plan_a, bsm, a)
        slot_of_pair(plan_b, bsm, b)

    rng_root = np.random.SeedSequence(seed)
    children = rng_root.spawn(len(wanted)) if trials else [None] * len(wanted)
    kind = config.bsm_outcome_filter.bell_kind
    records = []
    for (a, b), child in zip(sorted(wanted), children):
        xi = config.mode_overlap_xi if xi_per_pair is None else xi_per_pair.get((a, b), config.mode_overlap_xi)
        rho_a = input_states(plan_a.network_id, a)
        rho_b = input_states(plan_b.network_id, b)
        probs = bsm_branch_probabilities(rho_a, rho_b, xi)
        counts = None
        if trials:
            rng = np.random.default_rng(child)
            keys = list(probs)
            p = np.clip([probs[k] for k in keys], 0, None)
            counts = dict(zip(keys, rng.multinomial(trials, p / p.sum())))
        _, state = swapped_state(rho_a, rho_b, config.bsm_outcome_filter, xi)
        v_da = fringe_visibility_of_state(state, "D")
        records.append(
            SwapRecord(
                a_channel=a,
                b_channel=b,
                setting_index=setting_of[(a, b)],
                xi=xi,
                outcome_probabilities=probs,
                outcome_counts=counts,
                state=state,
                visibility_hv=fringe_visibility_of_state(state, "H"),
                visibility_da=v_da,
                fidelity=fidelity_from_visibility(v_da),
                state_fidelity=qs.fidelity(state, qs.bell_state(kind)),
            )
        )
    topo = fuse_topologies(
        verify_full_connectivity(plan_a).graph,
        verify_full_connectivity(plan_b).graph,
        plan_a.node(bsm),
        plan_b.node(bsm),
    )
    return FusionReport(bsm_channel, config.bsm_outcome_filter, tuple(records), topo, delays)
