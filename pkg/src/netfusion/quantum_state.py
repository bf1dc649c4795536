"""Dense linear algebra on small polarization-qubit systems.

Basis ordering is |H> = (1, 0), |V> = (0, 1). Multi-qubit kets use the
standard Kronecker ordering, so a two-qubit vector is indexed
(HH, HV, VH, VV) and qubit 0 is the most significant.

Four-qubit swap states use the fixed ordering
``(CH31_A, idler_A, CH31_B, idler_B)``; see :data:`SWAP_ORDER`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

ATOL = 1e-12
PSD_SLACK = 1e-10
MAX_QUBITS = 4

# (CH31_A, idler_A, CH31_B, idler_B)
SWAP_ORDER = ("ch31_a", "idler_a", "ch31_b", "idler_b")
BSM_QUBITS = (0, 2)
IDLER_QUBITS = (1, 3)

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)
D = (H + V) / np.sqrt(2)
A = (H - V) / np.sqrt(2)

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class StateError(ValueError):
    """Raised when a matrix is not a valid density matrix."""


class ImpossibleOutcomeError(ValueError):
    """Raised when a projection is requested on a zero-probability branch."""


class BellKind(enum.Enum):
    PHI_PLUS = "phi+"
    PHI_MINUS = "phi-"
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"


_S = 1 / np.sqrt(2)
_BELL_VECTORS = {
    BellKind.PHI_PLUS: np.array([_S, 0, 0, _S], dtype=complex),
    BellKind.PHI_MINUS: np.array([_S, 0, 0, -_S], dtype=complex),
    BellKind.PSI_PLUS: np.array([0, _S, _S, 0], dtype=complex),
    BellKind.PSI_MINUS: np.array([0, _S, -_S, 0], dtype=complex),
}


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=complex, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated, immutable density operator on 1 to 4 qubits."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise StateError(f"density matrix must be square, got shape {m.shape}")
        dim = m.shape[0]
        n = dim.bit_length() - 1
        if dim < 2 or (1 << n) != dim or n > MAX_QUBITS:
            raise StateError(f"dimension {dim} is not 2**n with 1 <= n <= {MAX_QUBITS}")
        if not np.allclose(m, m.conj().T, rtol=0, atol=ATOL):
            raise StateError("matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1) > ATOL:
            raise StateError(f"trace is {tr!r}, expected 1")
        if np.linalg.eigvalsh(m).min() < -PSD_SLACK:
            raise StateError("matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def qubit_count(self) -> int:
        return self.dim.bit_length() - 1

    def allclose(self, other: "DensityMatrix | np.ndarray", atol: float = ATOL) -> bool:
        other_m = other.matrix if isinstance(other, DensityMatrix) else np.asarray(other)
        return other_m.shape == self.matrix.shape and bool(
            np.allclose(self.matrix, other_m, rtol=0, atol=atol)
        )

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def expectation(self, operator: np.ndarray) -> float:
        return float(np.trace(self.matrix @ operator).real)


def pure(vector: Sequence[complex]) -> DensityMatrix:
    """Density matrix of a (normalized on the fly) ket."""
    v = np.asarray(vector, dtype=complex).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise StateError("zero vector has no state")
    v = v / norm
    return DensityMatrix(np.outer(v, v.conj()))


def product(labels: str) -> DensityMatrix:
    """Product state from polarization letters, e.g. ``product("HHVD")``."""
    kets = {"H": H, "V": V, "D": D, "A": A}
    try:
        v = kets[labels[0]]
        for ch in labels[1:]:
            v = np.kron(v, kets[ch])
    except (KeyError, IndexError):
        raise ValueError(f"bad polarization labels {labels!r}") from None
    return pure(v)


def maximally_mixed(qubits: int) -> DensityMatrix:
    dim = 2**qubits
    return DensityMatrix(np.eye(dim) / dim)


def bell_vector(kind: BellKind) -> np.ndarray:
    return _BELL_VECTORS[kind].copy()


def bell_state(kind: BellKind) -> DensityMatrix:
    return pure(_BELL_VECTORS[kind])


def werner_state(kind: BellKind, visibility: float) -> DensityMatrix:
    """``v |B><B| + (1 - v) I/4``; fringe visibility v in every basis."""
    if not -1 / 3 <= visibility <= 1:
        raise ValueError("Werner visibility must lie in [-1/3, 1]")
    b = bell_state(kind).matrix
    return DensityMatrix(visibility * b + (1 - visibility) * np.eye(4) / 4)


def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """Kronecker product; qubits of ``a`` come first."""
    if a.qubit_count + b.qubit_count > MAX_QUBITS:
        raise StateError(
            f"tensor of {a.qubit_count}+{b.qubit_count} qubits exceeds {MAX_QUBITS}"
        )
    return DensityMatrix(np.kron(a.matrix, b.matrix))


def permute_qubits(state: DensityMatrix, order: Sequence[int]) -> DensityMatrix:
    """Reorder qubits so that new qubit k is old qubit ``order[k]``."""
    n = state.qubit_count
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} qubits")
    t = state.matrix.reshape((2,) * (2 * n))
    t = t.transpose(order + [n + k for k in order])
    return DensityMatrix(t.reshape(state.dim, state.dim))


def partial_trace(state: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    n = state.qubit_count
    keep = list(keep)
    drop = [q for q in range(n) if q not in keep]
    t = state.matrix.reshape((2,) * (2 * n))
    # move kept qubits first, then trace dropped ones pairwise
    t = t.transpose(keep + drop + [n + q for q in keep] + [n + q for q in drop])
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.reshape(dk, dd, dk, dd)
    return DensityMatrix(np.einsum("ajbj->ab", t))


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    When either state is pure this reduces to ``<psi|other|psi>``, which is
    evaluated directly; small spurious eigenvalues of a rank-deficient
    matrix would otherwise cost several digits through the square roots.
    """
    for pure, other in ((rho, sigma), (sigma, rho)):
        w, u = np.linalg.eigh(pure.matrix)
        if w[-1] > 1 - 1e-9:
            psi = u[:, -1]
            return float(np.real(psi.conj() @ other.matrix @ psi))
    w, u = np.linalg.eigh(rho.matrix)
    sqrt_rho = (u * np.sqrt(np.clip(w, 0, None))) @ u.conj().T
    inner = sqrt_rho @ sigma.matrix @ sqrt_rho
    ev = np.clip(np.linalg.eigvalsh((inner + inner.conj().T) / 2), 0, None)
    return float(np.sum(np.sqrt(ev)) ** 2)


def _check_pairs(n: int, pair_a: Sequence[int], pair_b: Sequence[int]) -> list[int]:
    idx = list(pair_a) + list(pair_b)
    if len(pair_a) != 2 or len(pair_b) != 2:
        raise ValueError("each pair must name exactly two qubits")
    if len(set(idx)) != 4:
        raise ValueError(f"qubit pairs {tuple(pair_a)} and {tuple(pair_b)} overlap")
    if any(not 0 <= q < n for q in idx):
        raise ValueError(f"qubit index out of range for a {n}-qubit state")
    return idx


def bell_decompose(
    state: DensityMatrix,
    pair_a: Sequence[int] = BSM_QUBITS,
    pair_b: Sequence[int] = IDLER_QUBITS,
) -> dict[tuple[BellKind, BellKind], float]:
    """Joint Bell-basis populations of two qubit pairs of a 4-qubit state.

    Keys are ``(kind on pair_a, kind on pair_b)``. With the default pairs and
    two |phi+> inputs in swap order, each matched key carries 1/4.
    """
    if state.qubit_count != 4:
        raise StateError("bell_decompose needs a 4-qubit state")
    order = _check_pairs(4, pair_a, pair_b)
    m = permute_qubits(state, order).matrix
    out = {}
    for ka in BellKind:
        for kb in BellKind:
            v = np.kron(_BELL_VECTORS[ka], _BELL_VECTORS[kb])
            out[(ka, kb)] = float((v.conj() @ m @ v).real)
    return out


def project_and_trace(
    state: DensityMatrix,
    projector_pair: BellKind,
    onto: Sequence[int] = BSM_QUBITS,
) -> tuple[float, DensityMatrix]:
    """Project two qubits of a 4-qubit state onto a Bell state.

    Returns the branch probability and the renormalized state of the two
    remaining qubits (in ascending index order).
    """
    if state.qubit_count != 4:
        raise StateError("project_and_trace needs a 4-qubit state")
    onto = list(onto)
    rest = [q for q in range(4) if q not in onto]
    order = _check_pairs(4, onto, rest)
    m = permute_qubits(state, order).matrix.reshape(4, 4, 4, 4)
    b = _BELL_VECTORS[projector_pair]
    # <b| rho |b> on the first pair, leaving a 4x4 operator on the rest
    branch = np.einsum("i,iajb,j->ab", b.conj(), m, b)
    p = float(np.trace(branch).real)
    if p <= ATOL:
        raise ImpossibleOutcomeError(
            f"projection onto {projector_pair.value} has probability {p:.3g}"
        )
    branch = (branch + branch.conj().T) / 2
    return min(p, 1.0), DensityMatrix(branch / np.trace(branch).real)


class Port(enum.Enum):
    TRANSMIT_H = "transmit_H"
    REFLECT_V = "reflect_V"


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def hwp(theta: float) -> np.ndarray:
    r = rotation(theta)
    return r @ np.diag([1, -1]).astype(complex) @ r.conj().T


def qwp(theta: float) -> np.ndarray:
    r = rotation(theta)
    return r @ np.diag([1, 1j]) @ r.conj().T


@dataclass(frozen=True)
class AnalyzerSetting:
    """Waveplate angles in radians (stored modulo pi) and the PBS port.

    Light traverses the HWP, then the QWP, then the PBS.
    """

    hwp_angle: float = 0.0
    qwp_angle: float = 0.0
    port: Port = Port.TRANSMIT_H

    def __post_init__(self):
        object.__setattr__(self, "hwp_angle", float(self.hwp_angle) % np.pi)
        object.__setattr__(self, "qwp_angle", float(self.qwp_angle) % np.pi)
        object.__setattr__(self, "port", Port(self.port))


def analyzer_projector(setting: AnalyzerSetting) -> np.ndarray:
    """Rank-1 projector onto the input polarization that reaches ``setting.port``."""
    u = qwp(setting.qwp_angle) @ hwp(setting.hwp_angle)
    out = H if setting.port is Port.TRANSMIT_H else V
    ket = u.conj().T @ out
    return np.outer(ket, ket.conj())


def linear_projector(polarization_angle: float) -> np.ndarray:
    """Projector onto linear polarization at the given angle from H."""
    ket = np.array([np.cos(polarization_angle), np.sin(polarization_angle)], dtype=complex)
    return np.outer(ket, ket.conj())


BASIS_PROJECTORS: Mapping[str, np.ndarray] = {
    "H": np.outer(H, H.conj()),
    "V": np.outer(V, V.conj()),
    "D": np.outer(D, D.conj()),
    "A": np.outer(A, A.conj()),
}
