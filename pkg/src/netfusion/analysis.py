"""Estimators that turn tag streams and states into measured quantities."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .atwm_plan import PumpSchedule, pair_slot_map, slot_of_pair
from .photon_sim import TimeTagStream, pulse_start
from .quantum_state import DensityMatrix, BASIS_PROJECTORS, linear_projector


class VisibilityUndefinedError(ValueError):
    """The data carry no fringe or dip from which to read a visibility."""


def _tags(x) -> np.ndarray:
    return x.tags if isinstance(x, TimeTagStream) else np.asarray(x, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_width: int  # ps
    origin: int  # ps, left edge of bin 0
    counts: np.ndarray

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        c = np.asarray(self.counts, dtype=np.int64)
        if c.size == 0 or np.any(c < 0):
            raise ValueError("counts must be a non-empty array of non-negative integers")
        object.__setattr__(self, "counts", c)

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.edges[:-1] + self.bin_width / 2

    def bin_of(self, delay: float) -> int:
        return int((delay - self.origin) // self.bin_width)

    def __eq__(self, other):
        return (
            isinstance(other, Histogram)
            and (self.bin_width, self.origin) == (other.bin_width, other.origin)
            and np.array_equal(self.counts, other.counts)
        )

    def __add__(self, other: "Histogram") -> "Histogram":
        if (self.bin_width, self.origin, self.counts.size) != (
            other.bin_width,
            other.origin,
            other.counts.size,
        ):
            raise ValueError("histograms have different binning")
        return Histogram(self.bin_width, self.origin, self.counts + other.counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# bin_width_ps={self.bin_width},origin_ps={self.origin}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["left_edge_ps", "count"])
        for e, c in zip(self.edges[:-1], self.counts):
            w.writerow([int(e), int(c)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        lines = text.splitlines()
        meta = dict(kv.split("=") for kv in lines[0].lstrip("# ").split(","))
        rows = list(csv.DictReader(lines[1:]))
        return cls(
            int(meta["bin_width_ps"]),
            int(meta["origin_ps"]),
            np.array([int(r["count"]) for r in rows], dtype=np.int64),
        )


def _pair_windows(ta: np.ndarray, tb: np.ndarray, lo: float, hi: float):
    """Index ranges of b-tags with ``lo <= tb - ta < hi`` for each a-tag."""
    start = np.searchsorted(tb, ta + lo, side="left")
    stop = np.searchsorted(tb, ta + hi, side="left")
    return start, stop


def cross_correlate(a, b, bin_width: int, span: int) -> Histogram:
    """Histogram of delays ``t_b - t_a`` over ``[-span, span)`` for all tag pairs."""
    if bin_width <= 0 or span <= 0:
        raise ValueError("bin_width and span must be positive")
    n_bins = -(-2 * span // bin_width)
    origin = -span
    ta, tb = _tags(a), _tags(b)
    counts = np.zeros(n_bins, dtype=np.int64)
    start, stop = _pair_windows(ta, tb, origin, origin + n_bins * bin_width)
    n = stop - start
    if n.sum():
        # expand the ragged (a, b-range) pairs without a Python loop
        owner = np.repeat(np.arange(ta.size), n)
        offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        delays = tb[start[owner] + offs] - ta[owner]
        counts += np.bincount((delays - origin) // bin_width, minlength=n_bins)
    return Histogram(bin_width, origin, counts)


def count_coincidences(a, b, window: int) -> int:
    """Number of a-tags with at least one b-tag within ``|t_b - t_a| <= window``."""
    ta, tb = _tags(a), _tags(b)
    if ta.size == 0 or tb.size == 0:
        return 0
    start = np.searchsorted(tb, ta - window, side="left")
    stop = np.searchsorted(tb, ta + window, side="right")
    return int(np.count_nonzero(stop > start))


def _coincident_mask(ta: np.ndarray, tb: np.ndarray, window: int) -> np.ndarray:
    if ta.size == 0 or tb.size == 0:
        return np.zeros(ta.size, dtype=bool)
    start = np.searchsorted(tb, ta - window, side="left")
    stop = np.searchsorted(tb, ta + window, side="right")
    return stop > start


def tag_slots(tags, schedule: PumpSchedule) -> np.ndarray:
    """1-based pump slot of each tag (0 when it sits outside the pump train).

    A tag is attributed to the latest pulse starting no later than half a
    slot spacing after it, then to the nearest slot offset.
    """
    t = _tags(tags)
    half = schedule.delta_t / 2
    k = np.floor((t + half) / schedule.rep_period).astype(np.int64)
    phase = t - pulse_start(k, schedule.rep_period)
    slot = np.floor((phase + half) / schedule.delta_t).astype(np.int64) + 1
    slot[(slot < 1) | (slot > 2 * schedule.n_users - 3)] = 0
    return slot


@dataclass(frozen=True, eq=False)
class CoincidenceMatrix:
    users: tuple[int, ...]
    counts: np.ndarray
    window: int  # ps
    duration: float  # s

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        n = len(self.users)
        if c.shape != (n, n):
            raise ValueError("counts shape does not match users")
        if not np.array_equal(c, c.T) or np.any(np.diag(c) != 0):
            raise ValueError("coincidence matrix must be symmetric with zero diagonal")
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "counts", c)

    def __getitem__(self, pair: tuple[int, int]) -> int:
        i, j = (self.users.index(u) for u in pair)
        return int(self.counts[i, j])

    def __add__(self, other: "CoincidenceMatrix") -> "CoincidenceMatrix":
        if self.users != other.users or self.window != other.window:
            raise ValueError("matrices cover different users or windows")
        return CoincidenceMatrix(
            self.users, self.counts + other.counts, self.window, self.duration + other.duration
        )

    def off_diagonal(self) -> np.ndarray:
        iu = np.triu_indices(len(self.users), 1)
        return self.counts[iu]

    def permuted(self, order: Sequence[int]) -> "CoincidenceMatrix":
        idx = [self.users.index(u) for u in order]
        return CoincidenceMatrix(
            tuple(order), self.counts[np.ix_(idx, idx)], self.window, self.duration
        )

    def to_dict(self) -> dict:
        return {
            "users": list(self.users),
            "window_ps": self.window,
            "duration_s": self.duration,
            "counts": self.counts.tolist(),
        }


def _sorted_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def coincidence_matrix(
    streams: Mapping[int, "TimeTagStream | np.ndarray"],
    schedule: PumpSchedule,
    window: int = 100,
    duration: float = 0.0,
) -> CoincidenceMatrix:
    """Slot-gated coincidences between every pair of users of one network.

    Entry (i, j) counts tags of the lower-numbered user that sit in
    ``slot_of_pair(i, j)`` and have a partner of the other user in the same
    slot within ``window``.
    """
    if 2 * window >= schedule.delta_t:
        raise ValueError("window must be below half the slot spacing for slot gating")
    users = [c.channel_number for c in schedule.channels]
    unknown = [u for u in streams if u not in users]
    if unknown:
        raise ValueError(f"streams for users absent from the schedule: {unknown}")
    slots = pair_slot_map(schedule)
    tags = {u: _tags(streams[u]) if u in streams else np.empty(0, np.int64) for u in users}
    slot_of = {u: tag_slots(tags[u], schedule) for u in users}
    n = len(users)
    counts = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = users[i], users[j]
            s = slots[_sorted_key(a, b)]
            ga = tags[a][slot_of[a] == s]
            gb = tags[b][slot_of[b] == s]
            counts[i, j] = counts[j, i] = count_coincidences(ga, gb, window)
    return CoincidenceMatrix(tuple(users), counts, window, duration)


def coincidences_by_slot(a, b, schedule: PumpSchedule, window: int = 100) -> dict[int, int]:
    """Ungated coincidence count split by the slot of the reference (a) tag."""
    ta, tb = _tags(a), _tags(b)
    hit = _coincident_mask(ta, tb, window)
    slots = tag_slots(ta[hit], schedule)
    keys, n = np.unique(slots, return_counts=True)
    return {int(k): int(v) for k, v in zip(keys, n)}


def slot_delay(schedule: PumpSchedule, reference: int, other: int) -> int:
    """Arrival delay (ps) of a reference channel's pair photon relative to slot 1."""
    return schedule.slot(slot_of_pair(schedule, reference, other)).time_offset


@dataclass(frozen=True)
class FringeScan:
    """Coincidence counts versus the analyser HWP angle of the scanned photon."""

    angles: tuple[float, ...]  # radians
    counts: tuple[int, ...]
    integration_time: tuple[float, ...]  # s

    def __post_init__(self):
        n = len(self.angles)
        if not (n == len(self.counts) == len(self.integration_time)):
            raise ValueError("angles, counts and integration times differ in length")
        if n < 8:
            raise ValueError("a fringe scan needs at least 8 points")
        if max(self.angles) - min(self.angles) < np.pi - 1e-9:
            raise ValueError("a fringe scan must span at least pi of HWP angle")
        if any(c < 0 for c in self.counts) or any(t <= 0 for t in self.integration_time):
            raise ValueError("counts must be non-negative and integration times positive")
        object.__setattr__(self, "angles", tuple(float(x) for x in self.angles))
        object.__setattr__(self, "counts", tuple(int(x) for x in self.counts))
        object.__setattr__(self, "integration_time", tuple(float(x) for x in self.integration_time))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["hwp_angle_rad", "count", "integration_s"])
        for row in zip(self.angles, self.counts, self.integration_time):
            w.writerow([repr(row[0]), row[1], repr(row[2])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FringeScan":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            tuple(float(r["hwp_angle_rad"]) for r in rows),
            tuple(int(r["count"]) for r in rows),
            tuple(float(r["integration_s"]) for r in rows),
        )


@dataclass(frozen=True)
class VisibilityResult:
    visibility: float
    std_error: float
    method: str

    def to_dict(self) -> dict:
        return {"visibility": self.visibility, "std_error": self.std_error, "method": self.method}


def fringe_probabilities(rho: DensityMatrix, basis: str, hwp_angles) -> np.ndarray:
    """Coincidence probabilities: first photon on ``basis``, second behind a HWP at each angle."""
    p_first = BASIS_PROJECTORS[basis]
    return np.array(
        [rho.expectation(np.kron(p_first, linear_projector(2 * th))) for th in hwp_angles]
    )


def fringe_scan_from_state(
    rho: DensityMatrix,
    basis: str,
    hwp_angles,
    peak_rate: float,
    integration_time: float,
    rng: np.random.Generator | None = None,
    background_rate: float = 0.0,
) -> FringeScan:
    """Fringe scan whose mean counts follow the state; Poisson noise when ``rng`` is given.

    ``peak_rate`` (counts/s) is the rate a probability of 1/2 would produce,
    i.e. the fringe maximum of a perfect Bell state. ``background_rate`` is a
    flat accidental floor (counts/s), e.g. from multi-pair emission.
    """
    if background_rate < 0:
        raise ValueError("background_rate must be non-negative")
    p = fringe_probabilities(rho, basis, hwp_angles)
    mean = (2 * peak_rate * p + background_rate) * integration_time
    counts = rng.poisson(mean) if rng is not None else np.rint(mean).astype(np.int64)
    n = len(p)
    return FringeScan(tuple(hwp_angles), tuple(int(c) for c in counts), (integration_time,) * n)


def fringe_visibility(scan: FringeScan, method: str = "fit") -> VisibilityResult:
    """Visibility of a ``cos 4 theta`` fringe.

    ``fit``: weighted least squares of ``A + B cos 4t + C sin 4t`` on rates,
    ``V = sqrt(B^2 + C^2) / A``, error by the delta method.
    ``extrema``: ``(R_max - R_min) / (R_max + R_min)`` on the measured points.
    """
    th = np.asarray(scan.angles)
    n = np.asarray(scan.counts, dtype=float)
    t = np.asarray(scan.integration_time)
    rate = n / t
    if np.all(n == n[0]):
        raise VisibilityUndefinedError("scan has no fringe (all counts equal)")
    if method == "extrema":
        i, j = int(np.argmax(rate)), int(np.argmin(rate))
        rmax, rmin = rate[i], rate[j]
        s = rmax + rmin
        if s <= 0:
            raise VisibilityUndefinedError("scan has no counts")
        v = (rmax - rmin) / s
        var_max, var_min = n[i] / t[i] ** 2, n[j] / t[j] ** 2
        err = 2 / s**2 * math.sqrt(rmin**2 * var_max + rmax**2 * var_min)
        return VisibilityResult(float(v), float(err), "extrema")
    if method != "fit":
        raise ValueError(f"unknown visibility method {method!r}")
    X = np.column_stack([np.ones_like(th), np.cos(4 * th), np.sin(4 * th)])
    # Poisson variances: start from the observed counts, then reweight with
    # the fitted model so low points are not over-weighted
    expected = n
    for _ in range(5):
        w = t**2 / np.maximum(expected, 1.0)
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        coef = cov @ (XtW @ rate)
        expected = np.clip(X @ coef, 0, None) * t
    a, b, c = coef
    if a <= 0:
        raise VisibilityUndefinedError("fitted mean rate is not positive")
    amp = math.hypot(b, c)
    if amp == 0:
        raise VisibilityUndefinedError("fitted fringe amplitude is zero")
    v = amp / a
    grad = np.array([-amp / a**2, b / (amp * a), c / (amp * a)])
    err = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return VisibilityResult(float(v), err, "fit")


def dip_visibility(r0: float, rt: float) -> VisibilityResult:
    """``V = 1 - R_0/R_t`` with Poisson error ``sqrt(R_0/R_t^2 + R_0^2/R_t^3)``."""
    if rt <= 0:
        raise VisibilityUndefinedError("R_t must be positive")
    v = 1 - r0 / rt
    err = math.sqrt(r0 / rt**2 + r0**2 / rt**3)
    return VisibilityResult(v, err, "dip")


def _gaussian_dip(tau, rt, v, center, sigma):
    return rt * (1 - v * np.exp(-((tau - center) ** 2) / (2 * sigma**2)))


def _gaussian_dip_jac(tau, rt, v, center, sigma):
    g = np.exp(-((tau - center) ** 2) / (2 * sigma**2))
    u = tau - center
    return np.column_stack(
        [1 - v * g, -rt * g, -rt * v * g * u / sigma**2, -rt * v * g * u**2 / sigma**3]
    )


def fit_hom_dip(delays, counts) -> tuple[VisibilityResult, dict]:
    """Fit a Gaussian dip and report ``1 - R_0/R_t`` from the fitted levels."""
    tau = np.asarray(delays, dtype=float)
    y = np.asarray(counts, dtype=float)
    rt0 = float(np.max(y))
    if rt0 <= 0:
        raise VisibilityUndefinedError("no counts in HOM scan")
    i0 = int(np.argmin(y))
    width0 = (tau.max() - tau.min()) / 10 or 1.0
    p0 = [rt0, max(1 - y[i0] / rt0, 1e-3), tau[i0], width0]
    sigma = np.sqrt(np.maximum(y, 1.0))
    popt, _ = curve_fit(
        _gaussian_dip, tau, y, p0=p0, sigma=sigma, jac=_gaussian_dip_jac, maxfev=20000
    )
    rt, v, center, width = popt
    res = dip_visibility(rt * (1 - v), rt)
    params = {"r_t": float(rt), "r_0": float(rt * (1 - v)), "center_ps": float(center), "sigma_ps": float(abs(width))}
    return res, params


def fidelity_from_visibility(v: float) -> float:
    """``F = (3V + 1)/4``, exact for Werner-like states."""
    if not -1 / 3 <= v <= 1:
        raise ValueError(f"visibility {v} outside [-1/3, 1]")
    return (3 * v + 1) / 4


def visibility_from_fidelity(f: float) -> float:
    return (4 * f - 1) / 3


LOCAL_BOUND = 1 / math.sqrt(2)


@dataclass(frozen=True)
class ChshResult:
    s: float
    violation: bool


def chsh_s(v: float) -> ChshResult:
    """CHSH value ``2 sqrt(2) v`` of a Werner-like state of visibility v."""
    if not 0 <= v <= 1:
        raise ValueError(f"visibility {v} outside [0, 1]")
    s = 2 * math.sqrt(2) * v
    return ChshResult(s, s > 2)


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


QBER_THRESHOLD = 0.11


def bbm92_key_rate(v: float, sifted_rate: float) -> float:
    """Asymptotic BBM92 secret key rate with QBER ``(1 - v)/2``."""
    if not 0 <= v <= 1:
        raise ValueError(f"visibility {v} outside [0, 1]")
    e = (1 - v) / 2
    if e >= QBER_THRESHOLD - 1e-12:
        return 0.0
    return sifted_rate * max(0.0, 1 - 2 * binary_entropy(e))
