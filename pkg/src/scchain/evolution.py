"""Expected graph evolution of the peeling decoder and threshold search.

State is normalized by M: ``v[u]`` is the fraction of position-u variables still
unresolved and ``r[j-1, u]`` the (normalized) number of edges at position ``u``
whose check has residual degree ``j``. Time ``tau`` counts removed variables / M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import comb

from .ensembles import ConnectivityMatrix, degree_profile

V_TOL = 1e-6
R_TOL = 1e-9
THRESHOLD_TOL = 1e-4
PLATEAU_SLOPE_TOL = 1e-3
PLATEAU_MIN_SPAN = 2.0
INERT_TOL = 1e-12
REGION_TOL = 1e-3
STEP_FRACTION = 0.2  # adaptive step cap relative to the degree-one mass


class IntegrationDiverged(RuntimeError):
    def __init__(self, epsilon: float, tau: float):
        super().__init__(f"non-finite state at tau={tau:.6g} (epsilon={epsilon:.6g}); reduce the step")
        self.epsilon = epsilon
        self.tau = tau


@dataclass(frozen=True)
class DDState:
    tau: float
    v: np.ndarray  # (D,)
    r: np.ndarray  # (r_max, D); row j-1 holds degree j

    @property
    def dim(self) -> int:
        return self.v.shape[0]


@dataclass
class Trajectory:
    epsilon: float
    outcome: str  # "decoded" | "stalled"
    stall_tau: float | None
    # fine record, one entry per integration step
    tau: np.ndarray
    r1_total: np.ndarray
    v_total: np.ndarray
    # coarse per-position snapshots
    sample_tau: np.ndarray
    sample_r: np.ndarray  # (n, r_max, D)
    sample_v: np.ndarray  # (n, D)
    final: DDState = field(repr=False)

    @property
    def decoded(self) -> bool:
        return self.outcome == "decoded"

    @property
    def samples(self) -> list[DDState]:
        return [DDState(float(t), self.sample_v[i], self.sample_r[i]) for i, t in enumerate(self.sample_tau)]


@dataclass(frozen=True)
class ThresholdResult:
    epsilon_star: float
    bracket_width: float
    trajectories_evaluated: int
    probes: tuple[tuple[float, bool], ...] = ()


@dataclass(frozen=True)
class CriticalReport:
    minima: list[tuple[float, float]]
    regime: str  # "single-critical-point" | "steady-state-phase"
    plateau_span: tuple[float, float] | None
    stalled: bool = False

    @property
    def tau_star(self) -> float | None:
        if not self.minima:
            return None
        return min(self.minima, key=lambda m: m[1])[0]


def init_state(T: ConnectivityMatrix, epsilon: float) -> DDState:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon={epsilon} outside [0, 1]")
    prof = degree_profile(T)
    D = T.dim
    if epsilon == 0.0:
        return DDState(0.0, np.zeros(D), np.zeros((T.r, D)))
    v = prof.occupied.astype(float)
    r = np.zeros((T.r, D))
    ratio = T.l / T.r
    for u in range(D):
        k = int(prof.check_degree[u])
        j = np.arange(1, k + 1)
        r[: k, u] = j * ratio * comb(k, j) * epsilon ** (j - 1) * (1.0 - epsilon) ** (k - j)
    return DDState(0.0, v, r)


def step_expectation(state: DDState, T: ConnectivityMatrix):
    """Expected per-iteration change ``(dr, dv)`` of the normalized DD.

    Returns ``None`` when no degree-one check is left (stall).
    """
    Tm = T.entries.astype(float)
    r, v = state.r, state.v
    r1 = r[0]
    total = r1.sum()
    if total <= 0.0:
        return None
    p = r1 / total
    den = Tm @ v
    weight = np.divide(p, den, out=np.zeros_like(p), where=den > 0)
    # w[q]: probability the removed variable sits at position q
    w = v * (Tm.T @ weight)
    hit = Tm @ w
    mass = r.sum(axis=0)
    live = mass >= INERT_TOL
    f = np.divide(hit - p, mass, out=np.zeros_like(p), where=live)
    j = np.arange(1, r.shape[0] + 1)[:, None]
    shifted = np.vstack([r[1:], np.zeros((1, r.shape[1]))])
    dr = j * (shifted - r) * f[None, :]
    dr[0] -= p
    return dr, -w


@nb.njit(cache=True)
def _rates(Tm, v, r, dr, dv):
    nr, D = r.shape
    total = 0.0
    for u in range(D):
        total += r[0, u]
    weight = np.zeros(D)
    for m in range(D):
        den = 0.0
        for q in range(D):
            den += Tm[m, q] * v[q]
        if den > 0.0:
            weight[m] = r[0, m] / total / den
    for q in range(D):
        s = 0.0
        for m in range(D):
            s += Tm[m, q] * weight[m]
        dv[q] = -v[q] * s
    for u in range(D):
        hit = 0.0
        for q in range(D):
            hit -= Tm[u, q] * dv[q]
        mass = 0.0
        for j in range(nr):
            mass += r[j, u]
        p = r[0, u] / total
        f = (hit - p) / mass if mass >= 1e-12 else 0.0
        for j in range(nr):
            nxt = r[j + 1, u] if j + 1 < nr else 0.0
            dr[j, u] = (j + 1) * (nxt - r[j, u]) * f
        dr[0, u] -= p


@nb.njit(cache=True)
def _euler(Tm, v, r, h_max, frac, v_tol, r_tol, sample_dt, max_steps):
    nr, D = r.shape
    dr = np.zeros((nr, D))
    dv = np.zeros(D)
    taus = [0.0]
    r1s = [r[0].sum()]
    vs = [v.sum()]
    snap_t = [0.0]
    snap_r = [r.copy()]
    snap_v = [v.copy()]
    tau = 0.0
    next_snap = sample_dt
    status = 2  # 0 decoded, 1 stalled, 2 step budget, 3 diverged
    for _ in range(max_steps):
        r1 = r1s[-1]
        if vs[-1] <= v_tol:
            status = 0
            break
        if r1 <= r_tol:
            status = 1
            break
        _rates(Tm, v, r, dr, dv)
        h = min(h_max, frac * r1)
        ok = True
        for u in range(D):
            x = v[u] + h * dv[u]
            if not np.isfinite(x):
                ok = False
            v[u] = x if x > 0.0 else 0.0
            for j in range(nr):
                y = r[j, u] + h * dr[j, u]
                if not np.isfinite(y):
                    ok = False
                r[j, u] = y if y > 0.0 else 0.0
        tau += h
        taus.append(tau)
        r1s.append(r[0].sum())
        vs.append(v.sum())
        if not ok:
            status = 3
            break
        if tau >= next_snap:
            snap_t.append(tau)
            snap_r.append(r.copy())
            snap_v.append(v.copy())
            while next_snap <= tau:
                next_snap += sample_dt
    if snap_t[-1] != tau:
        snap_t.append(tau)
        snap_r.append(r.copy())
        snap_v.append(v.copy())
    n = len(snap_t)
    out_r = np.empty((n, nr, D))
    out_v = np.empty((n, D))
    for i in range(n):
        out_r[i] = snap_r[i]
        out_v[i] = snap_v[i]
    return status, np.array(taus), np.array(r1s), np.array(vs), np.array(snap_t), out_r, out_v


def default_step(T: ConnectivityMatrix) -> float:
    return 1e-3 * int(degree_profile(T).occupied.sum())


def integrate(
    T: ConnectivityMatrix,
    epsilon: float,
    step: float | None = None,
    *,
    sample_dt: float = 0.1,
    v_tol: float = V_TOL,
    r_tol: float = R_TOL,
    max_steps: int = 5_000_000,
) -> Trajectory:
    """Euler integration of the mean evolution until decoded or stalled.

    ``step`` caps the tau increment; the actual increment is additionally limited
    to a fixed fraction of the total degree-one mass, which keeps the scheme stable
    where that mass becomes small.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon={epsilon} outside (0, 1]")
    h = default_step(T) if step is None else step
    if h <= 0:
        raise ValueError("step must be positive")
    s0 = init_state(T, epsilon)
    v, r = s0.v.copy(), s0.r.copy()
    status, taus, r1s, vs, st, sr, sv = _euler(
        T.entries.astype(float), v, r, h, STEP_FRACTION, v_tol, r_tol, sample_dt, max_steps
    )
    if status == 3:
        raise IntegrationDiverged(epsilon, float(taus[-1]))
    if status == 2:
        raise RuntimeError(f"step budget exhausted at tau={taus[-1]:.6g}")
    outcome = "decoded" if status == 0 else "stalled"
    final = DDState(float(taus[-1]), v, r)
    return Trajectory(
        epsilon, outcome, None if status == 0 else float(taus[-1]), taus, r1s, vs, st, sr, sv, final
    )


def r1_total(state: DDState) -> float:
    return float(state.r[0].sum())


def _check_partition(labels, D):
    labels = np.asarray(labels)
    if labels.shape != (D,) or (labels < 1).any():
        raise ValueError("position map must assign every position a label >= 1")
    return labels


def per_layer_r1(state: DDState, layer_map) -> np.ndarray:
    labels = _check_partition(layer_map, state.dim)
    return np.bincount(labels - 1, weights=state.r[0])


def per_layer_v(state: DDState, layer_map) -> np.ndarray:
    labels = _check_partition(layer_map, state.dim)
    return np.bincount(labels - 1, weights=state.v)


def v_outer(state: DDState, positions) -> float:
    idx = np.asarray(positions, dtype=np.int64)
    if idx.size == 0 or len(np.unique(idx)) != idx.size or idx.min() < 0 or idx.max() >= state.dim:
        raise ValueError("segment map must be distinct in-range positions")
    return float(state.v[idx].sum())


def _bisect(decodes, tol: float) -> ThresholdResult:
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = 0.0, 1.0
    probes = []
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok = decodes(mid)
        probes.append((mid, ok))
        if ok:
            lo = mid
        else:
            hi = mid
    return ThresholdResult(0.5 * (lo + hi), hi - lo, len(probes), tuple(probes))


def threshold(T: ConnectivityMatrix, tol: float = THRESHOLD_TOL, step: float | None = None) -> ThresholdResult:
    """Largest erasure probability for which the mean evolution decodes."""
    return _bisect(lambda e: integrate(T, e, step, sample_dt=math.inf).decoded, tol)


def region_decoded(traj: Trajectory, positions, tol: float = REGION_TOL) -> bool:
    idx = np.asarray(positions, dtype=np.int64)
    return bool(traj.final.v[idx].max() <= tol)


def decodable_region_epsilon(
    T: ConnectivityMatrix, positions, tol: float = THRESHOLD_TOL, step: float | None = None
) -> ThresholdResult:
    """Largest epsilon for which every position in ``positions`` is recovered before the decoder stops."""
    idx = np.asarray(positions, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("position set must be nonempty")
    if idx.size == T.dim:
        return threshold(T, tol, step)
    return _bisect(lambda e: region_decoded(integrate(T, e, step, sample_dt=math.inf), idx), tol)


def _uniform_r1(traj: Trajectory, dt: float):
    grid = np.arange(0.0, traj.tau[-1], dt)
    return grid, np.interp(grid, traj.tau, traj.r1_total)


def critical_report(
    traj: Trajectory,
    slope_tol: float = PLATEAU_SLOPE_TOL,
    min_span: float = PLATEAU_MIN_SPAN,
    dt: float = 0.05,
) -> CriticalReport:
    """Locate the critical points of the degree-one curve and classify the regime."""
    grid, y = _uniform_r1(traj, dt)
    if len(grid) < 3:
        return CriticalReport([], "single-critical-point", None, not traj.decoded)
    # drop the terminal descent (monotone decrease up to the end of decoding)
    end = len(y) - 1
    while end > 0 and y[end - 1] >= y[end]:
        end -= 1
    body = y[: end + 1]
    minima = []
    for i in range(1, len(body) - 1):
        if body[i] < body[i - 1] and body[i] <= body[i + 1]:
            minima.append((float(grid[i]), float(body[i])))
    slope = np.abs(np.gradient(body, dt)) if len(body) > 1 else np.zeros(1)
    flat = slope < slope_tol
    best = None
    i = 0
    while i < len(flat):
        if flat[i]:
            j = i
            while j + 1 < len(flat) and flat[j + 1]:
                j += 1
            span = (float(grid[i]), float(grid[j]))
            if span[1] - span[0] >= min_span and (best is None or span[1] - span[0] > best[1] - best[0]):
                best = span
            i = j + 1
        else:
            i += 1
    regime = "steady-state-phase" if best is not None else "single-critical-point"
    return CriticalReport(minima, regime, best, not traj.decoded)
