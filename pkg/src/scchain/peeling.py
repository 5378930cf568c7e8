"""Finite Tanner graphs, erasure channel, peeling decoder and Monte Carlo campaigns."""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest

from . import _kernels
from .ensembles import ConnectivityMatrix, degree_profile

GRAPH_STREAM, CHANNEL_STREAM, DECODER_STREAM = 0, 1, 2


class SamplingFailed(RuntimeError):
    def __init__(self, position: int):
        super().__init__(f"4-cycle removal budget exhausted at position {position + 1}")
        self.position = position


def stream_seed(base_seed: int, grid_index: int, trial_index: int, stream: int) -> np.random.SeedSequence:
    """Counter-based seed for one random stream of one trial."""
    return np.random.SeedSequence([base_seed, grid_index, trial_index, stream])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class _Skeleton:
    var_pos: np.ndarray
    var_ptr: np.ndarray
    edge_var: np.ndarray
    edge_pos: np.ndarray
    chk_pos: np.ndarray
    chk_ptr: np.ndarray
    slot_chk: np.ndarray
    pos_slot_lo: np.ndarray
    pos_slot_hi: np.ndarray


@functools.lru_cache(maxsize=32)
def _skeleton(T: ConnectivityMatrix, M: int) -> _Skeleton:
    prof = degree_profile(T)
    D = T.dim
    cols = [np.flatnonzero(T.entries[:, u]) for u in range(D)]
    var_pos = np.repeat(np.arange(D), M * prof.occupied)
    deg_v = prof.d_v[var_pos]
    var_ptr = np.concatenate([[0], np.cumsum(deg_v)]).astype(np.int64)
    edge_var = np.repeat(np.arange(len(var_pos)), deg_v).astype(np.int64)
    edge_pos = np.concatenate([np.tile(cols[u], M) for u in range(D) if prof.occupied[u]]).astype(np.int64)
    n_chk_at = np.where(prof.d_c > 0, M * T.l // T.r, 0)
    chk_pos = np.repeat(np.arange(D), n_chk_at).astype(np.int64)
    chk_deg = prof.check_degree[chk_pos]
    chk_ptr = np.concatenate([[0], np.cumsum(chk_deg)]).astype(np.int64)
    slot_chk = np.repeat(np.arange(len(chk_pos)), chk_deg).astype(np.int64)
    sockets_at = M * prof.d_c
    hi = np.cumsum(sockets_at).astype(np.int64)
    lo = (hi - sockets_at).astype(np.int64)
    return _Skeleton(var_pos, var_ptr, edge_var, edge_pos, chk_pos, chk_ptr, slot_chk, lo, hi)


@dataclass
class TannerGraph:
    T: ConnectivityMatrix
    M: int
    var_pos: np.ndarray
    var_ptr: np.ndarray
    edge_var: np.ndarray
    edge_chk: np.ndarray
    chk_pos: np.ndarray
    chk_ptr: np.ndarray
    chk_edges: np.ndarray
    edge_slot: np.ndarray
    swaps: int = 0

    @property
    def n_var(self) -> int:
        return len(self.var_pos)

    @property
    def n_chk(self) -> int:
        return len(self.chk_pos)

    @property
    def edge_count(self) -> int:
        return len(self.edge_var)

    def variable_checks(self, a: int) -> np.ndarray:
        return self.edge_chk[self.var_ptr[a] : self.var_ptr[a + 1]]

    def check_variables(self, c: int) -> np.ndarray:
        return self.edge_var[self.chk_edges[self.chk_ptr[c] : self.chk_ptr[c + 1]]]

    def kernel_args(self):
        return self.var_ptr, self.edge_chk, self.chk_ptr, self.chk_edges, self.edge_var

    def has_4cycle(self) -> bool:
        seen = np.full(self.n_var, -1, np.int64)
        seen_chk = np.full(self.n_var, -1, np.int64)
        a, _ = _kernels.find_4cycle(*self.kernel_args(), seen, seen_chk, 0)
        return a >= 0

    def position_counts(self, mask: np.ndarray) -> np.ndarray:
        return np.bincount(self.var_pos[mask], minlength=self.T.dim)


def sample_graph(T: ConnectivityMatrix, M: int, rng_seed=None, avoid_4cycles: bool = False) -> TannerGraph:
    """Configuration-model sample: each check position shuffles its incoming edges into sockets."""
    if M < T.r or (M * T.l) % T.r:
        raise ValueError(f"M={M} must be >= r={T.r} and make M*l/r integral")
    sk = _skeleton(T, M)
    rng = _rng(rng_seed)
    keys = rng.random(len(sk.edge_var))
    chk_edges = np.lexsort((keys, sk.edge_pos)).astype(np.int64)
    edge_slot = np.empty_like(chk_edges)
    edge_slot[chk_edges] = np.arange(len(chk_edges))
    edge_chk = sk.slot_chk[edge_slot]
    swaps = 0
    if avoid_4cycles:
        budget = 100 * len(chk_edges)
        seed = int(rng.integers(0, 2**31 - 1))
        swaps = _kernels.remove_4cycles(
            sk.var_ptr, edge_chk, sk.chk_ptr, chk_edges, sk.edge_var, edge_slot,
            sk.chk_pos, sk.pos_slot_lo, sk.pos_slot_hi, seed, budget,
        )
        if swaps < 0:
            raise SamplingFailed(-1 - swaps)
    return TannerGraph(T, M, sk.var_pos, sk.var_ptr, sk.edge_var, edge_chk, sk.chk_pos, sk.chk_ptr, chk_edges, edge_slot, swaps)


@dataclass
class ResidualGraph:
    graph: TannerGraph
    erased: np.ndarray  # bool per variable

    @property
    def V(self) -> np.ndarray:
        return self.graph.position_counts(self.erased)

    def check_degrees(self) -> np.ndarray:
        g = self.graph
        hits = self.erased[g.edge_var[g.chk_edges]].astype(np.int64)
        return np.add.reduceat(hits, g.chk_ptr[:-1]) if g.n_chk else np.zeros(0, np.int64)

    def R(self) -> np.ndarray:
        """Edge counts ``R[j-1, u]`` by residual check degree j and position u."""
        g = self.graph
        deg = self.check_degrees()
        out = np.zeros((g.T.r, g.T.dim), np.int64)
        keep = deg > 0
        np.add.at(out, (deg[keep] - 1, g.chk_pos[keep]), deg[keep])
        return out


def apply_bec(graph: TannerGraph, epsilon: float, rng_seed=None) -> ResidualGraph:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon={epsilon} outside [0, 1]")
    erased = _rng(rng_seed).random(graph.n_var) < epsilon
    return ResidualGraph(graph, erased)


@dataclass
class PDOutcome:
    success: bool
    iterations: int
    r1_trace: np.ndarray
    residual_positions: np.ndarray
    unresolved: np.ndarray = field(repr=False)


def peel(residual: ResidualGraph, rng_seed=None) -> PDOutcome:
    g = residual.graph
    n_open = int(residual.erased.sum())
    uniforms = _rng(rng_seed).random(n_open + 1)
    trace = np.zeros(n_open + 1, np.int64)
    it, left = _kernels.peel(*g.kernel_args(), residual.erased, uniforms, trace)
    success = not left.any()
    positions = np.zeros(0, np.int64) if success else g.position_counts(left)
    return PDOutcome(success, int(it), trace[: it + 1], positions, left)


@dataclass
class BlerRow:
    param: float
    trials: int
    failures: int
    chain_failures: np.ndarray

    @property
    def bler(self) -> float:
        return self.failures / self.trials if self.trials else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_ci(self.failures, self.trials)

    def chain_bler(self, chain: int) -> float:
        return self.chain_failures[chain - 1] / self.trials

    def chain_ci(self, chain: int) -> tuple[float, float]:
        return wilson_ci(int(self.chain_failures[chain - 1]), self.trials)


def wilson_ci(failures: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    ci = binomtest(failures, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class BlerTable:
    param_name: str
    rows: list[BlerRow]
    n_chains: int
    incomplete: bool = False

    def row(self, param: float) -> BlerRow:
        for r in self.rows:
            if math.isclose(r.param, param, rel_tol=0, abs_tol=1e-12):
                return r
        raise KeyError(param)

    def header(self) -> list[str]:
        return [self.param_name, "trials", "failures", "bler", "ci_low", "ci_high"] + [
            f"fail_chain_{k}" for k in range(1, self.n_chains + 1)
        ]

    def to_csv(self) -> str:
        lines = [",".join(self.header())]
        for r in self.rows:
            lo, hi = r.ci
            vals = [repr(float(r.param)), str(r.trials), str(r.failures), repr(r.bler), repr(lo), repr(hi)]
            vals += [str(int(x)) for x in r.chain_failures]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


# --- campaigns -------------------------------------------------------------

TrialFn = Callable[[int, float, int, int], tuple[bool, np.ndarray]]


def _run_chunk(trial_fn, grid_index, param, base_seed, start, stop):
    return [trial_fn(base_seed, grid_index, param, k) for k in range(start, stop)]


def campaign(
    trial_fn: TrialFn,
    grid: Sequence[float],
    trials: int,
    base_seed: int,
    n_chains: int,
    param_name: str = "eps",
    workers: int = 1,
    chunk: int = 50,
) -> BlerTable:
    """Run ``trials`` independent trials per grid point and aggregate failures.

    ``trial_fn(base_seed, grid_index, param, trial_index)`` returns the failure
    flag and a per-chain failure indicator. Results depend only on the seeds.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = [BlerRow(float(p), 0, 0, np.zeros(n_chains, np.int64)) for p in grid]
    jobs = [(gi, float(p), s, min(s + chunk, trials)) for gi, p in enumerate(grid) for s in range(0, trials, chunk)]
    incomplete = False

    def absorb(gi, results):
        row = rows[gi]
        for failed, chains in results:
            row.trials += 1
            row.failures += int(failed)
            row.chain_failures += chains.astype(np.int64)

    try:
        if workers <= 1:
            for gi, p, s, e in jobs:
                absorb(gi, _run_chunk(trial_fn, gi, p, base_seed, s, e))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [(gi, pool.submit(_run_chunk, trial_fn, gi, p, base_seed, s, e)) for gi, p, s, e in jobs]
                for gi, fut in futures:
                    absorb(gi, fut.result())
    except KeyboardInterrupt:
        incomplete = True
    return BlerTable(param_name, rows, n_chains, incomplete)


def chain_failures(unresolved: np.ndarray, var_pos: np.ndarray, chain_map: np.ndarray, n_chains: int) -> np.ndarray:
    labels = chain_map[var_pos[unresolved]]
    hit = np.zeros(n_chains, bool)
    hit[labels[labels > 0] - 1] = True
    return hit


def bec_trial(T, M, chain_map, avoid_4cycles, decoder, base_seed, grid_index, eps, trial_index):
    seeds = [stream_seed(base_seed, grid_index, trial_index, s) for s in (GRAPH_STREAM, CHANNEL_STREAM, DECODER_STREAM)]
    g = sample_graph(T, M, seeds[0], avoid_4cycles)
    res = apply_bec(g, eps, seeds[1])
    if decoder == "pd":
        left = peel(res, seeds[2]).unresolved
    else:
        from .stream import BPConfig, bp_decode_bec

        left = bp_decode_bec(g, res.erased, BPConfig()).unresolved
    return bool(left.any()), chain_failures(left, g.var_pos, chain_map, int(chain_map.max()))


def run_trials(
    T: ConnectivityMatrix,
    M: int,
    epsilon_grid: Sequence[float],
    trials: int,
    base_seed: int,
    chain_map=None,
    *,
    avoid_4cycles: bool = False,
    decoder: str = "pd",
    workers: int = 1,
) -> BlerTable:
    """BEC block-error campaign with per-chain failure attribution.

    A fresh graph is drawn for every trial; a failure counts against every chain
    that keeps at least one unresolved variable.
    """
    if decoder not in ("pd", "bp"):
        raise ValueError(f"unknown decoder {decoder!r}")
    cmap = T.chain_map() if chain_map is None else np.asarray(chain_map, dtype=np.int64)
    if cmap.shape != (T.dim,):
        raise ValueError("chain map must give one label per position")
    fn = functools.partial(bec_trial, T, M, cmap, avoid_4cycles, decoder)
    return campaign(fn, epsilon_grid, trials, base_seed, max(int(cmap.max()), 1), "eps", workers)


def normalized_trace(outcome: PDOutcome, epsilon: float, M: int) -> tuple[np.ndarray, np.ndarray]:
    """(tau, r1) of a peeling run on the same scale as the mean evolution."""
    scale = epsilon * M
    it = np.arange(len(outcome.r1_trace))
    return it / scale, outcome.r1_trace / scale
