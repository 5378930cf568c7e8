"""Belief propagation, continuous-chain transmission order and sliding-window decoding."""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .ensembles import ConnectivityMatrix, design_rate
from .peeling import (
    CHANNEL_STREAM,
    DECODER_STREAM,
    GRAPH_STREAM,
    BlerRow,
    BlerTable,
    ResidualGraph,
    TannerGraph,
    apply_bec,
    campaign,
    chain_failures,
    peel,
    sample_graph,
    stream_seed,
)


class StreamOrderError(ValueError):
    """Channel blocks arrived in an order that differs from the schedule."""


@dataclass(frozen=True)
class BPConfig:
    max_iterations: int = 200
    llr_clip: float = 25.0
    early_stop: bool = True
    window_iterations: int = 50  # per window position before a forced shift

    def __post_init__(self):
        if self.max_iterations < 1 or self.window_iterations < 1:
            raise ValueError("iteration budgets must be >= 1")
        if not self.llr_clip > 0:
            raise ValueError("llr_clip must be positive")


@dataclass
class DecodeOutcome:
    success: bool
    iterations: int
    unresolved: np.ndarray = field(repr=False)  # erased-and-unrecovered or wrong bits
    posterior: np.ndarray | None = field(default=None, repr=False)


def bp_decode_bec(graph: TannerGraph, erased: np.ndarray, config: BPConfig | None = None) -> DecodeOutcome:
    """Flooding erasure message passing until nothing changes.

    The BEC decoder is run to its fixpoint regardless of ``max_iterations``; its
    result is then the largest stopping set inside the erasure pattern.
    """
    unknown = np.asarray(erased, dtype=bool).copy()
    rounds = 0
    ev, ec = graph.edge_var, graph.edge_chk
    while unknown.any():
        live = unknown[ev]
        count = np.bincount(ec[live], minlength=graph.n_chk)
        solved = live & (count[ec] == 1)
        if not solved.any():
            break
        unknown[ev[solved]] = False
        rounds += 1
    return DecodeOutcome(not unknown.any(), rounds, unknown)


def bp_decode_biawgn(graph: TannerGraph, channel_llrs: np.ndarray, config: BPConfig | None = None) -> DecodeOutcome:
    """Sum-product decoding; success means the all-zero word was recovered."""
    cfg = config or BPConfig()
    llr = np.asarray(channel_llrs, dtype=float)
    if not np.isfinite(llr).all():
        raise ValueError("channel LLRs must be finite")
    it, post, _ = _kernels.sum_product(*graph.kernel_args(), llr, cfg.max_iterations, cfg.llr_clip, cfg.early_stop)
    wrong = post < 0.0
    return DecodeOutcome(not wrong.any(), int(it), wrong, post)


def noise_sigma(rate: float, ebn0_db: float) -> float:
    return float(np.sqrt(1.0 / (2.0 * rate * 10.0 ** (ebn0_db / 10.0))))


def biawgn_llrs(n: int, sigma: float, rng_seed) -> np.ndarray:
    """LLRs of the all-zero word sent as +1 over an AWGN channel."""
    y = 1.0 + sigma * np.random.default_rng(rng_seed).standard_normal(n)
    return 2.0 * y / sigma**2


def _awgn_trial(T, M, chain_map, avoid_4cycles, config, sigma_of, base_seed, grid_index, ebn0, trial_index):
    g = sample_graph(T, M, stream_seed(base_seed, grid_index, trial_index, GRAPH_STREAM), avoid_4cycles)
    llr = biawgn_llrs(g.n_var, sigma_of(ebn0), stream_seed(base_seed, grid_index, trial_index, CHANNEL_STREAM))
    out = bp_decode_biawgn(g, llr, config)
    return not out.success, chain_failures(out.unresolved, g.var_pos, chain_map, int(chain_map.max()))


class _Sigma:
    def __init__(self, rate):
        self.rate = rate

    def __call__(self, ebn0):
        return noise_sigma(self.rate, ebn0)


def simulate_biawgn(
    T: ConnectivityMatrix,
    M: int,
    ebn0_grid: Sequence[float],
    trials: int,
    base_seed: int,
    chain_map=None,
    config: BPConfig | None = None,
    *,
    avoid_4cycles: bool = False,
    workers: int = 1,
) -> BlerTable:
    cmap = T.chain_map() if chain_map is None else np.asarray(chain_map, dtype=np.int64)
    fn = functools.partial(
        _awgn_trial, T, M, cmap, avoid_4cycles, config or BPConfig(), _Sigma(float(design_rate(T)))
    )
    return campaign(fn, ebn0_grid, trials, base_seed, max(int(cmap.max()), 1), "ebn0", workers)


# --- transmission order -----------------------------------------------------

@dataclass(frozen=True)
class SubBlock:
    layer: int
    chain: int
    position: int  # 1-based chain position


@dataclass(frozen=True)
class TransmissionSchedule:
    blocks: tuple[SubBlock, ...]

    def __len__(self):
        return len(self.blocks)

    def global_positions(self, T: ConnectivityMatrix) -> np.ndarray:
        return np.array([T.blocks[b.chain - 1].index(b.position) for b in self.blocks], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps([{"layer": b.layer, "chain": b.chain, "position": b.position} for b in self.blocks])


def transmission_schedule(T: ConnectivityMatrix) -> TransmissionSchedule:
    """Continuous-chain order: each layer in natural order, with the two boundary
    blocks of a child chain sent right after its parent's connection region."""
    if T.family == "single":
        N = 1
    elif T.family == "multilayer":
        N = T.params["N"]
    else:
        raise ValueError(f"transmission schedule needs a multilayer (or single) chain, got {T.family!r}")
    L = T.params["L"]
    blocks = T.blocks
    children: dict[int, list[tuple[int, int]]] = {}
    for parent, child, c in T.couplings:
        children.setdefault(parent, []).append((c + 3, child))
    order: list[SubBlock] = []

    def emit(chain: int, positions):
        layer = blocks[chain - 1].layer
        for i in positions:
            order.append(SubBlock(layer, chain, i))
            for after, child in children.get(chain, []):
                if i == after:
                    cl = blocks[child - 1].layer
                    order.append(SubBlock(cl, child, 2))
                    order.append(SubBlock(cl, child, L + 1))

    for b in blocks:
        emit(b.chain, range(2, L + 2) if b.layer == 1 else range(3, L + 1))
    return TransmissionSchedule(tuple(order))


def stream_blocks(graph: TannerGraph, values: np.ndarray, schedule: TransmissionSchedule):
    """Split per-variable channel values into ``(sub-block, values)`` in schedule order."""
    pos = schedule.global_positions(graph.T)
    lo = np.searchsorted(graph.var_pos, pos, "left")
    hi = np.searchsorted(graph.var_pos, pos, "right")
    return [(b, values[i:j]) for b, i, j in zip(schedule.blocks, lo, hi)]


def _window_layout(graph: TannerGraph, stream, schedule: TransmissionSchedule):
    if len(stream) != len(schedule) or any(sb != b for (sb, _), b in zip(stream, schedule.blocks)):
        raise StreamOrderError("channel stream does not follow the transmission schedule")
    pos = schedule.global_positions(graph.T)
    block_of_pos = np.full(graph.T.dim, -1, np.int64)
    block_of_pos[pos] = np.arange(len(pos))
    var_block = block_of_pos[graph.var_pos]
    if (var_block < 0).any():
        raise StreamOrderError("schedule misses an occupied position")
    values = np.empty(graph.n_var)
    lo = np.searchsorted(graph.var_pos, pos, "left")
    hi = np.searchsorted(graph.var_pos, pos, "right")
    for k, (_, vals) in enumerate(stream):
        if vals.shape[0] != hi[k] - lo[k]:
            raise StreamOrderError(f"block {k} carries {vals.shape[0]} values, expected {hi[k] - lo[k]}")
        values[lo[k] : hi[k]] = vals
    nbr_block = var_block[graph.edge_var[graph.chk_edges]]
    chk_act = np.maximum.reduceat(nbr_block, graph.chk_ptr[:-1])
    chk_order = np.argsort(chk_act, kind="stable").astype(np.int64)
    return values, var_block, chk_act.astype(np.int64), chk_order


def window_decode(
    graph: TannerGraph,
    stream,
    schedule: TransmissionSchedule,
    W: int,
    config: BPConfig | None = None,
    channel: str = "bec",
) -> DecodeOutcome:
    """Decode a stream of sub-blocks with a window of ``W`` consecutive sub-blocks.

    A check joins the window once all of its variables have arrived. Variables
    leaving the window are committed: erasures left open stay lost, AWGN
    decisions are frozen and fed forward as saturated messages.
    For ``channel='bec'`` the stream values are erasure flags, otherwise LLRs.
    """
    cfg = config or BPConfig()
    if W < graph.T.l + 1:
        raise ValueError(f"W={W} must be >= l + 1 = {graph.T.l + 1}")
    values, var_block, chk_act, chk_order = _window_layout(graph, stream, schedule)
    n = len(schedule)
    if channel == "bec":
        left = _kernels.window_bec(*graph.kernel_args(), values.astype(bool), var_block, chk_order, chk_act, n, W)
        return DecodeOutcome(not left.any(), 0, left)
    post = _kernels.window_awgn(
        *graph.kernel_args(), values, var_block, chk_order, chk_act, n, W,
        cfg.window_iterations, cfg.max_iterations, cfg.llr_clip,
    )
    wrong = post < 0.0
    return DecodeOutcome(not wrong.any(), 0, wrong, post)


def _window_pair_trial(T, M, W, avoid_4cycles, schedule, base_seed, grid_index, eps, trial_index):
    """One paired trial: full BP and window decoding on the same graph and erasures."""
    g = sample_graph(T, M, stream_seed(base_seed, grid_index, trial_index, GRAPH_STREAM), avoid_4cycles)
    res = apply_bec(g, eps, stream_seed(base_seed, grid_index, trial_index, CHANNEL_STREAM))
    full = bp_decode_bec(g, res.erased)
    win = window_decode(g, stream_blocks(g, res.erased, schedule), schedule, W)
    return not full.success, not win.success


@dataclass
class WindowComparison:
    params: list[float]
    full: BlerTable
    window: BlerTable
    disagreements: list[int]

    def to_csv(self) -> str:
        lines = ["param,bler_full,bler_window,ci_full_low,ci_full_high,ci_window_low,ci_window_high,trials,disagreements"]
        for p, rf, rw, d in zip(self.params, self.full.rows, self.window.rows, self.disagreements):
            vals = [p, rf.bler, rw.bler, *rf.ci, *rw.ci]
            lines.append(",".join(repr(float(x)) for x in vals) + f",{rf.trials},{d}")
        return "\n".join(lines) + "\n"


def window_campaign(
    T: ConnectivityMatrix,
    M: int,
    epsilon_grid: Sequence[float],
    trials: int,
    base_seed: int,
    W: int,
    *,
    avoid_4cycles: bool = False,
) -> WindowComparison:
    """Paired full-vs-window BEC campaign (same graph and erasures per trial)."""
    schedule = transmission_schedule(T)
    full_rows, win_rows, dis = [], [], []
    for gi, eps in enumerate(epsilon_grid):
        ff = wf = d = 0
        for k in range(trials):
            a, b = _window_pair_trial(T, M, W, avoid_4cycles, schedule, base_seed, gi, float(eps), k)
            ff += a
            wf += b
            d += a != b
        full_rows.append(BlerRow(float(eps), trials, ff, np.array([ff])))
        win_rows.append(BlerRow(float(eps), trials, wf, np.array([wf])))
        dis.append(d)
    return WindowComparison(
        [float(e) for e in epsilon_grid], BlerTable("eps", full_rows, 1), BlerTable("eps", win_rows, 1), dis
    )


def peel_vs_bp_agree(graph: TannerGraph, erased: np.ndarray, rng_seed=None) -> bool:
    return peel(ResidualGraph(graph, erased), rng_seed).success == bp_decode_bec(graph, erased).success
