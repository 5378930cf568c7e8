import math

import numpy as np
import pytest

from oracles import brute_force_marginals
from scchain.ensembles import ConnectivityMatrix, loop_ensemble, modified_chain, multilayer, single_chain
from scchain.peeling import TannerGraph, apply_bec, peel, run_trials, sample_graph
from scchain.stream import (
    BPConfig,
    StreamOrderError,
    SubBlock,
    biawgn_llrs,
    bp_decode_bec,
    bp_decode_biawgn,
    noise_sigma,
    simulate_biawgn,
    stream_blocks,
    transmission_schedule,
    window_decode,
)


def graph_from_parity(H) -> TannerGraph:
    """Wrap an explicit parity-check matrix in the graph container."""
    H = np.asarray(H)
    m, n = H.shape
    var_ptr = np.concatenate([[0], np.cumsum(H.sum(0))]).astype(np.int64)
    edge_var = np.repeat(np.arange(n), H.sum(0)).astype(np.int64)
    edge_chk = np.concatenate([np.flatnonzero(H[:, a]) for a in range(n)]).astype(np.int64)
    chk_edges = np.lexsort((np.arange(len(edge_chk)), edge_chk)).astype(np.int64)
    chk_ptr = np.concatenate([[0], np.cumsum(H.sum(1))]).astype(np.int64)
    slot = np.empty_like(chk_edges)
    slot[chk_edges] = np.arange(len(chk_edges))
    T = ConnectivityMatrix(np.ones((1, 1)), 3, 6)
    return TannerGraph(T, 1, np.zeros(n, np.int64), var_ptr, edge_var, edge_chk, np.zeros(m, np.int64), chk_ptr,
                       chk_edges, slot)


# a cycle-free code on 10 variables
TREE_H = np.array([
    [1, 1, 1, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, 1, 1, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 1, 1, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 1, 1, 0],
    [0, 0, 0, 0, 0, 0, 1, 0, 0, 1],
])


def test_config_validation():
    with pytest.raises(ValueError):
        BPConfig(max_iterations=0)
    with pytest.raises(ValueError):
        BPConfig(llr_clip=0)


def test_bec_bp_zero_erasures():
    g = sample_graph(single_chain(3, 6, 10), 20, 0)
    out = bp_decode_bec(g, np.zeros(g.n_var, bool))
    assert out.success and out.iterations == 0


@pytest.mark.parametrize("T", [single_chain(3, 6, 12), loop_ensemble(3, 6, 8), multilayer(3, 6, 12, 2, 1),
                               modified_chain(3, 6, 12, 4)], ids=["single", "loop", "multilayer", "modified"])
def test_bec_bp_equals_peeling(T):
    for s in range(60):
        g = sample_graph(T, 30, s)
        res = apply_bec(g, 0.35 + 0.005 * s, 1000 + s)
        pd = peel(res, s)
        bp = bp_decode_bec(g, res.erased)
        assert pd.success == bp.success
        assert np.array_equal(pd.unresolved, bp.unresolved)  # same maximal stopping set


def test_bp_bler_equals_pd_bler():
    T = single_chain(3, 6, 25)
    a = run_trials(T, 500, [0.45], 150, 9, decoder="pd")
    b = run_trials(T, 500, [0.45], 150, 9, decoder="bp")
    assert a.rows[0].failures == b.rows[0].failures


def test_awgn_saturated_input():
    g = sample_graph(single_chain(3, 6, 10), 20, 1)
    out = bp_decode_biawgn(g, np.full(g.n_var, 25.0), BPConfig(llr_clip=25.0))
    assert out.success and out.iterations == 1


def test_awgn_noiseless():
    g = sample_graph(single_chain(3, 6, 10), 20, 1)
    sigma = 0.5
    out = bp_decode_biawgn(g, np.full(g.n_var, 2.0 / sigma**2))
    assert out.success


def test_awgn_rejects_nonfinite():
    g = sample_graph(single_chain(3, 6, 10), 20, 1)
    with pytest.raises(ValueError):
        bp_decode_biawgn(g, np.full(g.n_var, np.inf))


def test_sum_product_exact_on_tree():
    g = graph_from_parity(TREE_H)
    rng = np.random.default_rng(4)
    llr = rng.normal(1.0, 1.5, 10)
    llr[3] = -2.0  # one flipped-looking bit
    out = bp_decode_biawgn(g, llr, BPConfig(max_iterations=20, llr_clip=60.0, early_stop=False))
    exact = brute_force_marginals(TREE_H, llr)
    assert np.allclose(out.posterior, exact, atol=1e-8)


def test_zero_information_fails():
    g = sample_graph(single_chain(3, 6, 10), 20, 1)
    out = bp_decode_biawgn(g, np.zeros(g.n_var) - 1e-9, BPConfig(max_iterations=5))
    assert not out.success


def test_noise_mapping():
    assert noise_sigma(0.5, 0.0) == pytest.approx(1.0)
    assert noise_sigma(0.25, 10 * math.log10(2)) == pytest.approx(1.0)


def test_biawgn_high_snr_no_failures():
    tab = simulate_biawgn(single_chain(3, 6, 25), 100, [8.0], 100, 2)
    assert tab.rows[0].failures == 0 and tab.param_name == "ebn0"


def test_schedule_single_chain_natural():
    s = transmission_schedule(single_chain(3, 6, 10))
    assert [b.position for b in s.blocks] == list(range(2, 12))


def test_schedule_two_layers_order():
    L = 50
    s = transmission_schedule(multilayer(3, 6, L, 2, 1))
    c = math.ceil(L / 2)
    want = [(1, i) for i in range(2, c + 4)] + [(2, 2), (2, L + 1)]
    want += [(1, i) for i in range(c + 4, L + 2)] + [(2, i) for i in range(3, L + 1)]
    assert [(b.layer, b.position) for b in s.blocks] == want


@pytest.mark.parametrize("N,t", [(2, 1), (3, 1), (2, 2), (3, 2)])
def test_schedule_is_permutation(N, t):
    T = multilayer(3, 6, 30, N, t)
    s = transmission_schedule(T)
    ids = [(b.chain, b.position) for b in s.blocks]
    assert len(ids) == len(set(ids)) == T.n_chains * 30
    assert sorted(s.global_positions(T).tolist()) == np.flatnonzero(T.entries.sum(0)).tolist()


def test_schedule_rejects_other_families():
    with pytest.raises(ValueError):
        transmission_schedule(loop_ensemble(3, 6, 10))


def _bec_pair(T, M, seed, eps):
    g = sample_graph(T, M, seed)
    res = apply_bec(g, eps, seed + 1)
    return g, res.erased


@pytest.mark.parametrize("T", [single_chain(3, 6, 20), multilayer(3, 6, 20, 2, 1)], ids=["single", "multilayer"])
def test_window_full_width_is_full_decoding(T):
    s = transmission_schedule(T)
    for seed in range(30):
        g, erased = _bec_pair(T, 40, seed, 0.42 + 0.002 * seed)
        w = window_decode(g, stream_blocks(g, erased, s), s, len(s))
        f = bp_decode_bec(g, erased)
        assert np.array_equal(w.unresolved, f.unresolved)


def test_window_success_implies_full_success():
    T = multilayer(3, 6, 20, 2, 1)
    s = transmission_schedule(T)
    for seed in range(40):
        g, erased = _bec_pair(T, 40, seed, 0.45)
        for W in (4, 8, 12):
            w = window_decode(g, stream_blocks(g, erased, s), s, W)
            if w.success:
                assert bp_decode_bec(g, erased).success
            # and window losses are a superset of full-decoding losses
            assert (w.unresolved >= bp_decode_bec(g, erased).unresolved).all()


def test_window_awgn_full_width_matches_bp():
    T = single_chain(3, 6, 15)
    s = transmission_schedule(T)
    g = sample_graph(T, 40, 3)
    llr = biawgn_llrs(g.n_var, noise_sigma(0.43, 1.2), 5)
    cfg = BPConfig(max_iterations=60)
    w = window_decode(g, stream_blocks(g, llr, s), s, len(s), cfg, channel="awgn")
    f = bp_decode_biawgn(g, llr, cfg)
    assert np.array_equal(w.posterior, f.posterior)


def test_window_stream_order_checked():
    T = single_chain(3, 6, 12)
    s = transmission_schedule(T)
    g, erased = _bec_pair(T, 20, 0, 0.3)
    blocks = stream_blocks(g, erased, s)
    blocks[0], blocks[1] = blocks[1], blocks[0]
    with pytest.raises(StreamOrderError):
        window_decode(g, blocks, s, 6)
    bad = stream_blocks(g, erased, s)
    bad[2] = (bad[2][0], bad[2][1][:-1])
    with pytest.raises(StreamOrderError):
        window_decode(g, bad, s, 6)
    with pytest.raises(ValueError):
        window_decode(g, stream_blocks(g, erased, s), s, 3)


def test_window_multilayer_waits_for_boundary_blocks():
    """Chain-1 middle checks activate only once layer-2 boundary blocks have arrived."""
    from scchain.stream import _window_layout

    L = 20
    T = multilayer(3, 6, L, 2, 1)
    s = transmission_schedule(T)
    g, erased = _bec_pair(T, 20, 1, 0.3)
    _, var_block, chk_act, _ = _window_layout(g, stream_blocks(g, erased, s), s)
    idx = {(b.chain, b.position): k for k, b in enumerate(s.blocks)}
    c = math.ceil(L / 2)
    # boundary blocks of chain 2 come right after chain 1's connection region
    assert idx[(2, 2)] == idx[(1, c + 3)] + 1 and idx[(2, L + 1)] == idx[(1, c + 3)] + 2
    # a check mixing chain-1 middle and chain-2 variables activates after their arrival
    owner = g.var_pos[g.edge_var[g.chk_edges]] >= T.blocks[1].offset
    starts = g.chk_ptr[:-1]
    mixed = np.logical_and(np.logical_or.reduceat(owner, starts), np.logical_or.reduceat(~owner, starts))
    assert mixed.any()
    assert (chk_act[mixed] >= idx[(2, 2)]).all()
    assert var_block.max() == len(s) - 1


def test_awgn_campaign_monotone():
    T = single_chain(3, 6, 10)
    tab = simulate_biawgn(T, 40, [0.5, 2.0, 4.0], 60, 1, config=BPConfig(max_iterations=50))
    b = [r.bler for r in tab.rows]
    assert b[0] >= b[1] >= b[2]
