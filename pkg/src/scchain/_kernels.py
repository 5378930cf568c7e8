"""Compiled inner loops shared by the simulation modules.

Graph arrays (all int64):
  var_ptr   CSR offsets of each variable's edges (edge ids are var_ptr[a] + k)
  edge_var  variable of each edge
  edge_chk  check of each edge
  chk_ptr   CSR offsets of each check's sockets
  chk_edges edge id held by each socket
  edge_slot socket index of each edge (inverse of chk_edges)
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def find_4cycle(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, seen, seen_chk, start):
    """Return (var, edge) of the first variable >= start lying on a 4-cycle, or (-1, -1)."""
    n_var = var_ptr.shape[0] - 1
    for a in range(start, n_var):
        for e in range(var_ptr[a], var_ptr[a + 1]):
            c = edge_chk[e]
            for s in range(chk_ptr[c], chk_ptr[c + 1]):
                b = edge_var[chk_edges[s]]
                if b == a:
                    continue
                if seen[b] == a and seen_chk[b] != c:
                    return a, e
                seen[b] = a
                seen_chk[b] = c
    return -1, -1


@nb.njit(cache=True)
def remove_4cycles(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, edge_slot, chk_pos, pos_slot_lo, pos_slot_hi, seed, budget):
    """Swap check endpoints of offending edges with random same-position edges.

    Returns the number of swaps used, or -1 - position when the budget ran out.
    """
    np.random.seed(seed)
    n_var = var_ptr.shape[0] - 1
    seen = np.full(n_var, -1, np.int64)
    seen_chk = np.full(n_var, -1, np.int64)
    swaps = 0
    start = 0
    while True:
        a, e = find_4cycle(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, seen, seen_chk, start)
        if a < 0:
            if start == 0:
                return swaps
            start = 0  # full confirmation pass
            seen[:] = -1
            continue
        if swaps >= budget:
            return -1 - chk_pos[edge_chk[e]]
        c = edge_chk[e]
        m = chk_pos[c]
        lo, hi = pos_slot_lo[m], pos_slot_hi[m]
        while True:
            s2 = lo + np.random.randint(0, hi - lo)
            e2 = chk_edges[s2]
            if edge_chk[e2] != c:
                break
        c2 = edge_chk[e2]
        s1 = edge_slot[e]
        chk_edges[s1] = e2
        chk_edges[s2] = e
        edge_slot[e] = s2
        edge_slot[e2] = s1
        edge_chk[e] = c2
        edge_chk[e2] = c
        swaps += 1
        seen[:] = -1
        start = a if a < edge_var[e2] else edge_var[e2]


@nb.njit(cache=True)
def peel(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, erased, uniforms, trace):
    """Peeling decoder. Returns (iterations, unresolved mask).

    ``trace[k]`` receives the number of degree-one checks before iteration k.
    The degree-one check to process is drawn uniformly using ``uniforms``.
    """
    n_var = var_ptr.shape[0] - 1
    n_chk = chk_ptr.shape[0] - 1
    deg = np.zeros(n_chk, np.int64)
    acc = np.zeros(n_chk, np.int64)
    for c in range(n_chk):
        for s in range(chk_ptr[c], chk_ptr[c + 1]):
            a = edge_var[chk_edges[s]]
            if erased[a]:
                deg[c] += 1
                acc[c] ^= a
    bag = np.empty(n_chk, np.int64)
    where = np.full(n_chk, -1, np.int64)
    size = 0
    for c in range(n_chk):
        if deg[c] == 1:
            bag[size] = c
            where[c] = size
            size += 1
    open_ = erased.copy()
    it = 0
    while True:
        trace[it] = size
        if size == 0:
            break
        k = int(uniforms[it] * size)
        if k >= size:
            k = size - 1
        c = bag[k]
        a = acc[c]
        open_[a] = False
        for e in range(var_ptr[a], var_ptr[a + 1]):
            c2 = edge_chk[e]
            deg[c2] -= 1
            acc[c2] ^= a
            if deg[c2] == 1:
                bag[size] = c2
                where[c2] = size
                size += 1
            elif deg[c2] == 0:
                i = where[c2]
                last = bag[size - 1]
                bag[i] = last
                where[last] = i
                where[c2] = -1
                size -= 1
        it += 1
    return it, open_


@nb.njit(cache=True)
def _check_update(chk_ptr, chk_edges, m_vc, m_cv, c, clip, tbuf):
    lo, hi = chk_ptr[c], chk_ptr[c + 1]
    n = hi - lo
    for k in range(n):
        tbuf[k] = np.tanh(0.5 * m_vc[chk_edges[lo + k]])
    for k in range(n):
        prod = 1.0
        for k2 in range(n):
            if k2 != k:
                prod *= tbuf[k2]
        if prod > 1.0 - 1e-15:
            prod = 1.0 - 1e-15
        elif prod < -1.0 + 1e-15:
            prod = -1.0 + 1e-15
        x = 2.0 * np.arctanh(prod)
        if x > clip:
            x = clip
        elif x < -clip:
            x = -clip
        m_cv[chk_edges[lo + k]] = x


@nb.njit(cache=True)
def sum_product(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, llr, max_iter, clip, early_stop):
    """Flooding sum-product. Returns (iterations, posterior LLRs, syndrome satisfied)."""
    n_var = var_ptr.shape[0] - 1
    n_chk = chk_ptr.shape[0] - 1
    E = edge_var.shape[0]
    m_vc = np.empty(E)
    m_cv = np.zeros(E)
    for a in range(n_var):
        x = min(max(llr[a], -clip), clip)
        for e in range(var_ptr[a], var_ptr[a + 1]):
            m_vc[e] = x
    post = np.empty(n_var)
    tbuf = np.empty(64)
    ok = False
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(n_chk):
            _check_update(chk_ptr, chk_edges, m_vc, m_cv, c, clip, tbuf)
        for a in range(n_var):
            tot = llr[a]
            for e in range(var_ptr[a], var_ptr[a + 1]):
                tot += m_cv[e]
            post[a] = tot
            for e in range(var_ptr[a], var_ptr[a + 1]):
                x = tot - m_cv[e]
                m_vc[e] = min(max(x, -clip), clip)
        ok = True
        for c in range(n_chk):
            parity = 0
            for s in range(chk_ptr[c], chk_ptr[c + 1]):
                if post[edge_var[chk_edges[s]]] < 0.0:
                    parity ^= 1
            if parity:
                ok = False
                break
        if ok and early_stop:
            break
    return it, post, ok


@nb.njit(cache=True)
def window_bec(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, erased, var_block, chk_order, chk_act, n_blocks, W):
    """Sliding-window erasure decoding; every window is peeled to its fixpoint.

    ``var_block`` is the schedule index of each variable's sub-block, ``chk_order``
    lists checks sorted by activation index ``chk_act`` (largest schedule index
    among their neighbours). Returns the unresolved mask.
    """
    n_chk = chk_ptr.shape[0] - 1
    deg = np.zeros(n_chk, np.int64)
    acc = np.zeros(n_chk, np.int64)
    active = np.zeros(n_chk, np.bool_)
    open_ = erased.copy()
    stack = np.empty(n_chk + var_ptr[-1], np.int64)
    top = 0
    nxt = 0
    for s in range(n_blocks):
        hi = min(s + W, n_blocks)
        while nxt < n_chk and chk_act[chk_order[nxt]] < hi:
            c = chk_order[nxt]
            nxt += 1
            active[c] = True
            for q in range(chk_ptr[c], chk_ptr[c + 1]):
                a = edge_var[chk_edges[q]]
                if open_[a]:
                    deg[c] += 1
                    acc[c] ^= a
            if deg[c] == 1:
                stack[top] = c
                top += 1
        while top > 0:
            top -= 1
            c = stack[top]
            if deg[c] != 1:
                continue
            a = acc[c]
            if var_block[a] < s:
                continue  # committed, never revisited
            open_[a] = False
            for e in range(var_ptr[a], var_ptr[a + 1]):
                c2 = edge_chk[e]
                if active[c2]:
                    deg[c2] -= 1
                    acc[c2] ^= a
                    if deg[c2] == 1:
                        stack[top] = c2
                        top += 1
        if hi == n_blocks:
            break  # final window covers the rest of the stream
    return open_


@nb.njit(cache=True)
def window_awgn(var_ptr, edge_chk, chk_ptr, chk_edges, edge_var, llr, var_block, chk_order, chk_act, n_blocks, W, iters, final_iters, clip):
    """Sliding-window sum-product with persistent messages.

    Committed variables broadcast their hard decision as an LLR of +-clip. The
    final window, which sees the rest of the stream, gets ``final_iters``.
    Returns the posterior LLRs (committed ones frozen at commit time).
    """
    n_var = var_ptr.shape[0] - 1
    n_chk = chk_ptr.shape[0] - 1
    E = edge_var.shape[0]
    m_vc = np.empty(E)
    m_cv = np.zeros(E)
    for a in range(n_var):
        x = min(max(llr[a], -clip), clip)
        for e in range(var_ptr[a], var_ptr[a + 1]):
            m_vc[e] = x
    post = llr.copy()
    active = np.zeros(n_chk, np.bool_)
    tbuf = np.empty(64)
    # variables grouped by block for fast window scans
    order = np.argsort(var_block, kind="mergesort")
    blk_ptr = np.zeros(n_blocks + 1, np.int64)
    for a in range(n_var):
        blk_ptr[var_block[a] + 1] += 1
    for b in range(n_blocks):
        blk_ptr[b + 1] += blk_ptr[b]
    lo_chk = 0
    nxt = 0
    for s in range(n_blocks):
        hi = min(s + W, n_blocks)
        while nxt < n_chk and chk_act[chk_order[nxt]] < hi:
            active[chk_order[nxt]] = True
            nxt += 1
        while lo_chk < nxt and chk_act[chk_order[lo_chk]] < s:
            lo_chk += 1
        budget = final_iters if hi == n_blocks else iters
        for _ in range(budget):
            for k in range(lo_chk, nxt):
                _check_update(chk_ptr, chk_edges, m_vc, m_cv, chk_order[k], clip, tbuf)
            for i in range(blk_ptr[s], blk_ptr[hi]):
                a = order[i]
                tot = llr[a]
                for e in range(var_ptr[a], var_ptr[a + 1]):
                    if active[edge_chk[e]]:
                        tot += m_cv[e]
                post[a] = tot
                for e in range(var_ptr[a], var_ptr[a + 1]):
                    x = tot - m_cv[e] if active[edge_chk[e]] else tot
                    m_vc[e] = min(max(x, -clip), clip)
            ok = True
            for k in range(lo_chk, nxt):
                c = chk_order[k]
                parity = 0
                for q in range(chk_ptr[c], chk_ptr[c + 1]):
                    if post[edge_var[chk_edges[q]]] < 0.0:
                        parity ^= 1
                if parity:
                    ok = False
                    break
            if ok:
                break
        if hi == n_blocks:
            break
        for i in range(blk_ptr[s], blk_ptr[s + 1]):
            a = order[i]
            x = clip if post[a] >= 0.0 else -clip
            for e in range(var_ptr[a], var_ptr[a + 1]):
                m_vc[e] = x
    return post
