"""Connectivity matrices for single, modified, loop and multi-layer chain ensembles.

A connectivity matrix ``T`` is a D x D binary matrix. ``T[u, v] == 1`` means every
variable node at position ``v`` sends exactly one edge to a uniformly chosen check
node at position ``u``. Positions are 1-based in names, docs and file formats and
0-based in arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

FAMILIES = ("single", "modified", "loop", "multilayer", "custom")


class EnsembleError(ValueError):
    """Invalid ensemble parameters or matrix."""


@dataclass(frozen=True)
class ChainBlock:
    """One chain inside a (possibly connected) ensemble.

    ``offset`` is the 0-based index of the chain's position 1 in the global matrix.
    ``chain`` is the 1-based global chain index, ``layer`` the 1-based layer.
    """

    chain: int
    layer: int
    offset: int
    length: int  # L, the chain spans L + 2 positions

    @property
    def span(self) -> int:
        return self.length + 2

    def index(self, position: int) -> int:
        """Global 0-based index of chain position ``position`` (1-based)."""
        if not 1 <= position <= self.span:
            raise EnsembleError(f"position {position} outside chain of length {self.length}")
        return self.offset + position - 1


@dataclass(frozen=True)
class ConnectivityMatrix:
    entries: np.ndarray
    l: int
    r: int
    family: str = "custom"
    params: dict = field(default_factory=dict)
    blocks: tuple[ChainBlock, ...] = ()
    # child chains coupled to each chain, with the 1-based parent position of the region
    couplings: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.int8, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise EnsembleError(f"connectivity matrix must be square and non-empty, got {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise EnsembleError("connectivity matrix entries must be 0/1")
        _check_degrees(self.l, self.r)
        if self.family not in FAMILIES:
            raise EnsembleError(f"unknown family {self.family!r}")
        check_deg = (self.r // self.l) * a.sum(axis=1)
        if (check_deg > self.r).any():
            u = int(np.argmax(check_deg > self.r)) + 1
            raise EnsembleError(f"check degree {check_deg[u - 1]} at position {u} exceeds r={self.r}")
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)
        if not self.blocks:
            object.__setattr__(self, "blocks", (ChainBlock(1, 1, 0, a.shape[0] - 2),))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_chains(self) -> int:
        return len(self.blocks)

    @property
    def n_layers(self) -> int:
        return max(b.layer for b in self.blocks)

    def __eq__(self, other):
        if not isinstance(other, ConnectivityMatrix):
            return NotImplemented
        return (
            self.l == other.l
            and self.r == other.r
            and np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash((self.l, self.r, self.entries.tobytes()))

    def chain_map(self) -> np.ndarray:
        """Per-position 1-based chain index (0 for positions outside every chain)."""
        out = np.zeros(self.dim, dtype=np.int64)
        for b in self.blocks:
            out[b.offset : b.offset + b.span] = b.chain
        return out

    def layer_map(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.int64)
        for b in self.blocks:
            out[b.offset : b.offset + b.span] = b.layer
        return out

    def outer_positions(self) -> np.ndarray:
        """0-based indices of the outer segments of a loop ensemble.

        Chain 1's outer segment runs from its position 1 up to the end of its
        degree-four region; chain 2's mirror segment runs from its degree-four
        region to its position L + 2.
        """
        if self.family != "loop":
            raise EnsembleError("outer segments are only defined for the loop ensemble")
        L = self.params["L"]
        a = math.ceil(L / 3)
        b = (2 * L) // 3
        c1, c2 = self.blocks
        first = [c1.index(p) for p in range(1, a + 3)]
        second = [c2.index(p) for p in range(b + 1, L + 3)]
        return np.array(first + second, dtype=np.int64)

    def to_text(self) -> str:
        head = [str(self.dim), str(self.l), str(self.r), self.family]
        head += [f"{k}={v}" for k, v in self.params.items()]
        rows = [" ".join(str(int(x)) for x in row) for row in self.entries]
        return "\n".join([" ".join(head)] + rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConnectivityMatrix":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise EnsembleError("empty matrix file")
        head = lines[0].split()
        if len(head) < 4:
            raise EnsembleError("header must be 'D l r family [key=value ...]'")
        D, l, r, family = int(head[0]), int(head[1]), int(head[2]), head[3]
        params = {}
        for tok in head[4:]:
            k, _, v = tok.partition("=")
            params[k] = int(v)
        rows = [[int(x) for x in ln.split()] for ln in lines[1:]]
        if len(rows) != D or any(len(row) != D for row in rows):
            raise EnsembleError(f"expected {D} rows of {D} entries")
        entries = np.array(rows)
        if family in BUILDERS and params:
            built = BUILDERS[family](l, r, **params)
            if not np.array_equal(built.entries, entries):
                raise EnsembleError(f"matrix body does not match {family} {params}")
            return built
        return cls(entries, l, r, "custom", params)


@dataclass(frozen=True)
class DegreeProfile:
    d_v: np.ndarray
    d_c: np.ndarray
    check_degree: np.ndarray
    occupied: np.ndarray


def _check_degrees(l: int, r: int) -> None:
    if l < 2 or r < 2 or r % l != 0:
        raise EnsembleError(f"invalid degree pair (l={l}, r={r}): need l >= 2 and r a multiple of l")


def _chain_entries(l: int, L: int) -> np.ndarray:
    # variable position v (1-based 2..L+1) connects to checks v-w .. v+w, spreading l edges
    if l % 2 == 0:
        raise EnsembleError("single-chain spreading needs odd l (symmetric window)")
    w = (l - 1) // 2
    D = L + 2 * w
    T = np.zeros((D, D), dtype=np.int8)
    for v in range(w, L + w):
        T[v - w : v + w + 1, v] = 1
    return T


def single_chain(l: int, r: int, L: int) -> ConnectivityMatrix:
    """C(l, r, L): ``L`` coupled copies of an (l, r)-regular code, D = L + 2 for l = 3."""
    _check_degrees(l, r)
    if L < 2:
        raise EnsembleError(f"chain length L={L} must be >= 2")
    T = _chain_entries(l, L)
    return ConnectivityMatrix(T, l, r, "single", {"L": L}, (ChainBlock(1, 1, 0, L),))


def modified_chain(l: int, r: int, L: int, p: int) -> ConnectivityMatrix:
    """Check-regular chain with two degree-four regions mirrored around the centre."""
    base = single_chain(l, r, L)
    if l != 3:
        raise EnsembleError("the modified chain is defined for l = 3")
    if not 2 <= p <= math.ceil(L / 2):
        raise EnsembleError(f"p={p} outside 2..ceil(L/2)={math.ceil(L / 2)}")
    T = base.entries.copy()
    extra = [(L + 2, p), (L + 2, p + 1), (L + 1, p + 2), (1, L - p + 3), (1, L - p + 2), (2, L - p + 1)]
    for u, v in extra:
        if T[u - 1, v - 1]:
            raise EnsembleError(f"L={L} too short: extra edge ({u},{v}) already present")
        T[u - 1, v - 1] = 1
    return ConnectivityMatrix(T, l, r, "modified", {"L": L, "p": p}, base.blocks)


def loop_ensemble(l: int, r: int, L: int) -> ConnectivityMatrix:
    """L(l, r, L): two chains, each one's end checks feeding the other's interior."""
    _check_degrees(l, r)
    if l != 3:
        raise EnsembleError("the loop ensemble is defined for l = 3")
    if L < 5:
        raise EnsembleError(f"L={L} too small for disjoint connection regions (need L >= 5)")
    Tc = single_chain(l, r, L).entries
    n = L + 2
    a = math.ceil(L / 3)
    b = (2 * L) // 3
    L1 = np.zeros((n, n), dtype=np.int8)
    L2 = np.zeros((n, n), dtype=np.int8)
    for u, v in [(1, a), (1, a + 1), (2, a + 2)]:
        L1[u - 1, v - 1] = 1
    for u, v in [(L + 1, b + 1), (L + 2, b + 2), (L + 2, b + 3)]:
        L2[u - 1, v - 1] = 1
    T = np.block([[Tc, L2], [L1, Tc]])
    blocks = (ChainBlock(1, 1, 0, L), ChainBlock(2, 1, n, L))
    return ConnectivityMatrix(T, l, r, "loop", {"L": L}, blocks)


def region_starts(L: int, t: int) -> list[int]:
    """First chain position of each strengthened region in a multi-layer chain."""
    return [math.ceil(k * L / (t + 1)) for k in range(1, t + 1)]


def _cct_block(L: int, c: int) -> np.ndarray:
    n = L + 2
    B = np.zeros((n, n), dtype=np.int8)
    for u, v in [(1, c), (1, c + 1), (2, c + 2), (L + 1, c + 1), (L + 2, c + 2), (L + 2, c + 3)]:
        B[u - 1, v - 1] = 1
    return B


def multilayer(l: int, r: int, L: int, N: int, t: int = 1) -> ConnectivityMatrix:
    """S(l, r, L, N, t): N layers, each chain strengthening t chains of the next layer.

    Layer j holds t**(j-1) chains. Chain k of layer j couples its region i
    (positions c_i .. c_i + 3) to both ends of chain k*t + i of layer j + 1.
    """
    _check_degrees(l, r)
    if l != 3:
        raise EnsembleError("multi-layer ensembles are defined for l = 3")
    if N < 1 or t < 1:
        raise EnsembleError(f"need N >= 1 and t >= 1, got N={N}, t={t}")
    if L < 8:
        raise EnsembleError(f"L={L} too small for the connection regions (need L >= 8)")
    starts = region_starts(L, t)
    for i, c in enumerate(starts):
        if c < 3 or c + 3 > L or (i and c <= starts[i - 1] + 3):
            raise EnsembleError(f"t={t} connection regions overlap or leave the interior of L={L}")

    n = L + 2
    Tc = single_chain(l, r, L).entries
    blocks = []
    layer_chains: list[list[int]] = []
    for j in range(1, N + 1):
        ids = []
        for _ in range(t ** (j - 1)):
            idx = len(blocks)
            blocks.append(ChainBlock(idx + 1, j, idx * n, L))
            ids.append(idx)
        layer_chains.append(ids)

    T = np.zeros((len(blocks) * n, len(blocks) * n), dtype=np.int8)
    couplings = []
    for b in blocks:
        T[b.offset : b.offset + n, b.offset : b.offset + n] = Tc
    for j in range(N - 1):
        for k, parent in enumerate(layer_chains[j]):
            for i, c in enumerate(starts):
                child = layer_chains[j + 1][k * t + i]
                po, co = blocks[parent].offset, blocks[child].offset
                T[co : co + n, po : po + n] |= _cct_block(L, c)
                couplings.append((parent + 1, child + 1, c))
    return ConnectivityMatrix(
        T, l, r, "multilayer", {"L": L, "N": N, "t": t}, tuple(blocks), tuple(couplings)
    )


def disjoint_union(*parts: ConnectivityMatrix) -> ConnectivityMatrix:
    """Block-diagonal union of independent ensembles (e.g. two independent chains)."""
    if not parts:
        raise EnsembleError("need at least one ensemble")
    l, r = parts[0].l, parts[0].r
    if any(p.l != l or p.r != r for p in parts):
        raise EnsembleError("all parts must share (l, r)")
    D = sum(p.dim for p in parts)
    T = np.zeros((D, D), dtype=np.int8)
    blocks = []
    off = 0
    for p in parts:
        T[off : off + p.dim, off : off + p.dim] = p.entries
        for b in p.blocks:
            blocks.append(ChainBlock(len(blocks) + 1, 1, off + b.offset, b.length))
        off += p.dim
    return ConnectivityMatrix(T, l, r, "custom", {}, tuple(blocks))


def degree_profile(T: ConnectivityMatrix) -> DegreeProfile:
    e = T.entries.astype(np.int64)
    d_v = e.sum(axis=0)
    d_c = e.sum(axis=1)
    return DegreeProfile(d_v, d_c, (T.r // T.l) * d_c, (d_v > 0).astype(np.int64))


def design_rate(T: ConnectivityMatrix) -> Fraction:
    """1 - (l/r) D / #occupied positions; M cancels."""
    occupied = int((T.entries.sum(axis=0) > 0).sum())
    if occupied == 0:
        raise EnsembleError("design rate undefined: no occupied positions")
    return 1 - Fraction(T.l, T.r) * Fraction(T.dim, occupied)


def protection_ratio(N: int, t: int) -> Fraction:
    """Fraction of chains that enjoy a strengthened middle region."""
    if N < 1 or t < 1:
        raise EnsembleError(f"need N >= 1 and t >= 1, got N={N}, t={t}")
    num = sum(t ** (j - 1) for j in range(1, N))
    den = sum(t ** (j - 1) for j in range(1, N + 1))
    return Fraction(num, den)


BUILDERS = {
    "single": single_chain,
    "modified": modified_chain,
    "loop": loop_ensemble,
    "multilayer": multilayer,
}


def build(family: str, l: int = 3, r: int = 6, **params) -> ConnectivityMatrix:
    try:
        builder = BUILDERS[family]
    except KeyError:
        raise EnsembleError(f"unknown family {family!r}") from None
    return builder(l, r, **params)


def parse_spec(spec: str) -> ConnectivityMatrix:
    """Parse an inline ensemble spec such as ``single:3,6,25`` or ``multilayer:3,6,50,2,1``."""
    family, _, args = spec.partition(":")
    try:
        nums = [int(x) for x in args.split(",") if x]
    except ValueError:
        raise EnsembleError(f"bad ensemble spec {spec!r}") from None
    if family not in BUILDERS or len(nums) < 3:
        raise EnsembleError(f"bad ensemble spec {spec!r}")
    return BUILDERS[family](*nums)
