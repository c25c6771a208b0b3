"""Tree outer code: segmentation, GF(2) parity, and the stitching decoder.

A b-bit message is split into L fragments of b_l bits; sub-block l is the
fragment followed by a_l parity bits computed from all earlier fragments,
so every sub-block is J = b_l + a_l bits and a_1 = 0. Sub-blocks are
handled either as (J,) bit vectors or as J-bit integers (MSB first), the
latter being the codeword value minus one.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, EncodingError


@dataclass(frozen=True)
class AllocationProfile:
    L: int
    J: int
    a: tuple  # parity bits per sub-slot, a[0] == 0

    def __post_init__(self):
        a = tuple(int(x) for x in self.a)
        object.__setattr__(self, "a", a)
        if len(a) != self.L:
            raise ConfigError(f"need {self.L} parity lengths, got {len(a)}")
        if a[0] != 0:
            raise ConfigError("the first sub-block carries no parity (a_1 = 0)")
        if any(x < 0 or x > self.J for x in a):
            raise ConfigError(f"parity lengths must lie in [0, J={self.J}]: {a}")

    @classmethod
    def from_parity(cls, J, parity):
        """Build from (a_2, ..., a_L)."""
        parity = tuple(int(x) for x in parity)
        return cls(L=len(parity) + 1, J=J, a=(0,) + parity)

    @classmethod
    def uniform(cls, L, J, b):
        """Spread the L*J - b parity bits as evenly as possible, later slots first."""
        budget = L * J - b
        if L < 2:
            if budget:
                raise ConfigError("L = 1 leaves no room for parity")
            return cls(L=1, J=J, a=(0,))
        base, extra = divmod(budget, L - 1)
        parity = [base] * (L - 1)
        for i in range(extra):
            parity[-1 - i] += 1
        if max(parity) > J:
            raise ConfigError(f"budget {budget} does not fit in {L - 1} slots of {J} bits")
        return cls.from_parity(J, parity)

    @property
    def b_l(self):
        return tuple(self.J - x for x in self.a)

    @property
    def b(self):
        return sum(self.b_l)

    @property
    def parity(self):
        return self.a[1:]

    @property
    def b_offsets(self):
        return np.concatenate(([0], np.cumsum(self.b_l))).astype(np.int64)


@dataclass(frozen=True)
class ParityGeneratorSet:
    """Binary matrices G[(i, l)] of shape (b_i, a_l) for 0 <= i < l < L (0-based)."""

    alloc: AllocationProfile
    G: dict
    H: np.ndarray = field(repr=False)  # stacked parity-check rows, (sum a, b)
    p_offsets: np.ndarray = field(repr=False)

    @classmethod
    def random(cls, alloc, rng=None, seed=None):
        if rng is None:
            rng = np.random.default_rng(seed)
        G = {}
        for l in range(1, alloc.L):
            for i in range(l):
                G[(i, l)] = rng.integers(0, 2, size=(alloc.b_l[i], alloc.a[l]), dtype=np.uint8)
        return cls.from_blocks(alloc, G)

    @classmethod
    def from_blocks(cls, alloc, G):
        boff = alloc.b_offsets
        p_off = np.concatenate(([0], np.cumsum(alloc.a))).astype(np.int64)
        H = np.zeros((int(p_off[-1]), alloc.b), dtype=np.uint8)
        for (i, l), blk in G.items():
            blk = np.asarray(blk, dtype=np.uint8)
            if blk.shape != (alloc.b_l[i], alloc.a[l]):
                raise EncodingError(
                    f"G[{i},{l}] must be {(alloc.b_l[i], alloc.a[l])}, got {blk.shape}")
            if np.any(blk > 1):
                raise EncodingError("generator entries must be 0/1")
            H[p_off[l]:p_off[l] + alloc.a[l], boff[i]:boff[i + 1]] = blk.T
        return cls(alloc=alloc, G=G, H=H, p_offsets=p_off)

    def parity_of(self, prefix_bits, l):
        """Parity bits of sub-block l (0-based) from the message prefix before it."""
        boff = self.alloc.b_offsets
        rows = self.H[self.p_offsets[l]:self.p_offsets[l + 1], :boff[l]]
        prefix = np.asarray(prefix_bits, dtype=np.uint8)[:boff[l]]
        return (rows.astype(np.int64) @ prefix) % 2


@dataclass(frozen=True)
class SubBlockList:
    """Per-sub-slot candidate sub-blocks as J-bit integers, shape (L, K).

    Shorter lists are padded with -1, which the decoder skips.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 2:
            raise EncodingError("lists must be an (L, K) array")
        object.__setattr__(self, "values", v)

    @property
    def L(self):
        return self.values.shape[0]

    @property
    def K(self):
        return self.values.shape[1]

    def is_distinct(self):
        return all(len(np.unique(row[row >= 0])) == np.count_nonzero(row >= 0) for row in self.values)

    @classmethod
    def from_sets(cls, sets, K=None):
        """Pad ragged per-slot collections to a rectangle."""
        sets = [np.asarray(sorted(int(v) for v in s), dtype=np.int64) for s in sets]
        width = max([len(s) for s in sets] + [0]) if K is None else int(K)
        out = np.full((len(sets), width), -1, dtype=np.int64)
        for l, s in enumerate(sets):
            if len(s) > width:
                raise EncodingError(f"slot {l} holds {len(s)} entries, width is {width}")
            out[l, :len(s)] = s
        return cls(out)


@dataclass
class DecodeResult:
    messages: np.ndarray  # (n, b) unique decoded messages
    chi: np.ndarray  # survival paths per root
    checked: np.ndarray  # parity-checked nodes per root
    root_messages: list  # decoded message per root or None

    @property
    def total_checked(self):
        return int(self.checked.sum())


def bits_to_int(bits):
    v = 0
    for x in np.asarray(bits).ravel():
        v = (v << 1) | int(x)
    return v


def int_to_bits(v, n):
    return np.array([(int(v) >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)


def outer_encode(message, alloc: AllocationProfile, gens: ParityGeneratorSet):
    """Encode one b-bit message into an (L, J) array of sub-block bits."""
    m = np.asarray(message, dtype=np.uint8).ravel()
    if m.size != alloc.b:
        raise EncodingError(f"message has {m.size} bits, allocation expects {alloc.b}")
    if gens.alloc != alloc:
        raise EncodingError("generator set was built for a different allocation")
    boff = alloc.b_offsets
    out = np.zeros((alloc.L, alloc.J), dtype=np.uint8)
    for l in range(alloc.L):
        bl = alloc.b_l[l]
        out[l, :bl] = m[boff[l]:boff[l + 1]]
        if alloc.a[l]:
            out[l, bl:] = gens.parity_of(m, l)
    return out


def encode_values(messages, alloc, gens):
    """Encode a (n, b) batch; returns (n, L) J-bit integer sub-blocks."""
    messages = np.atleast_2d(np.asarray(messages, dtype=np.uint8))
    boff = alloc.b_offsets
    weights = 1 << np.arange(alloc.J - 1, -1, -1, dtype=np.int64)
    out = np.empty((messages.shape[0], alloc.L), dtype=np.int64)
    H = gens.H.astype(np.int64)
    for l in range(alloc.L):
        bl, al = alloc.b_l[l], alloc.a[l]
        block = np.zeros((messages.shape[0], alloc.J), dtype=np.int64)
        block[:, :bl] = messages[:, boff[l]:boff[l + 1]]
        if al:
            rows = H[gens.p_offsets[l]:gens.p_offsets[l + 1], :boff[l]]
            block[:, bl:] = (messages[:, :boff[l]].astype(np.int64) @ rows.T) % 2
        out[:, l] = block @ weights
    return out


def check_parity(path_prefix, gens: ParityGeneratorSet):
    """True iff the last sub-block of ``path_prefix`` (l, J) satisfies its parity checks."""
    alloc = gens.alloc
    prefix = np.atleast_2d(np.asarray(path_prefix, dtype=np.uint8))
    l = prefix.shape[0] - 1
    if l < 1 or l >= alloc.L or prefix.shape[1] != alloc.J:
        raise EncodingError(f"prefix must have between 2 and {alloc.L} rows of {alloc.J} bits")
    msg = np.concatenate([prefix[i, :alloc.b_l[i]] for i in range(l)])
    expect = gens.parity_of(np.concatenate([msg, np.zeros(alloc.b - msg.size, np.uint8)]), l)
    return bool(np.array_equal(prefix[l, alloc.b_l[l]:], expect))


def message_from_values(path, alloc):
    """Strip parity from an (L,) integer path and return the b message bits."""
    parts = [int_to_bits(v, alloc.J)[:alloc.b_l[l]] for l, v in enumerate(path)]
    return np.concatenate(parts)


def outer_decode(lists, alloc: AllocationProfile, gens: ParityGeneratorSet,
                 max_paths=None) -> DecodeResult:
    """Depth-first stitching from every root in list 1.

    A root yields a message only if exactly one full-length path survives.
    ``max_paths`` stops a root's search early once that many survivors are
    found (the checked-node count is then truncated).
    """
    if not isinstance(lists, SubBlockList):
        lists = SubBlockList(lists)
    if lists.L != alloc.L:
        raise EncodingError(f"{lists.L} lists for an allocation with L={alloc.L}")
    vals = np.ascontiguousarray(lists.values)
    if vals.size and vals.max() >= (1 << alloc.J):
        raise EncodingError(f"list entry {vals.max()} does not fit in J={alloc.J} bits")
    K = lists.K
    cap = np.iinfo(np.int64).max if max_paths is None else int(max_paths)
    chi = np.zeros(K, dtype=np.int64)
    checked = np.zeros(K, dtype=np.int64)
    roots = []
    if alloc.L == 1:
        chi[:] = vals[0] >= 0
        roots = [message_from_values(vals[:, k], alloc) if chi[k] else None for k in range(K)]
    else:
        msg_bits = np.array(alloc.b_l, dtype=np.int64)
        par_bits = np.array(alloc.a, dtype=np.int64)
        boff = alloc.b_offsets
        for k in range(K):
            if vals[0, k] < 0:
                roots.append(None)
                continue
            n, c, path = _kernels.tree_decode_root(
                k, vals, msg_bits, par_bits, boff, gens.H, gens.p_offsets, alloc.L, alloc.J, cap)
            chi[k], checked[k] = n, c
            roots.append(message_from_values(path, alloc) if n == 1 else None)
    found = [m for m in roots if m is not None]
    if found:
        messages = np.unique(np.stack(found), axis=0)
    else:
        messages = np.zeros((0, alloc.b), dtype=np.uint8)
    return DecodeResult(messages=messages, chi=chi, checked=checked, root_messages=roots)


def _parity_vector(K, L, parity):
    a = np.asarray(parity, dtype=float)
    if a.shape != (L - 1,):
        raise ConfigError(f"need L-1={L - 1} parity lengths, got {a.shape}")
    return a


def decoding_complexity(K, L, parity):
    """Expected parity-check evaluations per true root, for parity = (a_2..a_L).

    Xi = K(L-1) + K sum_{j=2}^{L-1} sum_{m=2}^{j} K^{j-m} (K-1) prod_{l=m}^{j} 2^{-a_l}
    """
    if K < 1 or L < 2:
        raise ConfigError("need K >= 1 and L >= 2")
    a = _parity_vector(K, L, parity)
    tau = 2.0 ** -a  # tau[l-2] for slot l
    total = 0.0
    for j in range(2, L):
        run = 1.0
        for m in range(j, 1, -1):
            run *= tau[m - 2]
            total += float(K) ** (j - m) * (K - 1) * run
    return K * (L - 1) + K * total


def expected_survivors(K, L, tau):
    """E[chi_L] = sum_{m=2}^{L} K^{L-m} (K-1) prod_{l=m}^{L} tau_l for tau = (tau_2..tau_L)."""
    if K < 1 or L < 2:
        raise ConfigError("need K >= 1 and L >= 2")
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (L - 1,):
        raise ConfigError(f"need L-1={L - 1} values of tau, got {tau.shape}")
    total = 0.0
    run = 1.0
    for m in range(L, 1, -1):
        run *= tau[m - 2]
        total += float(K) ** (L - m) * (K - 1) * run
    return total
