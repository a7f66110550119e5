"""Affine maps x -> m x + q of the real line and their semigroup."""
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, PreconditionError, SlopeOne

DEFAULT_BUDGET = 2 ** 22
SLOPE_ONE_TOL = 1e-9


@dataclass(frozen=True)
class AffineMap:
    m: float
    q: float = 0.0
    relaxed: bool = False  # allows q < 0, only produced by inverse()

    def __post_init__(self):
        if not self.m > 0:
            raise PreconditionError(f"slope must be positive, got {self.m}")
        if self.q < 0 and not self.relaxed:
            raise PreconditionError(f"shift must be nonnegative, got {self.q}")

    def __call__(self, x):
        return self.m * x + self.q

    def __matmul__(self, other):
        return compose(self, other)

    @property
    def contractive(self):
        return self.m < 1


IDENTITY = AffineMap(1.0, 0.0)


def compose(g1, g2):
    """g1 o g2 = (m1 m2, q1 + m1 q2)."""
    relaxed = g1.relaxed or g2.relaxed
    return AffineMap(g1.m * g2.m, g1.q + g1.m * g2.q, relaxed=relaxed)


def inverse(g):
    return AffineMap(1.0 / g.m, -g.q / g.m, relaxed=True)


def fixed_point(g):
    if abs(g.m - 1.0) < SLOPE_ONE_TOL:
        raise SlopeOne(f"slope {g.m} is too close to 1 for a unique fixed point")
    return g.q / (1.0 - g.m)


def iterate(g, n, x):
    """g^n(x), using m^n (x - x0) + x0 when m != 1."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if g.m == 1.0:
        return x + n * g.q
    x0 = g.q / (1.0 - g.m)
    return g.m ** n * (x - x0) + x0


@dataclass(frozen=True)
class SemigroupEnumeration:
    generators: tuple
    depth: int
    m: np.ndarray       # slopes of all elements, lexicographic word order
    q: np.ndarray
    words: np.ndarray   # (n_elements, depth) generator indices, -1 padded
    lengths: np.ndarray

    def __len__(self):
        return len(self.m)

    @property
    def elements(self):
        for i in range(len(self.m)):
            yield AffineMap(self.m[i], self.q[i]), tuple(self.words[i, :self.lengths[i]])

    def element(self, i):
        return AffineMap(self.m[i], self.q[i])


def count_words(n_gen, depth):
    return sum(n_gen ** k for k in range(1, depth + 1))


def enumerate_semigroup(generators, depth, budget=DEFAULT_BUDGET):
    """All products g_{i1} ... g_{ik}, 1 <= k <= depth, words in lexicographic order.

    Duplicates are kept. Elements are built level by level with numpy, the
    word (i1, .., ik) maps to g_{i1} o (g_{i2} o ... ) = g_{i1} o w'.
    """
    gens = tuple(generators)
    if not gens:
        raise PreconditionError("need at least one generator")
    if depth < 1:
        raise PreconditionError("depth must be >= 1")
    total = count_words(len(gens), depth)
    if total > budget:
        raise BudgetExceeded(f"{total} elements exceed the budget {budget}")
    gm = np.array([g.m for g in gens])
    gq = np.array([g.q for g in gens])
    k = len(gens)

    # level L holds words of length L in lexicographic order; word = first letter + suffix
    levels = [(gm.copy(), gq.copy(), np.arange(k)[:, None])]
    for _ in range(1, depth):
        pm, pq, pw = levels[-1]
        m = (gm[:, None] * pm[None, :]).ravel()
        q = (gq[:, None] + gm[:, None] * pq[None, :]).ravel()
        first = np.repeat(np.arange(k), len(pm))[:, None]
        w = np.hstack([first, np.tile(pw, (k, 1))])
        levels.append((m, q, w))

    # merge levels into global lexicographic order (prefixes before extensions)
    words = np.full((total, depth), -1, dtype=np.int64)
    lengths = np.empty(total, dtype=np.int64)
    ms = np.empty(total)
    qs = np.empty(total)
    pos = 0
    for L, (m, q, w) in enumerate(levels, start=1):
        n = len(m)
        ms[pos:pos + n], qs[pos:pos + n] = m, q
        words[pos:pos + n, :L] = w
        lengths[pos:pos + n] = L
        pos += n
    key = np.where(words < 0, -1, words)
    order = np.lexsort(key.T[::-1])
    return SemigroupEnumeration(gens, depth, ms[order], qs[order], words[order], lengths[order])

