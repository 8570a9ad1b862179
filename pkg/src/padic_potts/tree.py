"""The rooted semi-infinite Cayley tree in coordinate form.

Vertices are plain tuples of symbols: ``()`` is the root and ``(i1, ..., in)``
is the vertex reached by choosing child ``i1``, then ``i2``, and so on. The tree
object only fixes the order ``k``, a materialization depth and the root degree
convention; everything else is computed from the words.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from itertools import product

Vertex = tuple

ROOT: Vertex = ()

K_SUCCESSORS = "k"
K_PLUS_ONE_SUCCESSORS = "k+1"


def level(x: Vertex) -> int:
    return len(x)


def compose(x: Vertex, y: Vertex) -> Vertex:
    """The semigroup product: concatenation of coordinate words, root as unit."""
    return tuple(x) + tuple(y)


def translate(g: Vertex, x: Vertex) -> Vertex:
    return compose(g, x)


def translate_edge(g: Vertex, edge: tuple[Vertex, Vertex]) -> tuple[Vertex, Vertex]:
    return translate(g, edge[0]), translate(g, edge[1])


def predecessor(x: Vertex) -> Vertex:
    if not x:
        raise ValueError("the root has no predecessor")
    return x[:-1]


def distance(x: Vertex, y: Vertex) -> int:
    common = 0
    for a, b in zip(x, y):
        if a != b:
            break
        common += 1
    return len(x) + len(y) - 2 * common


def g_class(x: Vertex, m: int) -> int:
    """Residue of the level modulo ``m``; class 0 is membership in G_m."""
    if m < 2:
        raise ValueError("m must be >= 2")
    return len(x) % m


def format_vertex(x: Vertex) -> str:
    return "(" + ",".join(str(i) for i in x) + ")"


_VERTEX_RE = re.compile(r"^\s*\(\s*((?:\d+\s*,\s*)*\d+)?\s*\)\s*$")


def parse_vertex(text: str) -> Vertex:
    m = _VERTEX_RE.match(text)
    if not m:
        raise ValueError(f"malformed vertex {text!r}")
    body = m.group(1)
    if not body:
        return ROOT
    return tuple(int(s) for s in body.split(","))


@dataclass(frozen=True)
class CayleyTree:
    """Γ^k materialized to ``depth`` levels.

    ``root_mode="k"`` gives the root k successors like every other vertex;
    ``"k+1"`` gives it k+1, with first coordinate ranging over 1..k+1.
    """

    order: int
    depth: int
    root_mode: str = K_SUCCESSORS

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order k must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.root_mode not in (K_SUCCESSORS, K_PLUS_ONE_SUCCESSORS):
            raise ValueError(f"unknown root mode {self.root_mode!r}")

    @property
    def root_degree(self) -> int:
        return self.order + (self.root_mode == K_PLUS_ONE_SUCCESSORS)

    def contains(self, x: Vertex) -> bool:
        if len(x) > self.depth:
            return False
        if not x:
            return True
        return 1 <= x[0] <= self.root_degree and all(1 <= i <= self.order for i in x[1:])

    def successors(self, x: Vertex) -> list[Vertex]:
        if len(x) >= self.depth:
            raise ValueError(f"{format_vertex(x)} lies on the materialized boundary")
        width = self.root_degree if not x else self.order
        return [x + (i,) for i in range(1, width + 1)]

    def level(self, n: int) -> list[Vertex]:
        """W_n in lexicographic order."""
        self._check_depth(n)
        if n == 0:
            return [ROOT]
        heads = range(1, self.root_degree + 1)
        tails = [range(1, self.order + 1)] * (n - 1)
        return [tuple(w) for w in product(heads, *tails)]

    def volume(self, n: int) -> list[Vertex]:
        """V_n (root included), ordered by level then lexicographically."""
        return [x for m in range(n + 1) for x in self.level(m)]

    def edges(self, n: int) -> list[tuple[Vertex, Vertex]]:
        """L_n as (parent, child) pairs, ordered by child."""
        return [(x[:-1], x) for m in range(1, n + 1) for x in self.level(m)]

    def level_size(self, n: int) -> int:
        if n == 0:
            return 1
        return self.root_degree * self.order ** (n - 1)

    def volume_size(self, n: int) -> int:
        return sum(self.level_size(m) for m in range(n + 1))

    @cached_property
    def vertices(self) -> list[Vertex]:
        return self.volume(self.depth)

    def _check_depth(self, n: int) -> None:
        if not 0 <= n <= self.depth:
            raise ValueError(f"level {n} outside materialized depth {self.depth}")
