"""2-adic edge codes, the Monna map, ultrametric geometry and dendrograms.

Everything here is exact: codes are digit tuples, Monna values are
:class:`fractions.Fraction` instances whose denominators are powers of two.
Floating point only appears downstream, in :mod:`dhtkit.emergence`.

A dendrogram is a strictly binary rooted tree.  Every leaf carries an
integer ``key`` (the event it stands for) and its :class:`EdgeCode` is the
root-to-leaf path, digit ``a_0`` being the choice taken at the root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Sequence, Union

P = 2


class PadicError(ValueError):
    """Base class for invalid input to the p-adic layer."""


class NotRepresentable(PadicError):
    pass


class InvalidAttachPoint(PadicError):
    pass


class TooFewLeaves(PadicError):
    pass


class InvalidDendrogram(PadicError):
    pass


# ---------------------------------------------------------------------------
# Edge codes and dyadic values
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class EdgeCode:
    """Finite binary digit string ``a_0 a_1 ... a_k``, least significant first.

    Trailing zeros matter: ``EdgeCode((1,))`` and ``EdgeCode((1, 0))`` are
    different codes even though they sum to the same integer.
    """

    digits: tuple[int, ...]

    def __post_init__(self) -> None:
        digits = tuple(self.digits)
        if not digits:
            raise PadicError("an edge code needs at least one digit")
        if any(a not in (0, 1) for a in digits):
            raise PadicError(f"edge code digits must be 0 or 1, got {digits!r}")
        object.__setattr__(self, "digits", digits)

    @classmethod
    def parse(cls, text: str) -> "EdgeCode":
        """Build a code from a path string such as ``"011"`` (root digit first)."""
        if not text or any(ch not in "01" for ch in text):
            raise PadicError(f"not a binary path string: {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @property
    def depth(self) -> int:
        return len(self.digits)

    @property
    def value(self) -> int:
        """The natural number ``sum a_j 2^j``."""
        return sum(a << j for j, a in enumerate(self.digits))

    def shared_prefix(self, other: "EdgeCode") -> int:
        m = 0
        for a, b in zip(self.digits, other.digits):
            if a != b:
                break
            m += 1
        return m

    def __str__(self) -> str:
        return "".join(str(a) for a in self.digits)


def is_dyadic(x: Fraction) -> bool:
    d = x.denominator
    return d & (d - 1) == 0


def dyadic_exponent(x: Fraction) -> int:
    """Smallest ``e`` with ``x * 2**e`` integral.

    Raises:
        NotRepresentable: if ``x`` has a denominator that is not a power of 2.
    """
    x = Fraction(x)
    if not is_dyadic(x):
        raise NotRepresentable(f"{x} is not a dyadic rational")
    return x.denominator.bit_length() - 1


def monna_map(code: EdgeCode) -> Fraction:
    """Map ``sum a_j 2^j`` to ``sum a_j 2^(-j-1)`` in ``[0, 1)``, exactly."""
    k = code.depth
    # reversed digits read as a k-bit integer, over 2^k
    num = 0
    for a in code.digits:
        num = (num << 1) | a
    return Fraction(num, 1 << k)


def inverse_monna(value: Fraction, depth: int) -> EdgeCode:
    """Return the ``depth``-digit code whose Monna value is ``value``.

    Raises:
        NotRepresentable: ``value`` is outside ``[0, 1)`` or needs more than
            ``depth`` binary fraction digits.
    """
    value = Fraction(value)
    if depth < 1:
        raise NotRepresentable("depth must be at least 1")
    if not 0 <= value < 1:
        raise NotRepresentable(f"{value} lies outside [0, 1)")
    scaled = value * (1 << depth)
    if scaled.denominator != 1:
        raise NotRepresentable(f"{value} needs more than {depth} binary digits")
    num = scaled.numerator
    return EdgeCode(tuple((num >> (depth - 1 - j)) & 1 for j in range(depth)))


# ---------------------------------------------------------------------------
# Ultrametric
# ---------------------------------------------------------------------------


def valuation(n: int, p: int = P) -> int | None:
    """p-adic valuation of an integer; ``None`` stands for infinity (n == 0)."""
    if n == 0:
        return None
    n = abs(n)
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def padic_norm(n: int, p: int = P) -> Fraction:
    v = valuation(n, p)
    return Fraction(0) if v is None else Fraction(1, p**v)


def padic_distance(a: EdgeCode, b: EdgeCode) -> Fraction:
    """``|edge_a - edge_b|_2`` of the two codes read as integers."""
    return padic_norm(a.value - b.value)


def ball_membership(
    center: EdgeCode, radius: Fraction, candidate: EdgeCode, *, strict: bool = False
) -> bool:
    """Membership in the open (``strict``) or closed 2-adic ball around ``center``."""
    radius = Fraction(radius)
    if radius <= 0:
        raise PadicError("ball radius must be positive")
    r = padic_distance(center, candidate)
    return r < radius if strict else r <= radius


# ---------------------------------------------------------------------------
# Dendrograms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    key: int


@dataclass(frozen=True)
class Node:
    zero: "Tree"
    one: "Tree"


Tree = Union[Leaf, Node]
EdgePath = tuple[int, ...]


class CanonicalForm(str):
    """Text encoding of an unordered binary tree shape.

    Leaves are written ``o``, internal nodes ``(A,B)`` with the two child
    encodings sorted, so child swaps do not change the form.
    """

    @property
    def leaf_count(self) -> int:
        return self.count("o")


def _walk(tree: Tree, path: EdgePath = ()) -> Iterator[tuple[EdgePath, Tree]]:
    stack = [(path, tree)]
    while stack:
        p, t = stack.pop()
        yield p, t
        if isinstance(t, Node):
            stack.append((p + (1,), t.one))
            stack.append((p + (0,), t.zero))


def _shape(tree: Tree) -> str:
    if isinstance(tree, Leaf):
        return "o"
    a, b = sorted((_shape(tree.zero), _shape(tree.one)))
    return f"({a},{b})"


@dataclass(frozen=True)
class Dendrogram:
    """A finite strictly binary tree whose leaves are distinct events."""

    root: Tree

    def __post_init__(self) -> None:
        if not isinstance(self.root, Node):
            raise TooFewLeaves("a dendrogram needs at least two leaves")
        keys = [t.key for _, t in _walk(self.root) if isinstance(t, Leaf)]
        if len(set(keys)) != len(keys):
            raise InvalidDendrogram("leaf keys must be distinct")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_codes(
        cls, codes: Sequence[EdgeCode | str], keys: Sequence[int] | None = None
    ) -> "Dendrogram":
        """Build the tree whose leaf paths are exactly ``codes``.

        ``keys[i]`` (default ``i``) becomes the key of the leaf at ``codes[i]``.
        The codes must form a complete prefix-free binary set.
        """
        parsed = [c if isinstance(c, EdgeCode) else EdgeCode.parse(c) for c in codes]
        keys = list(range(len(parsed))) if keys is None else list(keys)
        if len(keys) != len(parsed):
            raise InvalidDendrogram("keys and codes differ in length")
        if len(parsed) < 2:
            raise TooFewLeaves("a dendrogram needs at least two leaves")

        def build(items: list[tuple[tuple[int, ...], int]], level: int) -> Tree:
            if len(items) == 1 and len(items[0][0]) == level:
                return Leaf(items[0][1])
            if any(len(d) == level for d, _ in items):
                raise InvalidDendrogram("leaf codes are not prefix-free")
            zero = [it for it in items if it[0][level] == 0]
            one = [it for it in items if it[0][level] == 1]
            if not zero or not one:
                raise InvalidDendrogram("internal node with a single child")
            return Node(build(zero, level + 1), build(one, level + 1))

        return cls(build([(c.digits, k) for c, k in zip(parsed, keys)], 0))

    @classmethod
    def from_nested(cls, nested) -> "Dendrogram":
        """Build from nested 2-tuples of integer keys, e.g. ``((0, 1), 2)``."""

        def build(x) -> Tree:
            if isinstance(x, int):
                return Leaf(x)
            if len(x) != 2:
                raise InvalidDendrogram(f"node must have two children: {x!r}")
            return Node(build(x[0]), build(x[1]))

        return cls(build(nested))

    @classmethod
    def from_shape(cls, form: str) -> "Dendrogram":
        """A representative dendrogram for a canonical form (keys in reading order)."""
        counter = iter(range(form.count("o")))
        pos = 0

        def parse() -> Tree:
            nonlocal pos
            if form[pos] == "o":
                pos += 1
                return Leaf(next(counter))
            if form[pos] != "(":
                raise InvalidDendrogram(f"bad canonical form {form!r}")
            pos += 1
            a = parse()
            if form[pos] != ",":
                raise InvalidDendrogram(f"bad canonical form {form!r}")
            pos += 1
            b = parse()
            if form[pos] != ")":
                raise InvalidDendrogram(f"bad canonical form {form!r}")
            pos += 1
            return Node(a, b)

        tree = parse()
        if pos != len(form):
            raise InvalidDendrogram(f"trailing text in canonical form {form!r}")
        return cls(tree)

    @classmethod
    def from_text(cls, text: str) -> "Dendrogram":
        """Parse the parenthesised form, e.g. ``((00,01),1)``.

        Leaf tokens must equal their root-to-leaf paths; keys are assigned in
        reading order.
        """
        text = text.strip()
        pos = 0
        counter = iter(range(len(text)))

        def parse(path: EdgePath) -> Tree:
            nonlocal pos
            if pos >= len(text):
                raise InvalidDendrogram("unexpected end of dendrogram text")
            if text[pos] == "(":
                pos += 1
                a = parse(path + (0,))
                if pos >= len(text) or text[pos] != ",":
                    raise InvalidDendrogram(f"expected ',' at offset {pos}")
                pos += 1
                b = parse(path + (1,))
                if pos >= len(text) or text[pos] != ")":
                    raise InvalidDendrogram(f"expected ')' at offset {pos}")
                pos += 1
                return Node(a, b)
            start = pos
            while pos < len(text) and text[pos] in "01":
                pos += 1
            token = text[start:pos]
            expected = "".join(map(str, path))
            if token != expected:
                raise InvalidDendrogram(
                    f"leaf {token!r} at offset {start} does not match its path {expected!r}"
                )
            return Leaf(next(counter))

        tree = parse(())
        if pos != len(text):
            raise InvalidDendrogram(f"trailing text at offset {pos}")
        return cls(tree)

    @classmethod
    def from_json(cls, payload: dict | str) -> "Dendrogram":
        if isinstance(payload, str):
            payload = json.loads(payload)
        try:
            leaves = payload["leaves"]
        except (KeyError, TypeError):
            raise InvalidDendrogram("dendrogram JSON needs a 'leaves' list") from None
        return cls.from_codes(leaves, payload.get("keys"))

    # -- views -------------------------------------------------------------

    @cached_property
    def leaves(self) -> tuple[tuple[int, EdgeCode], ...]:
        """``(key, code)`` pairs in left-to-right order."""
        return tuple(
            (t.key, EdgeCode(p)) for p, t in _walk(self.root) if isinstance(t, Leaf)
        )

    @cached_property
    def codes(self) -> dict[int, EdgeCode]:
        return dict(self.leaves)

    @property
    def keys(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.leaves)

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    @property
    def max_depth(self) -> int:
        return max(c.depth for _, c in self.leaves)

    def edges(self) -> list[EdgePath]:
        """Every edge, named by the path of its lower endpoint; ``()`` is the root edge."""
        return [p for p, _ in _walk(self.root)]

    def subtree(self, path: EdgePath) -> Tree:
        t = self.root
        for a in path:
            if not isinstance(t, Node):
                raise InvalidAttachPoint(f"no edge at path {path!r}")
            t = t.one if a else t.zero
        return t

    def monna_values(self) -> dict[int, Fraction]:
        return {k: monna_map(c) for k, c in self.leaves}

    def to_text(self) -> str:
        def emit(t: Tree, path: str) -> str:
            if isinstance(t, Leaf):
                return path
            return f"({emit(t.zero, path + '0')},{emit(t.one, path + '1')})"

        return emit(self.root, "")

    def to_json(self) -> dict:
        ordered = sorted(self.leaves)
        return {"leaves": [str(c) for _, c in ordered], "keys": [k for k, _ in ordered]}

    def __str__(self) -> str:
        return self.to_text()


def canonicalize(d: Dendrogram) -> CanonicalForm:
    return CanonicalForm(_shape(d.root))


def _replace(tree: Tree, path: EdgePath, fn) -> Tree:
    if not path:
        return fn(tree)
    if not isinstance(tree, Node):
        raise InvalidAttachPoint(f"path runs past a leaf: {path!r}")
    if path[0] == 0:
        return Node(_replace(tree.zero, path[1:], fn), tree.one)
    if path[0] == 1:
        return Node(tree.zero, _replace(tree.one, path[1:], fn))
    raise InvalidAttachPoint(f"bad digit in edge path {path!r}")


def _as_path(edge: EdgePath | EdgeCode | str) -> EdgePath:
    if isinstance(edge, EdgeCode):
        return edge.digits
    if isinstance(edge, str):
        return tuple(int(ch) for ch in edge) if edge else ()
    return tuple(edge)


def insert_leaf(
    d: Dendrogram,
    attach_edge: EdgePath | EdgeCode | str,
    new_label: int = 1,
    key: int | None = None,
) -> Dendrogram:
    """Split ``attach_edge`` with a new internal node carrying a new leaf.

    The new leaf sits on the ``new_label`` side of the new node and the old
    subtree on the other side, so every old leaf below the edge gains one
    digit at that position.  ``key`` defaults to one more than the largest key.
    """
    if new_label not in (0, 1):
        raise InvalidAttachPoint("new_label must be 0 or 1")
    path = _as_path(attach_edge)
    d.subtree(path)  # validates the edge
    if key is None:
        key = max(d.keys) + 1
    elif key in d.codes:
        raise InvalidDendrogram(f"key {key} already present")
    new = Leaf(key)

    def split(t: Tree) -> Tree:
        return Node(t, new) if new_label == 1 else Node(new, t)

    return Dendrogram(_replace(d.root, path, split))


def restrict(d: Dendrogram, keep: Iterable[int]) -> Dendrogram:
    """Drop every leaf not in ``keep`` and contract the unary nodes left behind."""
    keep = set(keep)
    unknown = keep - set(d.keys)
    if unknown:
        raise InvalidDendrogram(f"unknown leaf keys {sorted(unknown)}")
    if len(keep) < 2:
        raise TooFewLeaves("restriction must keep at least two leaves")

    def prune(t: Tree) -> Tree | None:
        if isinstance(t, Leaf):
            return t if t.key in keep else None
        a, b = prune(t.zero), prune(t.one)
        if a is None:
            return b
        if b is None:
            return a
        if a is t.zero and b is t.one:
            return t
        return Node(a, b)

    return Dendrogram(prune(d.root))


def two_leaf() -> Dendrogram:
    return Dendrogram(Node(Leaf(0), Leaf(1)))


def all_codes(max_depth: int) -> list[EdgeCode]:
    """Every edge code of depth 1..max_depth, shallow first."""
    out = []
    for k in range(1, max_depth + 1):
        for n in range(1 << k):
            out.append(EdgeCode(tuple((n >> j) & 1 for j in range(k))))
    return out
