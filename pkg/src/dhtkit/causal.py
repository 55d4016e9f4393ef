"""Timelike/spacelike relations between dendrograms and their future cones.

An observer holding dendrogram ``D1`` reaches ``D2`` by collecting more
events, each one a single leaf insertion.  Insertion and restriction are
inverse to each other, so ``D1`` precedes ``D2`` exactly when some subset of
``D2``'s leaves restricts to ``D1``'s shape.  That test is what
:func:`is_timelike` runs; the forward-search equivalence is checked in the
test suite.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from typing import Callable, Sequence

from .padic import CanonicalForm, Dendrogram, canonicalize, insert_leaf, padic_distance, restrict

IDENTICAL = "identical"
TIMELIKE = "timelike"
SPACELIKE = "spacelike"


@dataclass(frozen=True)
class CausalVerdict:
    relation: str
    direction: str = "n/a"
    witness: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if (self.witness is not None) != (self.relation == TIMELIKE):
            raise ValueError("a witness is carried by timelike verdicts only")

    def to_json(self) -> dict:
        out = {"relation": self.relation, "direction": self.direction}
        if self.witness is not None:
            out["witness"] = list(self.witness)
        return out


@dataclass(frozen=True)
class ThetaDescriptor:
    leaf_count: int
    max_depth: int
    mean_distance: float
    depth_entropy: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.leaf_count, self.max_depth, self.mean_distance, self.depth_entropy)

    def to_json(self) -> dict:
        return {
            "leaf_count": self.leaf_count,
            "max_depth": self.max_depth,
            "mean_distance": self.mean_distance,
            "depth_entropy": self.depth_entropy,
        }


def theta_descriptor(d: Dendrogram) -> ThetaDescriptor:
    """Default 4-vector: leaf count, max depth, mean leaf 2-adic distance, depth entropy (bits).

    Distances between leaves only depend on their shared root path, so the
    descriptor is a function of the unordered shape.  It is not injective.
    """
    codes = [c for _, c in d.leaves]
    pairs = list(combinations(codes, 2))
    mean = sum((padic_distance(a, b) for a, b in pairs), Fraction(0)) / len(pairs)
    counts = Counter(c.depth for c in codes)
    n = len(codes)
    # fixed summation order so equal shapes give bit-identical entropies
    entropy = -math.fsum((k / n) * math.log2(k / n) for _, k in sorted(counts.items()))
    return ThetaDescriptor(n, d.max_depth, float(mean), entropy + 0.0)


Descriptor = Callable[[Dendrogram], ThetaDescriptor]


# ---------------------------------------------------------------------------
# Shape-level restriction (memoised on canonical forms)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _shape_depth(form: str) -> int:
    return Dendrogram.from_shape(form).max_depth


@lru_cache(maxsize=None)
def _sub_shapes(form: str) -> frozenset[str]:
    """Shapes obtained from ``form`` by deleting exactly one leaf."""
    d = Dendrogram.from_shape(form)
    if d.leaf_count <= 2:
        return frozenset()
    keys = d.keys
    return frozenset(canonicalize(restrict(d, [k for k in keys if k != drop])) for drop in keys)


@lru_cache(maxsize=None)
def _restricts_to(big: str, small: str) -> bool:
    nb, ns = big.count("o"), small.count("o")
    if nb == ns:
        return big == small
    if nb < ns or _shape_depth(small) > _shape_depth(big):
        return False
    return any(_restricts_to(s, small) for s in _sub_shapes(big))


def find_witness(d_small: Dendrogram, d_big: Dendrogram) -> tuple[int, ...] | None:
    """A set of ``d_big`` leaf keys restricting to ``d_small``'s shape, or None."""
    target = canonicalize(d_small)
    if not _restricts_to(canonicalize(d_big), target):
        return None
    e1 = d_small.leaf_count
    keys = sorted(d_big.keys)
    if e1 == len(keys):
        return tuple(keys)
    for subset in combinations(keys, e1):
        if canonicalize(restrict(d_big, subset)) == target:
            return subset
    raise AssertionError("shape-level restriction disagrees with leaf-level search")


def is_timelike(d1: Dendrogram, d2: Dendrogram) -> CausalVerdict:
    """Classify the pair; if ``d1`` has more events the pair is swapped and marked backward."""
    direction = "forward"
    if d1.leaf_count > d2.leaf_count:
        d1, d2 = d2, d1
        direction = "backward"
    f1, f2 = canonicalize(d1), canonicalize(d2)
    if d1.leaf_count == d2.leaf_count:
        return CausalVerdict(IDENTICAL if f1 == f2 else SPACELIKE)
    witness = find_witness(d1, d2)
    if witness is None:
        return CausalVerdict(SPACELIKE)
    return CausalVerdict(TIMELIKE, direction, witness)


# ---------------------------------------------------------------------------
# Future cones
# ---------------------------------------------------------------------------


@dataclass
class Cone:
    """Shapes reachable from a dendrogram by leaf insertions.

    ``layers[k]`` holds the shapes at exactly ``k`` insertions, ``frontier``
    is the last complete layer and ``members`` the union of all layers.
    """

    origin: CanonicalForm
    steps: int
    layers: list[frozenset[CanonicalForm]] = field(default_factory=list)
    truncated: bool = False

    @property
    def frontier(self) -> frozenset[CanonicalForm]:
        return self.layers[-1]

    @property
    def members(self) -> frozenset[CanonicalForm]:
        return frozenset().union(*self.layers)

    def __contains__(self, form: str) -> bool:
        return form in self.members

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "steps": self.steps,
            "truncated": self.truncated,
            "frontier": sorted(self.frontier),
            "members": sorted(self.members),
            "layers": [sorted(layer) for layer in self.layers],
        }

    def to_dot(self) -> str:
        ids = {f: f"s{i}" for i, f in enumerate(sorted(self.members))}
        lines = ["digraph cone {"]
        for f, node in ids.items():
            lines.append(f'  {node} [label="{f}"];')
        for layer, nxt in zip(self.layers, self.layers[1:]):
            for f in sorted(layer):
                for g in sorted(_children(f) & nxt):
                    lines.append(f"  {ids[f]} -> {ids[g]};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def _children(form: str) -> frozenset[CanonicalForm]:
    d = Dendrogram.from_shape(form)
    return frozenset(canonicalize(insert_leaf(d, e)) for e in d.edges())


def future_cone(d: Dendrogram, steps: int, cap: int | None = None) -> Cone:
    """Breadth-first insertion layers up to ``steps``; stops early once ``cap`` shapes are seen."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    origin = canonicalize(d)
    cone = Cone(origin, steps, [frozenset([origin])])
    seen = 1
    for _ in range(steps):
        nxt: set[CanonicalForm] = set()
        for f in sorted(cone.layers[-1]):
            nxt |= _children(f)
        if cap is not None and seen + len(nxt) > cap:
            cone.truncated = True
            keep = sorted(nxt)[: max(cap - seen, 0)]
            if keep:
                cone.layers.append(frozenset(keep))
            break
        cone.layers.append(frozenset(nxt))
        seen += len(nxt)
    return cone


# ---------------------------------------------------------------------------
# Ensembles of dendrograms
# ---------------------------------------------------------------------------


@dataclass
class EnsembleClassification:
    matrix: list[list[CausalVerdict]]
    forms: list[CanonicalForm]
    descriptors: list[ThetaDescriptor]

    def fractions(self) -> dict[str, float]:
        n = len(self.forms)
        counts = Counter(self.matrix[i][j].relation for i in range(n) for j in range(i + 1, n))
        total = n * (n - 1) // 2
        return {rel: counts.get(rel, 0) / total for rel in (IDENTICAL, TIMELIKE, SPACELIKE)}

    def cone_counts(self) -> list[dict[str, int]]:
        """Per member: how many others lie in its future and in its past."""
        out = []
        n = len(self.forms)
        for i in range(n):
            fut = past = 0
            for j in range(n):
                v = self.matrix[i][j]
                if i != j and v.relation == TIMELIKE:
                    fut += v.direction == "forward"
                    past += v.direction == "backward"
            out.append({"future": fut, "past": past})
        return out

    def to_json(self) -> dict:
        return {
            "canonical_forms": list(self.forms),
            "descriptors": [t.to_json() for t in self.descriptors],
            "matrix": [[v.to_json() for v in row] for row in self.matrix],
            "fractions": self.fractions(),
            "cones": self.cone_counts(),
        }


def classify_ensemble(
    dendrograms: Sequence[Dendrogram], descriptor: Descriptor = theta_descriptor
) -> EnsembleClassification:
    if len(dendrograms) < 2:
        raise ValueError("classification needs at least two dendrograms")
    matrix = [[is_timelike(a, b) for b in dendrograms] for a in dendrograms]
    return EnsembleClassification(
        matrix, [canonicalize(d) for d in dendrograms], [descriptor(d) for d in dendrograms]
    )


@dataclass(frozen=True)
class Transition:
    """One growth step ``before -> after`` checked two ways.

    ``timelike`` is the shape-level verdict.  ``consistent`` additionally asks
    that deleting the newly added event from ``after`` gives back ``before``,
    i.e. that the re-clustered tree equals a single-leaf insertion.
    """

    before: CanonicalForm
    after: CanonicalForm
    timelike: bool
    consistent: bool

    def to_json(self) -> dict:
        return {
            "before": self.before,
            "after": self.after,
            "timelike": self.timelike,
            "consistent": self.consistent,
        }


def growth_transitions(sequence: Sequence[Dendrogram]) -> list[Transition]:
    """Compare consecutive trees of a growth sequence where tree ``k+1`` adds one key."""
    out = []
    for before, after in zip(sequence, sequence[1:]):
        if not set(before.keys) < set(after.keys) or after.leaf_count != before.leaf_count + 1:
            raise ValueError("each step must add exactly one event")
        verdict = is_timelike(before, after)
        same = canonicalize(restrict(after, before.keys)) == canonicalize(before)
        out.append(Transition(canonicalize(before), canonicalize(after), verdict.relation == TIMELIKE, same))
    return out
