"""From raw event rows to a labelled 2-adic dendrogram.

Agglomerative clustering here is written out by hand rather than taken from
scipy because the tie-breaking rule is part of the contract: when two
candidate merges are equally close, the pair whose smallest member index is
smallest wins, then the second-smallest.  That is what makes the resulting
tree shape (and so its theta class) reproducible.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .padic import Dendrogram, Leaf, Node, Tree

log = logging.getLogger(__name__)

METRICS = ("euclidean", "manhattan", "chebyshev")
LINKAGES = ("single", "complete", "average")
JITTER = 2.0**-30


class ClusterError(ValueError):
    pass


class ParseError(ClusterError):
    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class DuplicateEvent(ClusterError):
    pass


class TooFewEvents(ClusterError):
    pass


@dataclass(frozen=True)
class EventRecord:
    id: int
    features: tuple[float, ...]


@dataclass(frozen=True)
class LinkageSpec:
    metric: str = "euclidean"
    linkage: str = "average"
    tie_break: str = "min-index"

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}; choose from {LINKAGES}")
        if self.tie_break != "min-index":
            raise ValueError(f"unknown tie-break rule {self.tie_break!r}")


def load_events(
    source: TextIO | str,
    *,
    header: bool = False,
    on_duplicate: str = "reject",
) -> list[EventRecord]:
    """Read one event per CSV row.

    Args:
        source: open text stream, or the CSV text itself.
        header: skip the first row.
        on_duplicate: ``"reject"`` raises :class:`DuplicateEvent`;
            ``"jitter"`` shifts every coordinate of a repeated row by
            ``2**-30 * row_index`` until it is unique.

    Rows and columns in error messages are 1-based, counted in the file.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    if on_duplicate not in ("reject", "jitter"):
        raise ValueError(f"on_duplicate must be 'reject' or 'jitter', not {on_duplicate!r}")

    rows: list[tuple[int, list[str]]] = []
    for lineno, row in enumerate(csv.reader(source), start=1):
        if header and lineno == 1:
            continue
        if not row or all(not cell.strip() for cell in row):
            continue
        rows.append((lineno, row))
    if not rows:
        raise ParseError("no event rows found")

    width = len(rows[0][1])
    records: list[EventRecord] = []
    seen: dict[tuple[float, ...], int] = {}
    for idx, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} columns, found {len(row)}", row=lineno)
        feats = []
        for col, cell in enumerate(row, start=1):
            try:
                x = float(cell.strip())
            except ValueError:
                raise ParseError(f"not a number: {cell!r}", row=lineno, column=col) from None
            if not np.isfinite(x):
                raise ParseError(f"non-finite value {cell!r}", row=lineno, column=col)
            feats.append(x)
        vec = tuple(feats)
        if vec in seen:
            if on_duplicate == "reject":
                raise DuplicateEvent(
                    f"row {lineno} repeats the event on row {seen[vec]} "
                    "(indistinguishable events are not allowed)"
                )
            while vec in seen:
                vec = tuple(x + JITTER * idx for x in vec)
            log.info("jittered duplicate event on row %d", lineno)
        seen[vec] = lineno
        records.append(EventRecord(idx, vec))
    return records


def distance_matrix(events: Sequence[EventRecord], metric: str = "euclidean") -> np.ndarray:
    x = np.array([e.features for e in events], dtype=float)
    diff = x[:, None, :] - x[None, :, :]
    if metric == "euclidean":
        return np.sqrt((diff**2).sum(axis=-1))
    if metric == "manhattan":
        return np.abs(diff).sum(axis=-1)
    if metric == "chebyshev":
        return np.abs(diff).max(axis=-1)
    raise ValueError(f"unknown metric {metric!r}")


def _merge_key(dist: float, a: list[int], b: list[int]) -> tuple:
    lo, hi = sorted((a[0], b[0]))
    return (dist, lo, hi)


def agglomerate(events: Sequence[EventRecord], spec: LinkageSpec | None = None) -> Dendrogram:
    """Agglomerative clustering of ``events`` into a labelled dendrogram.

    Cluster distances are maintained with Lance-Williams updates.  Leaf keys
    are the event ids.
    """
    spec = spec or LinkageSpec()
    if len(events) < 2:
        raise TooFewEvents("clustering needs at least two events")
    ids = [e.id for e in events]
    if len(set(ids)) != len(ids):
        raise ClusterError("event ids must be distinct")

    dist = distance_matrix(events, spec.metric)
    # active clusters: label -> (sorted member ids, subtree); labels index dist rows
    members: dict[int, list[int]] = {i: [ids[i]] for i in range(len(events))}
    trees: dict[int, Tree] = {i: Leaf(ids[i]) for i in range(len(events))}
    d = {(i, j): float(dist[i, j]) for i in range(len(events)) for j in range(i + 1, len(events))}

    def pair(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    next_label = len(events)
    while len(members) > 1:
        i, j = min(d, key=lambda ij: _merge_key(d[ij], members[ij[0]], members[ij[1]]))
        ni, nj = len(members[i]), len(members[j])
        new = next_label
        next_label += 1
        for k in members:
            if k in (i, j):
                continue
            dik, djk = d.pop(pair(i, k)), d.pop(pair(j, k))
            if spec.linkage == "single":
                dnk = min(dik, djk)
            elif spec.linkage == "complete":
                dnk = max(dik, djk)
            else:
                dnk = (ni * dik + nj * djk) / (ni + nj)
            d[(k, new)] = dnk
        del d[pair(i, j)]
        members[new] = sorted(members.pop(i) + members.pop(j))
        trees[new] = Node(trees.pop(i), trees.pop(j))
    (tree,) = trees.values()
    return label_2adic(tree)


def _min_key(tree: Tree) -> int:
    if isinstance(tree, Leaf):
        return tree.key
    return min(_min_key(tree.zero), _min_key(tree.one))


def label_2adic(tree: Tree | Dendrogram) -> Dendrogram:
    """Order children so the one holding the smallest event id takes digit 0."""
    if isinstance(tree, Dendrogram):
        tree = tree.root

    def order(t: Tree) -> tuple[Tree, int]:
        if isinstance(t, Leaf):
            return t, t.key
        a, ka = order(t.zero)
        b, kb = order(t.one)
        return (Node(a, b), ka) if ka < kb else (Node(b, a), kb)

    return Dendrogram(order(tree)[0])


def cluster_rows(rows: Iterable[Sequence[float]], spec: LinkageSpec | None = None) -> Dendrogram:
    """Convenience wrapper: cluster in-memory feature rows."""
    events = [EventRecord(i, tuple(float(x) for x in r)) for i, r in enumerate(rows)]
    return agglomerate(events, spec)
