"""Observers measuring each other, and the branching ledger that results.

Every observer carries a fixed objective code (its ontic property) and a
dendrogram of the events it has collected.  Measuring another observer means
incorporating that observer's Monna value as a new leaf.  Observers that
share a dendrogram shape form one theta class.

A measurement round splits every ledger branch sitting in the measured theta
region into branches weighted ``a_i^2 * b_j``: ``a_i^2`` is the empirical
mass of recorded outcome ``i`` and ``b_j`` the fraction of members landing in
the new class ``theta_j``.  Weights are exact fractions, so normalisation is
exact; complex amplitudes are ``sqrt(weight) * exp(i phase)``.
"""

from __future__ import annotations

import cmath
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .causal import ThetaDescriptor, theta_descriptor
from .emergence import (
    EVENT_DOMAIN,
    Distribution,
    EmergenceConfig,
    GridField,
    GridMismatch,
    density_field,
    subjective_state,
)
from .padic import CanonicalForm, Dendrogram, EdgeCode, canonicalize, insert_leaf, monna_map, two_leaf

IDLE = -1  # outcome index for branches outside the measured theta region


class EnsembleError(ValueError):
    pass


class TooFewObservers(EnsembleError):
    pass


class ValueOutOfRange(EnsembleError):
    pass


class EmptyThetaClass(EnsembleError):
    pass


class EmptyTargets(EnsembleError):
    pass


class EmptyProjection(EnsembleError):
    pass


# ---------------------------------------------------------------------------
# Observers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Observer:
    """One observer.  Leaf ``k`` of the dendrogram stands for ``event_values[k]``."""

    id: int
    event_values: tuple[Fraction, ...]
    dendrogram: Dendrogram
    objective_code: EdgeCode
    measurement_log: tuple[tuple[int, Fraction], ...] = ()

    def __post_init__(self) -> None:
        if sorted(self.dendrogram.keys) != list(range(len(self.event_values))):
            raise EnsembleError(
                f"observer {self.id}: dendrogram leaves must be keyed 0..{len(self.event_values) - 1}"
            )
        if len(set(self.event_values)) != len(self.event_values):
            raise EnsembleError(f"observer {self.id}: duplicate event values")

    @property
    def form(self) -> CanonicalForm:
        return canonicalize(self.dendrogram)


def objective_value(o: Observer) -> Fraction:
    return monna_map(o.objective_code)


def nearest_leaf(o: Observer, value: Fraction) -> int:
    """Key of the leaf whose Monna value is closest to ``value``; the lower value wins ties."""
    vals = o.dendrogram.monna_values()
    return min(vals, key=lambda k: (abs(vals[k] - value), vals[k]))


AttachPolicy = Callable[[Observer, Fraction], int]


def incorporate(o: Observer, value: Fraction, attach: AttachPolicy = nearest_leaf) -> Observer:
    """Add ``value`` as a new event; a value already collected leaves ``o`` untouched.

    The new leaf splits the edge above the leaf chosen by ``attach`` and takes
    digit 1 there, so its recorded Monna value depends on where it attached.
    """
    value = Fraction(value)
    if not 0 <= value <= 1:
        raise ValueOutOfRange(f"{value} is outside [0, 1]")
    if value in o.event_values:
        return o
    k = attach(o, value)
    code = o.dendrogram.codes[k]
    d = insert_leaf(o.dendrogram, code, new_label=1, key=len(o.event_values))
    return replace(o, event_values=o.event_values + (value,), dendrogram=d)


def recorded_value(o: Observer, value: Fraction) -> Fraction:
    """Current Monna value of the leaf that holds the collected event ``value``."""
    k = o.event_values.index(Fraction(value))
    return monna_map(o.dendrogram.codes[k])


def make_observer(
    id: int, events: Sequence[Fraction], objective_code: EdgeCode | str, dendrogram: Dendrogram | str | None = None
) -> Observer:
    """Convenience constructor; ``dendrogram`` defaults to the 2-leaf tree (needs two events)."""
    if isinstance(objective_code, str):
        objective_code = EdgeCode.parse(objective_code)
    if dendrogram is None:
        dendrogram = two_leaf()
    elif isinstance(dendrogram, str):
        dendrogram = Dendrogram.from_text(dendrogram)
    return Observer(id, tuple(Fraction(e) for e in events), dendrogram, objective_code)


def init_ensemble(n: int, seed: int, event_bits: int = 16) -> tuple[Observer, ...]:
    """``n`` observers with 2-leaf dendrograms and distinct seeded objective codes."""
    if n < 2:
        raise TooFewObservers("an ensemble needs at least two observers")
    rng = np.random.default_rng(seed)
    depth = math.ceil(math.log2(n)) + 1
    code_ints = rng.choice(1 << depth, size=n, replace=False)
    out = []
    scale = 1 << event_bits
    for i in range(n):
        a, b = sorted(int(x) for x in rng.choice(scale, size=2, replace=False))
        code = EdgeCode(tuple((int(code_ints[i]) >> j) & 1 for j in range(depth)))
        out.append(Observer(i, (Fraction(a, scale), Fraction(b, scale)), two_leaf(), code))
    return tuple(out)


def unique_world_lines(ensemble: Sequence[Observer]) -> bool:
    seen = {(o.objective_code, o.measurement_log) for o in ensemble}
    return len(seen) == len(ensemble)


# ---------------------------------------------------------------------------
# Theta classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaClass:
    canonical_form: CanonicalForm
    member_ids: frozenset[int]
    descriptor: ThetaDescriptor

    def to_json(self) -> dict:
        return {
            "canonical_form": self.canonical_form,
            "members": sorted(self.member_ids),
            "descriptor": self.descriptor.to_json(),
        }


def _by_id(ensemble: Sequence[Observer]) -> dict[int, Observer]:
    return {o.id: o for o in ensemble}


def theta_classes(ensemble: Iterable[Observer]) -> list[ThetaClass]:
    """Group observers by shape; classes ordered by their lowest member id."""
    groups: dict[str, list[Observer]] = defaultdict(list)
    for o in ensemble:
        groups[o.form].append(o)
    classes = [
        ThetaClass(CanonicalForm(f), frozenset(o.id for o in obs), theta_descriptor(obs[0].dendrogram))
        for f, obs in groups.items()
    ]
    return sorted(classes, key=lambda c: min(c.member_ids))


def _members(ensemble: Sequence[Observer], region: Sequence[ThetaClass]) -> list[Observer]:
    ids = sorted(set().union(*(c.member_ids for c in region))) if region else []
    by_id = _by_id(ensemble)
    return [by_id[i] for i in ids]


def objective_distribution(
    ensemble: Sequence[Observer], target: Observer | int, theta: ThetaClass | Sequence[ThetaClass]
) -> Distribution:
    """Values recorded when every member of ``theta`` incorporates ``target``'s objective value."""
    region = [theta] if isinstance(theta, ThetaClass) else list(theta)
    members = _members(ensemble, region)
    if not members:
        raise EmptyThetaClass("theta class has no members")
    if isinstance(target, int):
        target = _by_id(ensemble)[target]
    q = objective_value(target)
    return Distribution.empirical(recorded_value(incorporate(o, q), q) for o in members)


def theta_phase(
    ensemble: Sequence[Observer],
    theta: ThetaClass,
    depth: int,
    cfg: EmergenceConfig | None = None,
    representative: int | None = None,
) -> GridField:
    """Subjective phase of a representative member, on the ``[0, 1]`` event grid.

    The phase lives on the difference interval ``[-1, 1]``; it is computed at
    ``depth + 1`` there, whose right half is exactly the depth-``depth`` grid
    on ``[0, 1]``.
    """
    cfg = cfg or EmergenceConfig()
    rep = min(theta.member_ids) if representative is None else representative
    if rep not in theta.member_ids:
        raise EnsembleError(f"observer {rep} is not a member of the theta class")
    o = _by_id(ensemble)[rep]
    vals = o.dendrogram.monna_values()
    S = subjective_state([vals[k] for k in sorted(vals)], cfg, depth + 1).S
    half = S.n // 2
    return GridField(EVENT_DOMAIN[0], EVENT_DOMAIN[1], depth, S.values[half:].copy())


def objective_wavefunction(rho_bk: GridField | Distribution, S_theta: GridField) -> GridField:
    """``sqrt(rho_Bk) * exp(i S(theta))`` on the event grid."""
    if isinstance(rho_bk, Distribution):
        rho_bk = density_field(rho_bk, S_theta.depth, EVENT_DOMAIN)
    if not rho_bk.same_grid(S_theta):
        raise GridMismatch(f"{rho_bk!r} vs {S_theta!r}")
    return rho_bk.with_values(np.sqrt(rho_bk.values) * np.exp(1j * S_theta.values))


# ---------------------------------------------------------------------------
# World ledger
# ---------------------------------------------------------------------------

Outcome = tuple[tuple[int, ...], int]


@dataclass(frozen=True)
class Branch:
    weight: Fraction
    record: tuple[Outcome, ...]
    theta: CanonicalForm
    history: tuple[CanonicalForm, ...]
    phase: float = 0.0

    @property
    def amplitude(self) -> complex:
        return math.sqrt(self.weight) * cmath.exp(1j * self.phase)

    def to_json(self) -> dict:
        amp = self.amplitude
        return {
            "amplitude": [amp.real, amp.imag],
            "weight": str(self.weight),
            "record": [{"targets": list(t), "eigen": i} for t, i in self.record],
            "theta": self.theta,
            "history": list(self.history),
        }


def _sort_key(b: Branch):
    return (b.record, b.history)


@dataclass(frozen=True)
class WorldLedger:
    branches: tuple[Branch, ...]
    generation: int = 0

    @classmethod
    def fresh(cls, theta: CanonicalForm | str) -> "WorldLedger":
        f = CanonicalForm(theta)
        return cls((Branch(Fraction(1), (), f, (f,)),), 0)

    def total_weight(self) -> Fraction:
        return sum((b.weight for b in self.branches), Fraction(0))

    def norm_squared(self) -> float:
        """Sum of ``|amplitude|^2`` in floating point."""
        return math.fsum(abs(b.amplitude) ** 2 for b in self.branches)

    def to_json(self) -> dict:
        return {
            "generation": self.generation,
            "branches": [b.to_json() for b in sorted(self.branches, key=_sort_key)],
        }


@dataclass
class Round:
    """What one measurement round did."""

    region: list[CanonicalForm]
    targets: tuple[int, ...]
    eigenvalues: tuple[Fraction, ...]
    a_squared: tuple[Fraction, ...]
    partition: list[tuple[ThetaClass, Fraction]]
    ensemble: tuple[Observer, ...]
    ledger: WorldLedger

    def to_json(self) -> dict:
        return {
            "region": list(self.region),
            "targets": list(self.targets),
            "eigenvalues": [str(x) for x in self.eigenvalues],
            "a_squared": [str(x) for x in self.a_squared],
            "partition": [{**c.to_json(), "b": str(b)} for c, b in self.partition],
            "classes": [c.to_json() for c in theta_classes(self.ensemble)],
            "branches": len(self.ledger.branches),
        }


def measure(
    ensemble: Sequence[Observer],
    theta: ThetaClass | Sequence[ThetaClass],
    targets: Iterable[int],
    ledger: WorldLedger,
    attach: AttachPolicy = nearest_leaf,
) -> Round:
    """All members of the theta region measure every target (ascending id order)."""
    region = [theta] if isinstance(theta, ThetaClass) else list(theta)
    members = _members(ensemble, region)
    if not members:
        raise EmptyThetaClass("no observers in the selected theta region")
    targets = tuple(sorted(set(targets)))
    if not targets:
        raise EmptyTargets("a measurement needs at least one target")
    by_id = _by_id(ensemble)
    missing = [t for t in targets if t not in by_id]
    if missing:
        raise EnsembleError(f"unknown target observers {missing}")
    values = [(t, objective_value(by_id[t])) for t in targets]

    outcomes: list[Fraction] = []
    updated: dict[int, Observer] = {}
    for o in members:
        cur = o
        for t, q in values:
            nxt = incorporate(cur, q, attach)
            rec = recorded_value(nxt, q)
            if nxt is not cur:
                nxt = replace(nxt, measurement_log=nxt.measurement_log + ((t, rec),))
            outcomes.append(rec)
            cur = nxt
        updated[o.id] = cur

    combined = Distribution.empirical(outcomes)
    new_ensemble = tuple(updated.get(o.id, o) for o in ensemble)
    classes = theta_classes(updated.values())
    n = len(members)
    partition = [(c, Fraction(len(c.member_ids), n)) for c in classes]

    region_forms = {c.canonical_form for c in region}
    branches = []
    for br in ledger.branches:
        if br.theta not in region_forms:
            branches.append(
                replace(br, record=br.record + ((targets, IDLE),), history=br.history + (br.theta,))
            )
            continue
        for i, a2 in enumerate(combined.mass):
            for cls, b in partition:
                f = cls.canonical_form
                branches.append(
                    Branch(br.weight * a2 * b, br.record + ((targets, i),), f, br.history + (f,), br.phase)
                )
    new_ledger = WorldLedger(tuple(sorted(branches, key=_sort_key)), ledger.generation + 1)
    return Round(
        [c.canonical_form for c in region],
        targets,
        combined.support,
        combined.mass,
        partition,
        new_ensemble,
        new_ledger,
    )


Selector = Any


def select(ensemble: Sequence[Observer], selector: Selector) -> list[ThetaClass]:
    """Resolve a theta selector against the current ensemble.

    Accepted: ``"all"``; a canonical form string; a list of forms;
    ``{"class_of": id}``; a :class:`ThetaClass` or list of them; a callable
    taking the ensemble.
    """
    classes = theta_classes(ensemble)
    if callable(selector):
        return list(selector(ensemble))
    if isinstance(selector, ThetaClass):
        return [selector]
    if selector == "all":
        return classes
    if isinstance(selector, str):
        chosen = [c for c in classes if c.canonical_form == selector]
    elif isinstance(selector, dict) and "class_of" in selector:
        oid = int(selector["class_of"])
        chosen = [c for c in classes if oid in c.member_ids]
    elif isinstance(selector, dict) and "forms" in selector:
        forms = set(selector["forms"])
        chosen = [c for c in classes if c.canonical_form in forms]
    elif isinstance(selector, (list, tuple)) and all(isinstance(c, ThetaClass) for c in selector):
        chosen = list(selector)
    elif isinstance(selector, (list, tuple)):
        forms = set(selector)
        chosen = [c for c in classes if c.canonical_form in forms]
    else:
        raise EnsembleError(f"unsupported theta selector {selector!r}")
    if not chosen:
        raise EmptyThetaClass(f"selector {selector!r} matches no theta class")
    return chosen


def chained_measure(
    ensemble: Sequence[Observer],
    schedule: Iterable[tuple[Selector, Iterable[int]]],
    ledger: WorldLedger | None = None,
    attach: AttachPolicy = nearest_leaf,
) -> tuple[tuple[Observer, ...], WorldLedger, list[Round]]:
    """Apply measurement rounds in order; returns final ensemble, ledger and round reports."""
    ensemble = tuple(ensemble)
    if ledger is None:
        classes = theta_classes(ensemble)
        if len(classes) != 1:
            raise EnsembleError("a fresh ledger needs a single starting theta class; pass one")
        ledger = WorldLedger.fresh(classes[0].canonical_form)
    rounds = []
    for selector, targets in schedule:
        rnd = measure(ensemble, select(ensemble, selector), targets, ledger, attach)
        ensemble, ledger = rnd.ensemble, rnd.ledger
        rounds.append(rnd)
    return ensemble, ledger, rounds


# ---------------------------------------------------------------------------
# Reading the ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaCondition:
    theta: str


@dataclass(frozen=True)
class OutcomeCondition:
    """Eigenvalue ``index`` was recorded in round ``round`` (1-based)."""

    round: int
    index: int


Condition = ThetaCondition | OutcomeCondition


def _matches(b: Branch, cond: Condition) -> bool:
    if isinstance(cond, ThetaCondition):
        return b.theta == cond.theta
    return len(b.record) >= cond.round and b.record[cond.round - 1][1] == cond.index


def _complement(b: Branch, cond: Condition):
    if isinstance(cond, ThetaCondition):
        return (b.record, b.history[:-1])
    r = cond.round - 1
    return (b.record[:r] + b.record[r + 1 :], b.history)


@dataclass
class RelativeState:
    """Normalised amplitudes over the complementary factor of a condition."""

    amplitudes: dict[Any, complex]
    Z: float
    branches: list[Branch] = field(repr=False, default_factory=list)

    def probability(self, key) -> float:
        return abs(self.amplitudes.get(key, 0)) ** 2

    def expectation(self, observable: Callable[[Branch], float]) -> float:
        """Expectation of a diagonal observable evaluated on the matching branches."""
        return math.fsum(
            abs(self.amplitudes[k]) ** 2 * observable(b)
            for k, b in zip(self.amplitudes, self.branches)
        )


def relative_state(ledger: WorldLedger, condition: Condition) -> RelativeState:
    matching = [b for b in ledger.branches if _matches(b, condition)]
    if not matching:
        raise EmptyProjection(f"no branch satisfies {condition!r}")
    z = math.sqrt(sum((b.weight for b in matching), Fraction(0)))
    amps: dict[Any, complex] = {}
    for b in matching:
        key = _complement(b, condition)
        if key in amps:
            raise EnsembleError("complementary labels are not unique")
        amps[key] = b.amplitude / z
    return RelativeState(amps, z, matching)


def world_lines(ledger: WorldLedger) -> list[tuple[tuple[Outcome, ...], Fraction, CanonicalForm]]:
    """Every branch as ``(record, probability, theta)``, sorted by record."""
    return [(b.record, b.weight, b.theta) for b in sorted(ledger.branches, key=_sort_key)]
