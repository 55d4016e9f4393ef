from __future__ import annotations

import math
import random
from fractions import Fraction as F

import numpy as np
import pytest

from dhtkit.emergence import EVENT_DOMAIN, Distribution, EmergenceConfig, GridField, GridMismatch, subjective_state
from dhtkit.ensemble import (
    IDLE,
    Branch,
    EmptyProjection,
    EmptyTargets,
    EmptyThetaClass,
    EnsembleError,
    OutcomeCondition,
    ThetaCondition,
    TooFewObservers,
    ValueOutOfRange,
    WorldLedger,
    chained_measure,
    incorporate,
    init_ensemble,
    make_observer,
    measure,
    objective_distribution,
    objective_value,
    objective_wavefunction,
    recorded_value,
    relative_state,
    select,
    theta_classes,
    theta_phase,
    unique_world_lines,
    world_lines,
)
from dhtkit.padic import CanonicalForm, canonicalize

TWO = "(o,o)"
THREE = "((o,o),o)"
BAL4 = "((o,o),(o,o))"
TARGET = F(5, 8)  # Monna value of code 101


def split_ensemble(holder_has_target: bool = True):
    """Four 3-leaf observers (0..3) and a 2-leaf target (4) with objective code 101.

    Observers 0-2 attach 5/8 next to their leaf 1 (Monna 1/2): the new leaf
    gets code 11, value 3/4, and the shape turns balanced.  Observer 3 either
    already holds 5/8 on leaf 11 (unchanged, records 3/4) or attaches it under
    leaf 10 on a tie (records 5/8).
    """
    obs = [
        make_observer(0, ["1/16", "1/8", "3/16"], "000", "((00,01),1)"),
        make_observer(1, ["1/32", "1/8", "3/32"], "001", "((00,01),1)"),
        make_observer(2, ["3/64", "5/64", "7/64"], "010", "((00,01),1)"),
    ]
    events = ["1/10", "1/2", "5/8"] if holder_has_target else ["1/10", "1/2", "7/8"]
    obs.append(make_observer(3, events, "011", "(0,(10,11))"))
    obs.append(make_observer(4, ["1/3", "2/3"], "101"))
    return tuple(obs)


# -- observers --------------------------------------------------------------


def test_init_examples():
    ens = init_ensemble(2, 0)
    assert len(ens) == 2 and len(theta_classes(ens)) == 1
    assert init_ensemble(10, 3) == init_ensemble(10, 3)
    assert init_ensemble(10, 3) != init_ensemble(10, 4)
    with pytest.raises(TooFewObservers):
        init_ensemble(1, 0)


@pytest.mark.parametrize("n", [2, 3, 10, 64, 100])
def test_init_invariants(n):
    ens = init_ensemble(n, 1)
    classes = theta_classes(ens)
    assert [c.canonical_form for c in classes] == [TWO]
    depth = math.ceil(math.log2(n)) + 1
    assert {o.objective_code.depth for o in ens} == {depth}
    assert len({o.objective_code for o in ens}) == n
    for o in ens:
        assert o.dendrogram.leaf_count == len(o.event_values) == 2
        assert o.event_values[0] != o.event_values[1]
    assert unique_world_lines(ens)


def test_objective_value():
    o = make_observer(0, ["0", "1/2"], "1")
    assert objective_value(o) == F(1, 2)
    assert objective_value(o) == objective_value(o)
    vals = {objective_value(make_observer(0, ["0", "1/2"], c)) for c in ("00", "01", "10", "11")}
    assert len(vals) == 4


def test_incorporate_examples():
    o = make_observer(0, ["1/4", "1/2"], "1")
    o3 = incorporate(o, F(3, 8))
    assert canonicalize(o3.dendrogram) == THREE
    assert o3.dendrogram.leaf_count == len(o3.event_values) == 3
    assert incorporate(o3, F(3, 8)) is o3
    assert o3.objective_code == o.objective_code
    with pytest.raises(ValueOutOfRange):
        incorporate(o, F(3, 2))


def test_recorded_codes_differ_by_attach_position():
    # nearest leaves sit at different depths, so the new branch gets different codes
    a = make_observer(0, ["0", "1/4", "1/2"], "0", "((00,01),1)")
    b = make_observer(1, ["0", "1/4", "1/2"], "1", "(0,(10,11))")
    ra = recorded_value(incorporate(a, F(9, 16)), F(9, 16))
    rb = recorded_value(incorporate(b, F(9, 16)), F(9, 16))
    assert ra == F(3, 4) and rb == F(5, 8)


def test_observer_validation():
    with pytest.raises(EnsembleError):
        make_observer(0, ["0", "1/2", "1/4"], "1")  # 3 events on a 2-leaf tree
    with pytest.raises(EnsembleError):
        make_observer(0, ["1/2", "1/2"], "1")


# -- distributions and wave functions ------------------------------------------------


def test_objective_distribution_examples():
    ens = split_ensemble(holder_has_target=False)
    cls = select(ens, {"class_of": 0})
    dist = objective_distribution(ens, 4, cls)
    assert dict(dist.items()) == {F(5, 8): F(1, 4), F(3, 4): F(3, 4)}
    point = objective_distribution(split_ensemble(), 4, cls)
    assert dict(point.items()) == {F(3, 4): F(1)}
    with pytest.raises(EmptyThetaClass):
        objective_distribution(ens, 4, [])


def test_objective_wavefunction():
    ens = split_ensemble()
    cls = select(ens, {"class_of": 0})[0]
    S = theta_phase(ens, cls, 4)
    assert (S.lo, S.hi, S.depth) == (0, 1, 4)
    psi = objective_wavefunction(Distribution.empirical([F(3, 4)]), S)
    assert np.count_nonzero(psi.values) == 1
    zero = S.with_values(np.zeros(S.n))
    rng = np.random.default_rng(1)
    for _ in range(20):
        rho = S.with_values(rng.random(S.n))
        rho = rho.with_values(rho.values / rho.integral())
        assert np.all(objective_wavefunction(rho, zero).values.imag == 0)
        assert np.allclose(np.abs(objective_wavefunction(rho, S).values) ** 2, rho.values, rtol=1e-14, atol=0)
    with pytest.raises(GridMismatch):
        objective_wavefunction(GridField.zeros(EVENT_DOMAIN, 5), S)


def test_theta_phase_is_right_half_of_subjective_phase():
    ens = split_ensemble()
    cls = select(ens, {"class_of": 0})[0]
    vals = ens[0].dendrogram.monna_values()
    full = subjective_state([vals[k] for k in sorted(vals)], EmergenceConfig(), 5).S
    S = theta_phase(ens, cls, 4)
    assert np.array_equal(S.values, full.values[16:])
    assert np.allclose(S.edges, full.edges[16:])
    with pytest.raises(EnsembleError):
        theta_phase(ens, cls, 4, representative=4)


# -- measurement ----------------------------------------------------------------


def test_constructed_split():
    ens = split_ensemble()
    ledger = WorldLedger.fresh(THREE)
    rnd = measure(ens, select(ens, {"class_of": 0}), [4], ledger)
    assert rnd.eigenvalues == (F(3, 4),) and rnd.a_squared == (F(1),)
    assert {c.canonical_form: b for c, b in rnd.partition} == {BAL4: F(3, 4), THREE: F(1, 4)}
    probs = sorted(p for _, p, _ in world_lines(rnd.ledger))
    assert probs == [F(1, 4), F(3, 4)]
    assert rnd.ledger.total_weight() == 1
    assert rnd.ledger.generation == 1
    # observer 3 already held the value and is untouched
    assert rnd.ensemble[3] is ens[3]
    for c in theta_classes(rnd.ensemble):
        for i in c.member_ids:
            assert rnd.ensemble[i].form == c.canonical_form


def test_no_split_when_everyone_agrees():
    ens = split_ensemble()
    ledger = WorldLedger.fresh(THREE)
    rnd = measure(ens, select(ens, [THREE]), [4], ledger)
    rnd2 = measure(rnd.ensemble, select(rnd.ensemble, {"forms": [BAL4]}), [4], rnd.ledger)
    # second round: members already hold the value, one outcome, one class
    assert len(rnd2.eigenvalues) == 1 and len(rnd2.partition) == 1
    assert sorted(b.weight for b in rnd2.ledger.branches) == sorted(b.weight for b in rnd.ledger.branches)


def test_measure_errors():
    ens = split_ensemble()
    ledger = WorldLedger.fresh(THREE)
    cls = select(ens, {"class_of": 0})
    with pytest.raises(EmptyTargets):
        measure(ens, cls, [], ledger)
    with pytest.raises(EmptyThetaClass):
        select(ens, "(((o,o),o),o)")
    with pytest.raises(EnsembleError):
        measure(ens, cls, [99], ledger)


def test_empty_schedule_is_identity():
    ens = init_ensemble(6, 2)
    ledger = WorldLedger.fresh(TWO)
    final, out, rounds = chained_measure(ens, [], ledger)
    assert final == ens and out == ledger and rounds == []
    assert world_lines(out) == [((), F(1), CanonicalForm(TWO))]


def test_repeat_round_is_identity_on_dendrograms():
    rng = random.Random(0)
    for trial in range(20):
        n = rng.randint(2, 20)
        ens = init_ensemble(n, trial)
        targets = rng.sample(range(n), rng.randint(1, min(3, n)))
        e1, _, _ = chained_measure(ens, [("all", targets)])
        # repeating with every observer: incorporating held values changes nothing
        e2, _, _ = chained_measure(e1, [("all", targets)], WorldLedger.fresh(TWO))
        assert [o.dendrogram for o in e2] == [o.dendrogram for o in e1]
        assert [o.measurement_log for o in e2] == [o.measurement_log for o in e1]


def product_oracle(rounds, start):
    """Hand-expanded triple sum: each world's weight is the product of a_i^2 b_j over its rounds."""
    worlds = {((), (start,)): (F(1), start)}
    for rnd in rounds:
        region = set(rnd.region)
        nxt = {}
        for (record, hist), (w, theta) in worlds.items():
            if theta not in region:
                nxt[(record + ((rnd.targets, IDLE),), hist + (theta,))] = (w, theta)
                continue
            for i, a2 in enumerate(rnd.a_squared):
                for cls, b in rnd.partition:
                    f = cls.canonical_form
                    nxt[(record + ((rnd.targets, i),), hist + (f,))] = (w * a2 * b, f)
        worlds = nxt
    return {k: w for k, (w, _) in worlds.items()}


def test_chained_rounds_match_product_expansion():
    rng = random.Random(5)
    for trial in range(30):
        n = rng.randint(2, 16)
        ens = init_ensemble(n, trial)
        schedule = []
        for _ in range(rng.randint(1, 3)):
            schedule.append(({"class_of": rng.randrange(n)}, rng.sample(range(n), rng.randint(1, 2))))
        final, ledger, rounds = chained_measure(ens, schedule)
        expected = product_oracle(rounds, TWO)
        got = {(b.record, b.history): b.weight for b in ledger.branches}
        assert got == expected
        assert ledger.generation == len(schedule)
        assert all(len(b.record) == ledger.generation for b in ledger.branches)
        assert unique_world_lines(final)


def test_constructed_two_round_product():
    ens = split_ensemble(holder_has_target=False)
    final, ledger, rounds = chained_measure(
        ens, [({"class_of": 0}, [4]), ("all", [0])], WorldLedger.fresh(THREE)
    )
    r1, r2 = rounds
    assert r1.a_squared == (F(1, 4), F(3, 4))
    assert len(ledger.branches) <= len(r1.a_squared) * len(r1.partition) * len(r2.a_squared) * len(r2.partition)
    for b in ledger.branches:
        (_, i1), (_, i2) = b.record
        b1 = dict((c.canonical_form, x) for c, x in r1.partition)[b.history[1]]
        b2 = dict((c.canonical_form, x) for c, x in r2.partition)[b.history[2]]
        assert b.weight == r1.a_squared[i1] * b1 * r2.a_squared[i2] * b2
    assert ledger.total_weight() == 1


# -- relative states ---------------------------------------------------------------


def test_bell_relative_state():
    eta1, eta2 = CanonicalForm(THREE), CanonicalForm(BAL4)
    t = (0,)
    ledger = WorldLedger(
        (
            Branch(F(1, 2), ((t, 0),), eta1, (eta1,)),
            Branch(F(1, 2), ((t, 1),), eta2, (eta2,)),
        ),
        1,
    )
    rs = relative_state(ledger, ThetaCondition(eta1))
    assert rs.amplitudes == {(((t, 0),), ()): 1.0}
    assert rs.Z == pytest.approx(math.sqrt(0.5))
    rs2 = relative_state(ledger, OutcomeCondition(1, 1))
    assert list(rs2.amplitudes.values()) == [1.0]
    with pytest.raises(EmptyProjection):
        relative_state(ledger, OutcomeCondition(1, 5))


def test_relative_state_matching_everything():
    # a single eigenvalue: every branch recorded index 0, so the condition is vacuous
    ens = split_ensemble()
    _, ledger, _ = chained_measure(ens, [({"class_of": 0}, [4])], WorldLedger.fresh(THREE))
    rs = relative_state(ledger, OutcomeCondition(1, 0))
    assert rs.Z == pytest.approx(1.0, abs=1e-15)
    assert sorted(abs(a) ** 2 for a in rs.amplitudes.values()) == pytest.approx([0.25, 0.75])


def test_relative_state_matches_brute_force():
    rng = random.Random(8)
    for trial in range(40):
        n = rng.randint(2, 12)
        ens = init_ensemble(n, trial)
        schedule = [({"class_of": rng.randrange(n)}, rng.sample(range(n), 1)) for _ in range(rng.randint(1, 3))]
        _, ledger, _ = chained_measure(ens, schedule)
        assert len(ledger.branches) <= 64

        def obs(b):
            return sum(i for _, i in b.record) + 0.5 * b.theta.count("o")

        conds = [ThetaCondition(b.theta) for b in ledger.branches]
        conds += [OutcomeCondition(r, b.record[r - 1][1]) for b in ledger.branches for r in range(1, len(b.record) + 1)]
        for cond in conds:
            rs = relative_state(ledger, cond)
            if isinstance(cond, ThetaCondition):
                match = [b for b in ledger.branches if b.theta == cond.theta]
            else:
                match = [b for b in ledger.branches if b.record[cond.round - 1][1] == cond.index]
            z = sum(b.weight for b in match)
            brute = float(sum(b.weight * F(obs(b)) for b in match) / z)
            assert abs(rs.expectation(obs) - brute) <= 1e-12
            assert math.fsum(abs(a) ** 2 for a in rs.amplitudes.values()) == pytest.approx(1.0, abs=1e-12)


def test_world_lines_sorted_and_normalised():
    ens = init_ensemble(16, 9)
    _, ledger, _ = chained_measure(ens, [("all", [3]), ({"class_of": 0}, [5, 7])])
    lines = world_lines(ledger)
    assert [r for r, _, _ in lines] == sorted(r for r, _, _ in lines)
    assert sum(p for _, p, _ in lines) == 1
    assert ledger.norm_squared() == pytest.approx(1.0, abs=1e-12)


def test_select_variants():
    ens = split_ensemble()
    classes = theta_classes(ens)
    assert select(ens, "all") == classes
    assert select(ens, THREE) == [classes[0]]
    assert select(ens, classes[1]) == [classes[1]]
    assert select(ens, lambda e: theta_classes(e)[:1]) == [classes[0]]
    with pytest.raises(EnsembleError):
        select(ens, 3.5)


def test_ledger_json_is_sorted_and_complete():
    ens = split_ensemble()
    _, ledger, _ = chained_measure(ens, [({"class_of": 0}, [4])], WorldLedger.fresh(THREE))
    data = ledger.to_json()
    assert data["generation"] == 1
    assert [b["weight"] for b in data["branches"]] in (["3/4", "1/4"], ["1/4", "3/4"])
    for b in data["branches"]:
        re, im = b["amplitude"]
        assert re * re + im * im == pytest.approx(float(F(b["weight"])))
