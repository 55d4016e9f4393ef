"""Emergent Bohmian quantities of an observer's dendrogram.

Pipeline: Monna event values -> pairwise differences -> difference pdf ->
density on a dyadic grid -> phase, potentials, quantum potential ->
Hamilton-Jacobi and continuity residuals between two dendrogram steps, and
the subjective wave function ``sqrt(rho) * exp(iS)``.

The discrete part (differences, pdf, kinetic term) is exact rational
arithmetic.  Grid fields are float64 numpy arrays summed in index order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .padic import Dendrogram, dyadic_exponent, restrict

EVENT_DOMAIN = (Fraction(0), Fraction(1))
DIFF_DOMAIN = (Fraction(-1), Fraction(1))


class EmergenceError(ValueError):
    pass


class TooFewEvents(EmergenceError):
    pass


class GridMismatch(EmergenceError):
    pass


# ---------------------------------------------------------------------------
# Differences and the difference pdf (exact)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Differences:
    """All pairwise differences ``q_ik = event_i - event_k`` of ``m`` events."""

    m: int
    convention: str
    pairs: tuple[tuple[int, int, Fraction], ...]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def values(self) -> list[Fraction]:
        return [q for _, _, q in self.pairs]


def pairwise_differences(
    events: Sequence[Fraction], convention: str = "ordered"
) -> Differences:
    """Ordered convention: all ``m(m-1)`` pairs ``i != k``.  Unordered: ``i < k`` only."""
    events = [Fraction(e) for e in events]
    if len(events) < 2:
        raise TooFewEvents("at least two events are needed")
    if len(set(events)) != len(events):
        raise EmergenceError("duplicate event values: events must be distinguishable")
    if convention == "ordered":
        idx = [(i, k) for i in range(len(events)) for k in range(len(events)) if i != k]
    elif convention == "unordered":
        idx = [(i, k) for i in range(len(events)) for k in range(i + 1, len(events))]
    else:
        raise ValueError(f"unknown pair convention {convention!r}")
    return Differences(
        len(events), convention, tuple((i, k, events[i] - events[k]) for i, k in idx)
    )


@dataclass(frozen=True)
class Distribution:
    """Finite distribution with exact rational masses on ascending support."""

    support: tuple[Fraction, ...]
    mass: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.mass) or not self.support:
            raise EmergenceError("support and mass must be non-empty and equally long")
        if any(b <= a for a, b in zip(self.support, self.support[1:])):
            raise EmergenceError("support must be strictly ascending")
        if any(w <= 0 for w in self.mass):
            raise EmergenceError("masses must be positive")
        if sum(self.mass) != 1:
            raise EmergenceError("masses must sum to 1")

    @classmethod
    def empirical(cls, values: Iterable[Fraction], **extra) -> "Distribution":
        counts = Counter(Fraction(v) for v in values)
        total = sum(counts.values())
        support = tuple(sorted(counts))
        return cls(support, tuple(Fraction(counts[q], total) for q in support), **extra)

    def __getitem__(self, q: Fraction) -> Fraction:
        try:
            return self.mass[self.support.index(Fraction(q))]
        except ValueError:
            return Fraction(0)

    def items(self):
        return zip(self.support, self.mass)

    def moment(self, k: int) -> Fraction:
        return sum((w * q**k for q, w in self.items()), Fraction(0))


@dataclass(frozen=True)
class DiffPdf(Distribution):
    pair_convention: str = "ordered"


def diff_pdf(differences: Differences) -> DiffPdf:
    if not len(differences):
        raise EmergenceError("no differences")
    return DiffPdf.empirical(differences.values(), pair_convention=differences.convention)


def mean_momentum(differences: Differences, scope: str | int = "global") -> Fraction:
    """Mean pairwise difference, globally or for one event ``j``.

    ``scope="global"`` averages all ``N`` stored differences (identically zero
    for ordered pairs).  An integer ``scope=j`` averages ``q_jk`` over the
    ``m - 1`` partners ``k`` of event ``j``.
    """
    if scope == "global":
        return sum(differences.values(), Fraction(0)) / len(differences)
    j = int(scope)
    if not 0 <= j < differences.m:
        raise EmergenceError(f"event index {j} out of range")
    total = Fraction(0)
    for i, k, q in differences:
        if i == j:
            total += q
        elif k == j and differences.convention == "unordered":
            total -= q
    return total / (differences.m - 1)


def differences_energy(differences: Differences) -> Fraction:
    """Mean squared pairwise difference ``(1/N) sum q_jk^2``."""
    return sum((q * q for q in differences.values()), Fraction(0)) / len(differences)


# ---------------------------------------------------------------------------
# Grid fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples on ``2**depth`` equal cells covering ``[lo, hi]``."""

    lo: Fraction
    hi: Fraction
    depth: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise EmergenceError("grid depth must be at least 2")
        if self.values.shape != (1 << self.depth,):
            raise EmergenceError(
                f"expected {1 << self.depth} samples, got shape {self.values.shape}"
            )

    @classmethod
    def zeros(cls, domain=DIFF_DOMAIN, depth: int = 4, dtype=float) -> "GridField":
        return cls(Fraction(domain[0]), Fraction(domain[1]), depth, np.zeros(1 << depth, dtype))

    @classmethod
    def from_function(cls, fn, domain=DIFF_DOMAIN, depth: int = 4) -> "GridField":
        g = cls.zeros(domain, depth)
        return g.with_values(np.asarray(fn(g.centers), dtype=float))

    @property
    def n(self) -> int:
        return 1 << self.depth

    @property
    def h(self) -> float:
        return float((self.hi - self.lo) / self.n)

    @property
    def edges(self) -> np.ndarray:
        return float(self.lo) + self.h * np.arange(self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return float(self.lo) + self.h * (np.arange(self.n) + 0.5)

    def with_values(self, values: np.ndarray) -> "GridField":
        return replace(self, values=np.asarray(values))

    def same_grid(self, other: "GridField") -> bool:
        return (self.lo, self.hi, self.depth) == (other.lo, other.hi, other.depth)

    def cell_of(self, x: Fraction) -> int:
        """Cell holding ``x``; points on an interior boundary go to the left cell."""
        x = Fraction(x)
        if not self.lo <= x <= self.hi:
            raise EmergenceError(f"{x} outside [{self.lo}, {self.hi}]")
        t = (x - self.lo) * self.n / (self.hi - self.lo)
        c = t.numerator // t.denominator
        if t.denominator == 1 and c > 0:
            c -= 1
        return min(c, self.n - 1)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.h)

    def __repr__(self) -> str:
        return f"GridField([{self.lo}, {self.hi}], depth={self.depth})"


def _check_grid(*fields: GridField) -> None:
    first = fields[0]
    for f in fields[1:]:
        if not first.same_grid(f):
            raise GridMismatch(f"{first!r} vs {f!r}")


def density_field(
    dist: Distribution, depth: int, domain=DIFF_DOMAIN, weight=None
) -> GridField:
    """Transfer point masses to cell densities: each mass lands in its cell, divided by ``h``.

    ``weight(q)`` optionally multiplies each point mass before transfer.
    """
    grid = GridField.zeros(domain, depth)
    acc = [Fraction(0)] * grid.n
    for q, w in dist.items():
        acc[grid.cell_of(q)] += w * (weight(q) if weight else 1)
    h = (grid.hi - grid.lo) / grid.n
    return grid.with_values(np.array([float(a / h) for a in acc]))


def default_depth(events: Iterable[Fraction]) -> int:
    """Deepest event code plus two, never below 2."""
    return max(2, max(dyadic_exponent(Fraction(e)) for e in events) + 2)


def derivative(f: GridField) -> GridField:
    """Central differences inside, second-order one-sided at the two end cells."""
    return f.with_values(np.gradient(f.values, f.h, edge_order=2))


def laplacian(f: GridField) -> GridField:
    """Three-point second difference; second-order one-sided 4-point stencil at the ends."""
    y = f.values
    out = np.empty_like(y)
    # written as sums of first differences so constant input gives exactly zero
    d = np.diff(y)
    out[1:-1] = d[1:] - d[:-1]
    out[0] = 3.0 * d[1] - 2.0 * d[0] - d[2]
    out[-1] = 2.0 * d[-1] - 3.0 * d[-2] + d[-3]
    return f.with_values(out / (f.h * f.h))


def running_integral(f: GridField) -> GridField:
    """Left-to-right cumulative sum times ``h``; entry ``c`` covers cells ``0..c``."""
    return f.with_values(np.cumsum(f.values) * f.h)


# ---------------------------------------------------------------------------
# Configuration and emergent fields
# ---------------------------------------------------------------------------

POTENTIAL_MODES = ("cdf", "total_mass")
PHASE_MODES = ("integrate_momentum", "unit_modulus")
CONTINUITY_FORMS = ("literal_squared", "standard_flux")


@dataclass(frozen=True)
class EmergenceConfig:
    grid_depth: int | None = None
    z_v: float = 1.0
    potential_mode: str = "cdf"
    phase_mode: str = "integrate_momentum"
    continuity_form: str = "standard_flux"
    pair_convention: str = "ordered"

    def __post_init__(self) -> None:
        if self.grid_depth is not None and self.grid_depth < 2:
            raise ValueError("grid_depth must be at least 2")
        if not np.isfinite(self.z_v):
            raise ValueError("z_v must be finite")
        for name, allowed in (
            ("potential_mode", POTENTIAL_MODES),
            ("phase_mode", PHASE_MODES),
            ("continuity_form", CONTINUITY_FORMS),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")
        if self.pair_convention not in ("ordered", "unordered"):
            raise ValueError("pair_convention must be 'ordered' or 'unordered'")


def phase_field(pdf: Distribution, cfg: EmergenceConfig, depth: int | None = None) -> GridField:
    """Phase ``S`` on the difference grid, ``S = 0`` at the left boundary.

    ``integrate_momentum``: the slope field is ``rho(Q) Q^2``, transferred to
    the grid like the density (each point contributes ``rho_j Q_j^2 / h`` to
    its cell) and summed left to right, so the last sample equals
    ``sum_j rho_j Q_j^2``.

    ``unit_modulus``: the slope is ``cos S`` (real part of ``exp(iS)``),
    which integrates in closed form to the Gudermannian function of the
    distance from the left boundary; it does not depend on the data.
    """
    depth = depth or cfg.grid_depth
    if depth is None:
        raise EmergenceError("grid depth required")
    if cfg.phase_mode == "integrate_momentum":
        slope = density_field(pdf, depth, weight=lambda q: q * q)
        return running_integral(slope)
    grid = GridField.zeros(DIFF_DOMAIN, depth)
    x = grid.edges[1:] - float(grid.lo)
    return grid.with_values(2.0 * np.arctan(np.tanh(x / 2.0)))


def _potential(integrand: GridField, mode: str) -> GridField:
    run = running_integral(integrand)
    if mode == "cdf":
        return run
    return run.with_values(np.full(run.n, run.values[-1]))


def classical_potentials(
    rho: GridField, cfg: EmergenceConfig
) -> tuple[GridField, GridField]:
    """``v = Z_V * int rho (d rho)^2 / rho^2`` and ``U = int rho``.

    In ``cdf`` mode both are running integrals up to each cell; in
    ``total_mass`` mode both are the constant full integral.  The ``v``
    integrand is zero where ``rho`` vanishes.
    """
    r = rho.values
    drho = derivative(rho).values
    integrand = np.zeros_like(r)
    pos = r > 0
    integrand[pos] = drho[pos] ** 2 / r[pos]
    v = _potential(rho.with_values(cfg.z_v * integrand), cfg.potential_mode)
    u = _potential(rho, cfg.potential_mode)
    return v, u


def quantum_potential(rho: GridField) -> GridField:
    """``(Laplacian sqrt(rho)) / sqrt(rho)``, zero on cells where ``rho == 0``."""
    if np.any(rho.values < 0):
        raise EmergenceError("density must be non-negative")
    top = float(np.max(rho.values))
    if top == 0.0:
        return rho.with_values(np.zeros(rho.n))
    # normalising first makes U^Q(c rho) bit-identical to U^Q(rho) whenever c * rho is exact
    amp = np.sqrt(rho.values / top)
    lap = laplacian(rho.with_values(amp)).values
    out = np.zeros_like(amp)
    pos = amp > 0
    out[pos] = lap[pos] / amp[pos]
    return rho.with_values(out)


def wavefunction(rho: GridField, S: GridField) -> GridField:
    _check_grid(rho, S)
    if np.any(rho.values < 0):
        raise EmergenceError("density must be non-negative")
    return rho.with_values(np.sqrt(rho.values) * np.exp(1j * S.values))


# ---------------------------------------------------------------------------
# Dynamics over dendrogram steps
# ---------------------------------------------------------------------------


class State(NamedTuple):
    """Phase and density of one dendrogram step, on a shared grid."""

    S: GridField
    rho: GridField


def action(trajectory: Sequence[State], cfg: EmergenceConfig) -> float:
    """Discrete action summed over consecutive steps (step measure 1 per event).

    Each transition contributes ``sum S_dot rho h + sum (dS)^2 rho h - v + U``
    with ``v`` and ``U`` their full integrals over the present step.
    """
    return sum(action_terms(trajectory, cfg), 0.0)


def action_terms(trajectory: Sequence[State], cfg: EmergenceConfig) -> list[float]:
    if len(trajectory) < 2:
        raise EmergenceError("the action needs at least two steps")
    _check_grid(*[f for st in trajectory for f in st])
    terms = []
    for prev, cur in zip(trajectory, trajectory[1:]):
        h = cur.rho.h
        s_dot = cur.S.values - prev.S.values
        ds = derivative(cur.S).values
        v, u = classical_potentials(cur.rho, cfg)
        terms.append(
            float(np.sum(s_dot * cur.rho.values) * h)
            + float(np.sum(ds * ds * cur.rho.values) * h)
            - float(v.values[-1])
            + float(u.values[-1])
        )
    return terms


def hj_residual(prev: State, present: State, cfg: EmergenceConfig) -> GridField:
    """``-S_dot - (dS)^2 - U - U^Q`` on the present step."""
    _check_grid(prev.S, prev.rho, present.S, present.rho)
    s_dot = present.S.values - prev.S.values
    ds = derivative(present.S).values
    _, u = classical_potentials(present.rho, cfg)
    uq = quantum_potential(present.rho).values
    return present.S.with_values(-s_dot - ds * ds - u.values - uq)


def continuity_residual(
    prev: State, present: State, cfg: EmergenceConfig, form: str | None = None
) -> GridField:
    """``literal_squared``: ``rho_dot - d((rho dS)^2)``; ``standard_flux``: ``rho_dot + d(rho dS)``.

    The flux divergence is expanded by the product rule,
    ``d(rho dS) = d(rho) dS + rho Lap(S)``.  Differencing the sampled flux
    again would divide its one-sided boundary error by ``h`` and leave the
    two cells at each end only first-order accurate.
    """
    _check_grid(prev.S, prev.rho, present.S, present.rho)
    form = form or cfg.continuity_form
    rho = present.rho.values
    rho_dot = rho - prev.rho.values
    dS = derivative(present.S).values
    flux = rho * dS
    div = derivative(present.rho).values * dS + rho * laplacian(present.S).values
    if form == "literal_squared":
        return present.rho.with_values(rho_dot - 2.0 * flux * div)
    if form == "standard_flux":
        return present.rho.with_values(rho_dot + div)
    raise ValueError(f"unknown continuity form {form!r}")


def schrodinger_residual(prev: State, present: State, cfg: EmergenceConfig) -> GridField:
    """Complex residual of the Schrodinger-form equation for ``psi = sqrt(rho) e^{iS}``.

    ``E = i G psi + Lap(psi) - (U + 2 U^Q) psi`` where ``Lap`` acts on the
    complex samples directly and ``G = rho_dot / rho + i S_dot`` is the step
    generator of the dendrogram update.  In the continuum
    ``conj(psi) E = rho * HJ + i * (rho_dot + d(rho dS))``; see
    :func:`madelung_parts`.  Cells with ``rho == 0`` are set to zero.
    """
    _check_grid(prev.S, prev.rho, present.S, present.rho)
    psi = wavefunction(present.rho, present.S).values
    r = present.rho.values
    pos = r > 0
    gen = np.zeros(r.shape, dtype=complex)
    gen[pos] = (r[pos] - prev.rho.values[pos]) / r[pos]
    gen += 1j * (present.S.values - prev.S.values)
    lap_re = laplacian(present.rho.with_values(psi.real)).values
    lap_im = laplacian(present.rho.with_values(psi.imag)).values
    _, u = classical_potentials(present.rho, cfg)
    uq = quantum_potential(present.rho).values
    e = 1j * gen * psi + (lap_re + 1j * lap_im) - (u.values + 2.0 * uq) * psi
    e[~pos] = 0.0
    return present.rho.with_values(e)


def madelung_parts(residual: GridField, psi: GridField) -> tuple[GridField, GridField]:
    """Split ``conj(psi) E`` into its HJ-like real part (divided by rho) and continuity-like imaginary part."""
    _check_grid(residual, psi)
    prod = np.conj(psi.values) * residual.values
    rho = np.abs(psi.values) ** 2
    real = np.zeros(rho.shape)
    pos = rho > 0
    real[pos] = prod.real[pos] / rho[pos]
    return psi.with_values(real), psi.with_values(prod.imag)


# ---------------------------------------------------------------------------
# End-to-end helpers
# ---------------------------------------------------------------------------


def subjective_state(
    events: Sequence[Fraction], cfg: EmergenceConfig, depth: int | None = None
) -> State:
    """Phase and density fields of one set of Monna event values."""
    depth = depth or cfg.grid_depth or default_depth(events)
    pdf = diff_pdf(pairwise_differences(events, cfg.pair_convention))
    return State(phase_field(pdf, cfg, depth), density_field(pdf, depth))


def growth_trajectory(d: Dendrogram) -> list[list[Fraction]]:
    """Monna event sets of ``d`` restricted to its first 2, 3, ..., n events (by key).

    Each restriction is the dendrogram as it stood before the later events
    were collected, so its codes (and Monna values) are recomputed from the
    contracted tree.
    """
    keys = sorted(d.keys)
    steps = []
    for k in range(2, len(keys) + 1):
        sub = d if k == len(keys) else restrict(d, keys[:k])
        vals = sub.monna_values()
        steps.append([vals[key] for key in sorted(vals)])
    return steps


@dataclass
class EmergenceResult:
    depth: int
    events: list[Fraction]
    pdf: DiffPdf
    T: Fraction
    p_global: Fraction
    state: State
    v: GridField
    U: GridField
    UQ: GridField
    psi: GridField
    action: float | None
    hj: GridField | None
    continuity: dict[str, GridField]

    def summary(self) -> dict:
        out = {
            "T": float(self.T),
            "T_exact": str(self.T),
            "p_global": float(self.p_global),
            "action": self.action,
            "max_abs_hj_residual": None if self.hj is None else float(np.max(np.abs(self.hj.values))),
            "grid_depth": self.depth,
            "event_count": len(self.events),
        }
        cont = {k: float(np.max(np.abs(f.values))) for k, f in self.continuity.items()}
        if len(cont) == 1:
            out["max_abs_continuity_residual"] = next(iter(cont.values()))
        else:
            out["max_abs_continuity_residual"] = cont or None
        return out


def emerge(
    trajectory: Sequence[Sequence[Fraction]],
    cfg: EmergenceConfig,
    continuity_forms: Sequence[str] | None = None,
    uniform_rho: bool = False,
) -> EmergenceResult:
    """Run the whole pipeline over a sequence of event sets; the last one is "present".

    ``uniform_rho`` replaces every density by the flat normalised density
    (a synthetic check: the quantum potential must then vanish).
    """
    if not trajectory:
        raise EmergenceError("empty trajectory")
    depth = cfg.grid_depth or max(default_depth(ev) for ev in trajectory)
    states = []
    for ev in trajectory:
        st = subjective_state(ev, cfg, depth)
        if uniform_rho:
            width = float(st.rho.hi - st.rho.lo)
            st = State(st.S, st.rho.with_values(np.full(st.rho.n, 1.0 / width)))
        states.append(st)
    events = list(trajectory[-1])
    diffs = pairwise_differences(events, cfg.pair_convention)
    pdf = diff_pdf(diffs)
    cur = states[-1]
    v, u = classical_potentials(cur.rho, cfg)
    forms = list(continuity_forms or [cfg.continuity_form])
    hj = None
    cont: dict[str, GridField] = {}
    act = None
    if len(states) >= 2:
        hj = hj_residual(states[-2], cur, cfg)
        cont = {f: continuity_residual(states[-2], cur, cfg, f) for f in forms}
        act = action(states, cfg)
    return EmergenceResult(
        depth=depth,
        events=events,
        pdf=pdf,
        T=differences_energy(diffs),
        p_global=mean_momentum(diffs),
        state=cur,
        v=v,
        U=u,
        UQ=quantum_potential(cur.rho),
        psi=wavefunction(cur.rho, cur.S),
        action=act,
        hj=hj,
        continuity=cont,
    )
