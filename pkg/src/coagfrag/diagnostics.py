"""A-posteriori checks of recorded runs against the model's estimates.

Every check is a pure function of one or more TimeSeries records.  It
rebuilds the controlled quantity from stored moment columns or snapshots,
evaluates the theoretical bound from the same constants the solver used, and
returns a verdict; nothing here re-runs the solver.  Margins follow one
convention throughout: margin = bound - value, so the check passes exactly
when the worst margin is non-negative.

The sub-critical checks (lyapunov_check, low_moment_check) require the run's
total mass to sit below the critical value rho_star and raise
AssumptionViolation otherwise; the estimates they verify simply do not exist
above it.  gelation_scan is the complementary tool: it classifies a family
of runs at increasing truncation thresholds by how the accumulated boundary
loss responds to the threshold, which is the observable distinction between
a mass-conserving regime and a gelling one.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from coagfrag.integrator import TimeSeries
from coagfrag.kernel import (
    AssumptionViolation,
    CoefficientSpec,
    delta_rho,
    frag_moment,
    moment_closure_constant,
    rho_star,
    sigma_lower_bound,
)
from coagfrag.operators import build_tables, weak_form_terms

__all__ = [
    "CheckVerdict",
    "LyapunovReport",
    "lyapunov_report",
    "lyapunov_check",
    "low_moment_check",
    "high_moment_check",
    "GelationVerdict",
    "GelationReport",
    "gelation_scan",
    "ContractionReport",
    "contraction_report",
    "contraction_check",
    "weak_residual",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckVerdict:
    """Outcome of one trajectory check.

    worst_margin is bound - value at the reported record (high_moment_check
    is the one exception: there the estimate asserts finiteness without a
    constant, so the field carries the observed supremum instead).  When a
    check fails, worst_time is the first record in violation; when it
    passes, it is the record where the margin was tightest.
    """

    name: str
    passed: bool
    worst_margin: float
    worst_time: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "worst_time": float(self.worst_time),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _verdict(name: str, times: np.ndarray, margin: np.ndarray) -> CheckVerdict:
    bad = margin < 0.0
    idx = int(np.argmax(bad)) if bad.any() else int(np.argmin(margin))
    return CheckVerdict(name, not bad.any(), float(margin[idx]), float(times[idx]))


def _sigma_from_record(ts: TimeSeries) -> float:
    """Bookkeeping constant sigma evaluated on the run's own initial record."""
    c = ts.constants
    return sigma_lower_bound(
        c.m1,
        float(ts.mass[0]),
        float(ts.moment(c.m0)[0]),
        float(ts.moment(c.m1)[0]),
        float(ts.abslog_mass[0]),
    )


# ---------------------------------------------------------------------------
# logarithmic-entropy (Lyapunov) budget


@dataclass(frozen=True)
class LyapunovReport:
    """Term-by-term budget of the logarithmic-entropy estimate.

    The inequality verified is

        L_m(t) + delta_rho * int_0^t M_lam ds + ln(j) * cum_loss(t)
            <= L0 + C1(m) * t + slack

    with L_m = int x|ln x| f dx + M_m/(e(1-m)) and
    L0 = int x|ln x| f_in dx + 2 M_m(0)/(e(1-m)).  All terms are evaluated
    on the output-stride records; the time integral of M_lam is a running
    trapezoid and the boundary flux integral comes from the stepper's own
    accumulator.  slack = 10 * rel_tol * L0 absorbs time-integration error.
    """

    m: float
    rho: float
    j: float
    delta_rho: float
    c1: float
    l0: float
    slack: float
    times: np.ndarray
    lyapunov: np.ndarray
    dissipation: np.ndarray
    flux: np.ndarray
    bound: np.ndarray
    margin: np.ndarray


def lyapunov_report(ts: TimeSeries, m: float | None = None,
                    spec: CoefficientSpec | None = None,
                    rho: float | None = None) -> LyapunovReport:
    """Evaluate the logarithmic-entropy budget along a recorded run.

    Parameters
    ----------
    ts : TimeSeries
        Recorded run.  M_m and M_lam must be tracked columns.
    m : float, optional
        Exponent of the regularizing moment, in [m1, 1).  Defaults to the
        run's m1.
    spec, rho : optional
        Coefficients and total mass; default to the run's own.  rho must be
        sub-critical.

    Raises
    ------
    AssumptionViolation
        If m is outside [m1, 1), rho >= rho_star, or the truncation
        threshold does not exceed unit size (the ln(j) weight on the
        boundary-flux term is only meaningful above it).
    """
    spec = ts.config.spec if spec is None else spec
    m = ts.constants.m1 if m is None else float(m)
    rho = float(ts.mass[0]) if rho is None else float(rho)
    if m < ts.constants.m1 or m >= 1.0:
        raise AssumptionViolation(
            "m1 <= m < 1", f"entropy estimate needs m in [{ts.constants.m1}, 1), got {m}")
    drho = delta_rho(spec, rho)
    if drho <= 0.0:
        raise AssumptionViolation(
            "rho < rho_star", f"entropy estimate is sub-critical only; "
            f"rho = {rho} vs rho_star = {rho_star(spec)}")
    j = ts.config.trunc.resolve(ts.grid)
    if j <= 1.0:
        raise AssumptionViolation(
            "j > 1", f"boundary-flux weight ln(j) needs a threshold above 1, got {j}")
    c1 = moment_closure_constant(spec, m, rho)
    scale = 1.0 / (math.e * (1.0 - m))
    moment_m = ts.moment(m)
    lyap = ts.abslog_mass + scale * moment_m
    diss = drho * cumulative_trapezoid(ts.moment(spec.lam), ts.times, initial=0.0)
    flux = math.log(j) * ts.cum_loss
    l0 = float(ts.abslog_mass[0] + 2.0 * scale * moment_m[0])
    slack = 10.0 * ts.config.rel_tol * l0
    bound = l0 + c1 * (ts.times - ts.times[0])
    margin = bound + slack - (lyap + diss + flux)
    return LyapunovReport(m=m, rho=rho, j=j, delta_rho=drho, c1=c1, l0=l0,
                          slack=slack, times=ts.times, lyapunov=lyap,
                          dissipation=diss, flux=flux, bound=bound, margin=margin)


def lyapunov_check(ts: TimeSeries, m: float | None = None,
                   spec: CoefficientSpec | None = None,
                   rho: float | None = None) -> CheckVerdict:
    """Verdict form of lyapunov_report; see there for the inequality."""
    rep = lyapunov_report(ts, m=m, spec=spec, rho=rho)
    return _verdict("lyapunov", rep.times, rep.margin)


# ---------------------------------------------------------------------------
# moment growth checks


def low_moment_check(ts: TimeSeries, m: float | None = None,
                     spec: CoefficientSpec | None = None,
                     rho: float | None = None) -> CheckVerdict:
    """Check the algebraic growth bound on a low-order moment.

    For m in (-nu-1, m1) the sub-critical theory gives

        M_m(t) <= max{M_m(0), C2(m)} * (2 + t)^((lam-m)/(lam-1))

    with C2(m) = (sigma + C1(m1)) / delta_rho * (a0 * b_{m,1})^((lam-m)/(lam-1)),
    sigma evaluated on the initial record.  M_m must be a tracked column;
    the default m is the run's m0.
    """
    spec = ts.config.spec if spec is None else spec
    m = ts.constants.m0 if m is None else float(m)
    rho = float(ts.mass[0]) if rho is None else float(rho)
    if m >= ts.constants.m1:
        raise AssumptionViolation(
            "m < m1", f"low-moment bound needs m below m1 = {ts.constants.m1}, got {m}")
    bm = frag_moment(spec, m, 1.0)   # raises if m <= -nu-1
    c1 = moment_closure_constant(spec, ts.constants.m1, rho)
    power = (spec.lam - m) / (spec.lam - 1.0)
    c2 = (_sigma_from_record(ts) + c1) / delta_rho(spec, rho) * (spec.a0 * bm) ** power
    values = ts.moment(m)
    bound = max(float(values[0]), c2) * (2.0 + ts.times - ts.times[0]) ** power
    return _verdict("low_moment", ts.times, bound - values)


def high_moment_check(ts: TimeSeries, m: float | None = None) -> CheckVerdict:
    """Check that a high-order moment stays finite along the run.

    Applies for m > 1 + lam - alpha; the default is the tracked exponent
    2*lam - alpha, which always qualifies.  The theory asserts a finite
    supremum on bounded time intervals without an explicit constant, so the
    verdict's worst_margin carries the observed supremum and worst_time its
    location; passed means every record was finite.
    """
    spec = ts.config.spec
    m = 2.0 * spec.lam - spec.alpha if m is None else float(m)
    if not m > 1.0 + spec.lam - spec.alpha:
        raise AssumptionViolation(
            "m > 1 + lam - alpha",
            f"high-moment control needs m > {1.0 + spec.lam - spec.alpha}, got {m}")
    values = ts.moment(m)
    idx = int(np.argmax(values))
    return CheckVerdict("high_moment", bool(np.all(np.isfinite(values))),
                        float(values[idx]), float(ts.times[idx]))


# ---------------------------------------------------------------------------
# mass conservation vs gelation


class GelationVerdict(enum.Enum):
    MASS_CONSERVING = "MassConserving"
    GELLING = "Gelling"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class GelationReport:
    """Classification of a truncation-threshold scan.

    per_doubling[i] is the factor by which the final accumulated boundary
    loss shrinks per doubling of the threshold between runs i and i+1; for
    a mass-conserving solution it drops at least geometrically, while a
    gelling one loses a threshold-independent amount.  spread is the
    relative gap between the losses of the two largest thresholds, and
    t_gel (gelling runs only) is the first record at which the largest-
    threshold run has lost more than the threshold fraction of its mass.
    """

    verdict: GelationVerdict
    thresholds: tuple
    final_loss: tuple
    per_doubling: tuple
    spread: float
    initial_mass: float
    t_gel: float | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "thresholds": list(self.thresholds),
            "final_loss": list(self.final_loss),
            "per_doubling": list(self.per_doubling),
            "spread": float(self.spread),
            "initial_mass": float(self.initial_mass),
            "t_gel": None if self.t_gel is None else float(self.t_gel),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def gelation_scan(runs, halving_factor: float = 0.65, spread_tol: float = 0.20,
                  loss_fraction: float = 0.01) -> GelationReport:
    """Classify runs at increasing truncation thresholds by boundary loss.

    Parameters
    ----------
    runs : sequence of TimeSeries
        At least three runs of identical physics (coefficients, operator
        switches, horizon, initial mass) whose resolved thresholds strictly
        increase.
    halving_factor : float
        Largest admissible per-doubling loss factor for MassConserving.
    spread_tol : float
        Largest admissible relative gap between the two largest-threshold
        losses for Gelling.
    loss_fraction : float
        Fraction of the initial mass that counts as a macroscopic loss.

    A scan is MassConserving when every per-doubling factor is below
    halving_factor, Gelling when the loss has a positive threshold-
    independent limit (small spread, macroscopic size), and Inconclusive
    when neither or both patterns fit.
    """
    runs = list(runs)
    if len(runs) < 3:
        raise ValueError("a threshold scan needs at least three runs")
    first = runs[0]
    for ts in runs[1:]:
        if ts.config.spec != first.config.spec:
            raise ValueError("scan runs must share coefficients")
        if (ts.config.coagulation != first.config.coagulation
                or ts.config.fragmentation != first.config.fragmentation):
            raise ValueError("scan runs must enable the same operators")
        if not math.isclose(ts.times[-1], first.times[-1], rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("scan runs must share the time horizon")
        if not math.isclose(ts.mass[0], first.mass[0], rel_tol=1e-6):
            raise ValueError("scan runs must start from the same mass")
    thresholds = [ts.config.trunc.resolve(ts.grid) for ts in runs]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("truncation thresholds must strictly increase")

    losses = [float(ts.cum_loss[-1]) for ts in runs]
    mass0 = float(runs[-1].mass[0])
    factors = []
    for (j1, j2), (l1, l2) in zip(zip(thresholds, thresholds[1:]),
                                  zip(losses, losses[1:])):
        doublings = math.log2(j2 / j1)
        if l1 == 0.0:
            factors.append(0.0 if l2 == 0.0 else math.inf)
        else:
            factors.append((l2 / l1) ** (1.0 / doublings))
    conserving = all(f <= halving_factor for f in factors)
    l_prev, l_last = losses[-2], losses[-1]
    spread = abs(l_last - l_prev) / max(l_last, l_prev) if max(l_last, l_prev) > 0.0 else 0.0
    gelling = spread < spread_tol and l_last > loss_fraction * mass0

    t_gel = None
    if gelling and not conserving:
        verdict = GelationVerdict.GELLING
        big = runs[-1]
        idx = int(np.argmax(big.cum_loss > loss_fraction * mass0))
        t_gel = float(big.times[idx])
    elif conserving and not gelling:
        verdict = GelationVerdict.MASS_CONSERVING
    else:
        verdict = GelationVerdict.INCONCLUSIVE
    log.info("threshold scan over j=%s: %s", thresholds, verdict.value)
    return GelationReport(verdict=verdict, thresholds=tuple(thresholds),
                          final_loss=tuple(losses), per_doubling=tuple(factors),
                          spread=spread, initial_mass=mass0, t_gel=t_gel)


# ---------------------------------------------------------------------------
# continuous dependence on the initial state


@dataclass(frozen=True)
class ContractionReport:
    """Weighted L1 distance between two runs against its growth bound."""

    rate: float
    factor: float
    times: np.ndarray
    distance: np.ndarray
    bound: np.ndarray
    margin: np.ndarray


def _matched_snapshots(ts1: TimeSeries, ts2: TimeSeries):
    pairs = []
    snaps2 = list(ts2.snapshots)
    k = 0
    for s1 in ts1.snapshots:
        tol = 1e-9 * max(1.0, abs(s1.t))
        while k < len(snaps2) and snaps2[k].t < s1.t - tol:
            k += 1
        if k < len(snaps2) and abs(snaps2[k].t - s1.t) <= tol:
            pairs.append((s1, snaps2[k]))
            k += 1
    return pairs


def contraction_report(ts1: TimeSeries, ts2: TimeSeries,
                       spec: CoefficientSpec | None = None,
                       factor: float = 1.05) -> ContractionReport:
    """Distance history of two runs against the stability estimate.

    D(t) = sum (x^alpha + x^lam) |f1 - f2| dx over matched snapshots must
    stay below factor * D(0) * exp(R * (t - t0)) with the growth rate

        R = 9 K0 (sup M_alpha + sup M_{2lam-alpha}) + a0 * b_{alpha,1}

    built from the running suprema of both runs' tracked moments.  M_alpha
    must be a tracked column (it is the mass column whenever alpha = 1;
    otherwise request alpha through extra_moments).  Both runs must share
    the grid, coefficients and truncation; factor is multiplicative
    headroom for discretization error.
    """
    spec = ts1.config.spec if spec is None else spec
    if ts2.config.spec != ts1.config.spec:
        raise ValueError("stability estimate applies to runs sharing coefficients")
    if ts2.config.trunc != ts1.config.trunc:
        raise ValueError("stability estimate applies to runs sharing the truncation")
    g = ts1.grid
    if not np.array_equal(g.edges, ts2.grid.edges):
        raise ValueError("runs live on different grids")
    pairs = _matched_snapshots(ts1, ts2)
    if len(pairs) < 2:
        raise ValueError("runs share fewer than two snapshot times")

    high = 2.0 * spec.lam - spec.alpha
    sup_a = max(float(np.max(ts1.moment(spec.alpha))), float(np.max(ts2.moment(spec.alpha))))
    sup_h = max(float(np.max(ts1.moment(high))), float(np.max(ts2.moment(high))))
    rate = 9.0 * spec.K0 * (sup_a + sup_h) + spec.a0 * frag_moment(spec, spec.alpha, 1.0)

    w = g.centers**spec.alpha + g.centers**spec.lam
    times = np.array([s1.t for s1, _ in pairs])
    dist = np.array([float(np.sum(w * np.abs(s1.values - s2.values) * g.widths))
                     for s1, s2 in pairs])
    bound = factor * dist[0] * np.exp(rate * (times - times[0]))
    return ContractionReport(rate=rate, factor=factor, times=times,
                             distance=dist, bound=bound, margin=bound - dist)


def contraction_check(ts1: TimeSeries, ts2: TimeSeries,
                      spec: CoefficientSpec | None = None,
                      factor: float = 1.05) -> CheckVerdict:
    """Verdict form of contraction_report; see there for the inequality."""
    rep = contraction_report(ts1, ts2, spec=spec, factor=factor)
    return _verdict("contraction", rep.times, rep.margin)


# ---------------------------------------------------------------------------
# weak-form consistency


def weak_residual(ts: TimeSeries, radii=None, tol: float | None = None) -> CheckVerdict:
    """Check the recorded snapshots against the discrete weak formulation.

    For each test function theta the recorded trajectory must satisfy

        int theta f(t) dx - int theta f(t0) dx = int_t0^t (coag + frag) ds

    where the right side is a Simpson cumulative quadrature of the realized
    weak-form rates over the snapshot times (trapezoid when only two
    snapshots exist).  The residual is normalized by the bookkeeping
    constant sigma of the initial record (taken as 1 for a zero state) and
    compared against tol, by default ten times the solver's relative
    tolerance.  The test family is theta(x) = min(x, R) over several radii
    plus a smoothly capped power x -> (x R / (x + R))^m1, all vanishing at
    the origin as the weak formulation requires.

    The residual measures time-quadrature and solver error only, so it
    needs a reasonable snapshot cadence.  Snapshots land on output records,
    so requesting a snapshot_every below the output stride has no effect;
    lower both together.
    """
    cfg = ts.config
    snaps = ts.snapshots
    if len(snaps) < 2:
        raise ValueError("weak-form check needs at least two snapshots")
    g = ts.grid
    j = cfg.trunc.resolve(g)
    if radii is None:
        radii = np.geomspace(g.x_min, j, 6)[1:-1]
    radii = np.asarray(radii, dtype=float)
    m1 = ts.constants.m1
    r_cap = float(radii[-1])
    thetas = [(lambda x, r=float(r): np.minimum(x, r)) for r in radii]
    thetas.append(lambda x: (x * r_cap / (x + r_cap)) ** m1)

    tol = 10.0 * cfg.rel_tol if tol is None else float(tol)
    sigma = _sigma_from_record(ts)
    denom = sigma if sigma > 0.0 else 1.0
    tables = build_tables(g, cfg.spec, cfg.trunc,
                          include_coag=cfg.coagulation,
                          include_frag=cfg.fragmentation)
    times = np.array([s.t for s in snaps])
    worst = -math.inf
    worst_t = float(times[0])
    for theta in thetas:
        th = np.asarray(theta(g.centers), dtype=float)
        observed = np.array([float(np.sum(th * s.values * g.widths)) for s in snaps])
        rates = np.empty_like(times)
        for i, s in enumerate(snaps):
            c_term, f_term, _ = weak_form_terms(s, cfg.spec, cfg.trunc, theta,
                                                tables=tables)
            rates[i] = c_term + f_term
        if times.size >= 3:
            integral = cumulative_simpson(rates, x=times, initial=0.0)
        else:
            integral = cumulative_trapezoid(rates, times, initial=0.0)
        predicted = observed[0] + integral
        res = np.abs(observed - predicted) / denom
        idx = int(np.argmax(res))
        if res[idx] > worst:
            worst = float(res[idx])
            worst_t = float(times[idx])
    return CheckVerdict("weak_residual", worst <= tol, tol - worst, worst_t)
