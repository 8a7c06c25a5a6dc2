"""Time integration of the truncated coagulation-fragmentation system.

The truncated system is a finite set of ODEs for the cell densities.  It is
advanced with an explicit Heun pair: the Euler predictor doubles as the
embedded first-order solution, and the predictor/corrector gap drives a PI
step-size controller.  A step is accepted only when both stages stay
non-negative; otherwise dt is halved and the step retried.  Nothing is ever
clipped, so the mass ledgers of the operators module carry through time
integration exactly, up to the trapezoid quadrature of the boundary flux.

Explicit stepping is viable because the fragmentation rate a(x) ~ x^(lam-1)
is largest at the truncation threshold and simply bounds dt from above; a
stiffness cap keeps the controller from probing that boundary by rejection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from coagfrag.grid import SizeGrid, State, moments
from coagfrag.kernel import CoefficientSpec, DerivedConstants, derived_constants
from coagfrag.operators import StepLedger, TruncationSpec, build_tables, eval_rates

__all__ = [
    "RunConfig",
    "TimeSeries",
    "StepTooSmall",
    "NonFiniteStateError",
    "step",
    "run",
]

log = logging.getLogger(__name__)

# Controller constants.  The embedded estimate is first order (the Euler
# stage), so its local error scales like dt^2 and the deadbeat exponent is
# 1/2; the PI gains split it 0.3/0.4 in the usual way.
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 2.5
_KI = 0.3 / 2.0
_KP = 0.4 / 2.0
_ERR_FLOOR = 1e-4


class StepTooSmall(RuntimeError):
    """A rejected step would need dt below dt_min."""

    def __init__(self, t: float, dt: float, dt_min: float):
        super().__init__(
            f"rejected step needs dt={dt:.3e} < dt_min={dt_min:.3e} at t={t:.6g}")
        self.t = t
        self.dt = dt
        self.dt_min = dt_min


class NonFiniteStateError(RuntimeError):
    """The right-hand side blew up; carries the last finite state."""

    def __init__(self, t: float, snapshot: State):
        super().__init__(f"non-finite rates at t={t:.6g}")
        self.t = t
        self.snapshot = snapshot


@dataclass(frozen=True)
class RunConfig:
    """Everything one integration needs; identical configs give identical runs.

    t_end is absolute (the initial state carries its own time, normally 0).
    m0/m1 default to the spec's standard diagnostic exponents; extra_moments
    adds columns to the recorded moment table.  snapshot_every=None keeps
    snapshots on a sparse doubling schedule, a positive value makes them
    (roughly) periodic; the initial and final states are always kept.
    """

    spec: CoefficientSpec
    initial: State
    t_end: float
    trunc: TruncationSpec = TruncationSpec.none()
    dt_init: float = 1e-6
    dt_min: float = 1e-12
    dt_max: float = 10.0
    rel_tol: float = 1e-6
    abs_tol: float = 1e-14
    output_stride: float = 1.0
    extra_moments: tuple = ()
    m0: float | None = None
    m1: float | None = None
    coagulation: bool = True
    fragmentation: bool = True
    snapshot_every: float | None = None

    def __post_init__(self):
        if not (0.0 < self.dt_min <= self.dt_init <= self.dt_max < math.inf):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("tolerances must be positive")
        if not np.isfinite(self.t_end) or self.t_end < self.initial.t:
            raise ValueError("t_end must be finite and >= the initial time")
        if not (np.isfinite(self.output_stride) and self.output_stride > 0.0):
            raise ValueError("output_stride must be positive")
        if self.snapshot_every is not None and not self.snapshot_every > 0.0:
            raise ValueError("snapshot_every must be positive when given")
        extras = tuple(float(m) for m in self.extra_moments)
        if not all(np.isfinite(m) for m in extras):
            raise ValueError("extra moment exponents must be finite")
        object.__setattr__(self, "extra_moments", extras)

    def tracked_exponents(self, constants: DerivedConstants) -> tuple:
        exps = [constants.m0, constants.m1, 1.0, self.spec.lam,
                2.0 * self.spec.lam - self.spec.alpha]
        for m in self.extra_moments:
            if m not in exps:
                exps.append(m)
        return tuple(exps)


@dataclass(frozen=True)
class TimeSeries:
    """Record-per-output-stride trace of one run.

    moments has one column per entry of exponents, in order (m0, m1, 1, lam,
    2*lam-alpha, extras).  lyapunov is sum x|ln x| f dx + M_m1/(e(1-m1)).
    cum_loss is the time-integrated truncation boundary flux, accumulated by
    the stepper itself (trapezoid over the two Heun stages), so the discrete
    mass identity reads M_1(t) - M_1(0) + cum_loss ~ 0.  dt is the size of
    the last accepted step before the record; steps/rejected are cumulative.
    """

    config: RunConfig
    constants: DerivedConstants
    exponents: tuple
    times: np.ndarray
    moments: np.ndarray
    log_mass: np.ndarray
    abslog_mass: np.ndarray
    lyapunov: np.ndarray
    cum_loss: np.ndarray
    dt: np.ndarray
    steps: np.ndarray
    rejected: np.ndarray
    snapshots: tuple = ()

    def __post_init__(self):
        n = self.times.shape[0]
        if self.moments.shape != (n, len(self.exponents)):
            raise ValueError("moment table shape mismatch")
        for name in ("log_mass", "abslog_mass", "lyapunov", "cum_loss",
                     "dt", "steps", "rejected"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has wrong length")
        if n == 0:
            raise ValueError("a run records at least its initial state")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("record times must be strictly increasing")
        if np.any(np.diff(self.cum_loss) < 0.0):
            raise ValueError("cumulative truncation loss must be non-decreasing")
        for name in ("times", "moments", "log_mass", "abslog_mass", "lyapunov",
                     "cum_loss", "dt", "steps", "rejected"):
            getattr(self, name).setflags(write=False)

    @property
    def grid(self) -> SizeGrid:
        return self.config.initial.grid

    @property
    def n_records(self) -> int:
        return int(self.times.shape[0])

    @property
    def final_state(self) -> State:
        return self.snapshots[-1]

    def moment(self, m: float) -> np.ndarray:
        """Column of M_m values; m must be one of the tracked exponents."""
        m = float(m)
        for i, e in enumerate(self.exponents):
            if e == m or math.isclose(e, m, rel_tol=1e-12):
                return self.moments[:, i]
        raise KeyError(f"moment exponent {m} was not tracked")

    @property
    def mass(self) -> np.ndarray:
        return self.moment(1.0)


def step(state: State, spec: CoefficientSpec, trunc: TruncationSpec, dt: float,
         dt_min: float = 1e-14, tables=None,
         coagulation: bool = True, fragmentation: bool = True):
    """One accepted Heun step; halves dt until both stages are non-negative.

    Returns (state', ledger) where the ledger entries are time-integrated
    mass amounts for the dt actually used (state'.t - state.t).  Raises
    StepTooSmall once halving would push dt below dt_min.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if tables is None:
        tables = build_tables(state.grid, spec, trunc,
                              include_coag=coagulation,
                              include_frag=fragmentation)
    f = state.values
    k1, led1, _ = eval_rates(f, tables)
    if not np.all(np.isfinite(k1)):
        raise NonFiniteStateError(state.t, state)
    while True:
        f1 = f + dt * k1
        if np.all(np.isfinite(f1)) and not np.any(f1 < 0.0):
            k2, led2, _ = eval_rates(f1, tables)
            f2 = f + (0.5 * dt) * (k1 + k2)
            if np.all(np.isfinite(f2)) and not np.any(f2 < 0.0):
                ledger = (led1 + led2).scaled(0.5 * dt)
                return State(state.grid, f2, state.t + dt), ledger
        dt = 0.5 * dt
        if dt < dt_min:
            raise StepTooSmall(state.t, dt, dt_min)


class _Recorder:
    """Accumulates per-stride records and freezes them into a TimeSeries."""

    def __init__(self, config, constants, exponents):
        self.config = config
        self.constants = constants
        self.exponents = exponents
        self.inv_e1m = 1.0 / (math.e * (1.0 - constants.m1))
        self.rows = []
        self.snapshots = []

    def record(self, st: State, cum_loss: float, dt: float, steps: int,
               rejected: int):
        rep = moments(st, self.exponents)
        mom = [rep.of[float(m)] for m in self.exponents]
        lyap = rep.abslog_mass + self.inv_e1m * rep.of[float(self.constants.m1)]
        self.rows.append((st.t, mom, rep.log_mass, rep.abslog_mass, lyap,
                          cum_loss, dt, steps, rejected))

    def freeze(self) -> TimeSeries:
        cols = list(zip(*self.rows))
        return TimeSeries(
            config=self.config, constants=self.constants,
            exponents=self.exponents,
            times=np.array(cols[0], dtype=float),
            moments=np.array(cols[1], dtype=float),
            log_mass=np.array(cols[2], dtype=float),
            abslog_mass=np.array(cols[3], dtype=float),
            lyapunov=np.array(cols[4], dtype=float),
            cum_loss=np.array(cols[5], dtype=float),
            dt=np.array(cols[6], dtype=float),
            steps=np.array(cols[7], dtype=np.int64),
            rejected=np.array(cols[8], dtype=np.int64),
            snapshots=tuple(self.snapshots),
        )


def run(config: RunConfig) -> TimeSeries:
    """Integrate to t_end, recording moments, Lyapunov value and flux ledger.

    Deterministic: the step sequence is a pure function of the config.  The
    controller drives the embedded Euler/Heun error to the tolerances, dt is
    additionally capped by 0.5/max(loss rate) over cells above abs_tol, and
    output times are hit exactly by clipping dt to the stride boundary.
    """
    spec = config.spec
    grid = config.initial.grid
    constants = derived_constants(spec, m0=config.m0, m1=config.m1)
    exps = config.tracked_exponents(constants)
    tables = build_tables(grid, spec, config.trunc,
                          include_coag=config.coagulation,
                          include_frag=config.fragmentation)

    rec = _Recorder(config, constants, exps)
    f = np.array(config.initial.values, dtype=float)
    t0 = t = float(config.initial.t)
    t_end = float(config.t_end)
    stride = float(config.output_stride)

    steps = rejected = 0
    cum = comp = 0.0            # Kahan pair for the flux integral
    last_dt = 0.0

    start = State(grid, f.copy(), t)
    rec.record(start, 0.0, 0.0, 0, 0)
    rec.snapshots.append(start)
    if t_end == t0:
        return rec.freeze()

    snap_every = config.snapshot_every
    next_snap = t0 + (stride if snap_every is None else snap_every)

    k_out = 1
    next_out = min(t0 + stride, t_end)
    if next_out > t_end - 1e-9 * stride:
        next_out = t_end

    dt = float(config.dt_init)
    err_prev = _ERR_FLOOR
    growth_cap = _MAX_FACTOR

    while t < t_end:
        k1, led1, rate1 = eval_rates(f, tables)
        if not np.all(np.isfinite(k1)):
            raise NonFiniteStateError(t, State(grid, f.copy(), t))
        live = rate1[f > config.abs_tol]
        cap = math.inf
        if live.size and live.max() > 0.0:
            cap = 0.5 / live.max()

        # attempt loop: dt shrinks on rejection, k1 and the ledger are reused
        while True:
            dt_base = min(dt, cap)
            remaining = next_out - t
            clipped = dt_base >= remaining
            dt_try = remaining if clipped else dt_base

            err = None
            f1 = f + dt_try * k1
            if np.all(np.isfinite(f1)) and not np.any(f1 < 0.0):
                k2, led2, _ = eval_rates(f1, tables)
                f2 = f + (0.5 * dt_try) * (k1 + k2)
                if np.all(np.isfinite(f2)) and not np.any(f2 < 0.0):
                    scale = config.abs_tol + config.rel_tol * np.maximum(
                        np.abs(f), np.abs(f2))
                    err = math.sqrt(float(np.mean(((f2 - f1) / scale) ** 2)))
                    if err <= 1.0:
                        break
            rejected += 1
            growth_cap = 1.0
            if err is None:
                dt_new = 0.5 * dt_try
            else:
                dt_new = dt_try * max(_MIN_FACTOR, _SAFETY * err ** -0.5)
            if dt_new < config.dt_min:
                raise StepTooSmall(t, dt_new, config.dt_min)
            dt = dt_new

        e = max(err, _ERR_FLOOR)
        factor = _SAFETY * e ** -(_KI + _KP) * err_prev ** _KP
        factor = min(growth_cap, _MAX_FACTOR, max(_MIN_FACTOR, factor))
        err_prev = e
        growth_cap = _MAX_FACTOR
        dt_next = dt_try * factor
        if clipped:
            # a stride landing says nothing about stability; keep the pace
            dt_next = max(dt_next, dt_base)
        dt = min(config.dt_max, max(config.dt_min, dt_next))

        inc = (0.5 * dt_try) * (led1.coag_mass_flux_out + led2.coag_mass_flux_out)
        y = inc - comp
        s = cum + y
        comp = (s - cum) - y
        cum = s

        f = f2
        steps += 1
        last_dt = dt_try
        t_new = next_out if clipped else t + dt_try
        if t_new < next_out:
            t = t_new
            continue

        # landed on an output point (clipped, or rounded up onto it)
        t = next_out
        st = State(grid, f.copy(), t)
        rec.record(st, cum, last_dt, steps, rejected)
        if t >= t_end:
            rec.snapshots.append(st)
            break
        if t >= next_snap - 1e-9 * stride:
            rec.snapshots.append(st)
            if snap_every is None:
                next_snap = t0 + 2.0 * (t - t0)
            else:
                next_snap = t + snap_every
        k_out += 1
        next_out = t0 + k_out * stride
        if next_out > t_end - 1e-9 * stride:
            next_out = t_end

    log.info("run finished at t=%g: %d steps, %d rejected, %d records",
             t, steps, rejected, len(rec.rows))
    return rec.freeze()
