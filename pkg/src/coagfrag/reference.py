"""Independent oracles: closed-form solutions and a brute-force fine solver.

Everything here is meant to cross-check the main scheme, so it deliberately
shares as little machinery with it as possible: the closed forms are plain
formulas, and the fine solver runs the discrete operators on a uniform grid
with a fixed step, bypassing the adaptive controller entirely.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from coagfrag.grid import State, make_grid, regrid
from coagfrag.integrator import NonFiniteStateError, RunConfig, TimeSeries, _Recorder
from coagfrag.kernel import derived_constants
from coagfrag.operators import build_tables, eval_rates

__all__ = [
    "OracleSolution",
    "ResourceCapExceeded",
    "exact_pure_fragmentation",
    "pure_fragmentation_oracle",
    "multiplicative_M2",
    "fine_reference",
    "l1_overlap_distance",
]

log = logging.getLogger(__name__)


class ResourceCapExceeded(RuntimeError):
    """The requested reference run is bigger than the brute-force budget."""


@dataclasses.dataclass(frozen=True)
class OracleSolution:
    """A closed-form density with its closed-form moments.

    density(t, x) and moment(t, m) are plain callables; valid_for documents
    the parameter regime the formula solves, derivation how it was obtained.
    """

    density: object
    moment: object
    valid_for: str
    derivation: str


def exact_pure_fragmentation(a0: float, t, x):
    """Density (1+a0*t)^2 * exp(-(1+a0*t)*x) of the pure power-law breakup.

    Solves df/dt = -a0*x*f + 2*a0*int_x^inf f(y) dy (the lam=2, nu=0 case
    with coagulation switched off) started from exp(-x); total mass stays 1.
    """
    if a0 <= 0.0:
        raise ValueError("a0 must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("t must be non-negative")
    s = 1.0 + a0 * t
    out = s * s * np.exp(-s * np.asarray(x, dtype=float))
    return float(out) if np.isscalar(x) and t.ndim == 0 else out


def pure_fragmentation_oracle(a0: float = 1.0) -> OracleSolution:
    """Bundle the pure-fragmentation closed form with its moments.

    M_m(t) = Gamma(m+1) * (1+a0*t)^(1-m); the mass (m=1) is constant and the
    number M_0 grows linearly, one extra particle per breakup.
    """

    def density(t, x):
        return exact_pure_fragmentation(a0, t, x)

    def moment(t, m):
        s = 1.0 + a0 * float(t)
        return math.gamma(m + 1.0) * s ** (1.0 - m)

    return OracleSolution(
        density=density,
        moment=moment,
        valid_for="lam=2, nu=0, a0>0, coagulation off, f_in(x)=exp(-x), t>=0",
        derivation=(
            "with s(t)=1+a0*t, df/dt = a0*s*(2-s*x)*exp(-s*x) while "
            "-a0*x*f + 2*a0*int_x^inf f dy = a0*s*(2-s*x)*exp(-s*x); "
            "uniform daughters of a(y)=a0*y breakup return 2*a0 per unit size"
        ),
    )


def multiplicative_M2(K0: float, M2_0: float, t):
    """Second moment M2_0/(1 - 2*K0*M2_0*t) of the product-kernel gelation.

    The kernel with lam=2, alpha=1 is K = 2*K0*x*y, for which the second
    moment closes: dM2/dt = 2*K0*M2^2.  Valid strictly before the blow-up
    time 1/(2*K0*M2_0).
    """
    if K0 <= 0.0 or M2_0 <= 0.0:
        raise ValueError("K0 and M2_0 must be positive")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("t must be non-negative")
    denom = 1.0 - 2.0 * K0 * M2_0 * t_arr
    if np.any(denom <= 0.0):
        raise ValueError(f"t must stay below the blow-up time {1.0/(2.0*K0*M2_0)}")
    out = M2_0 / denom
    return float(out) if t_arr.ndim == 0 else out


def l1_overlap_distance(a: State, b: State) -> float:
    """Relative L1 distance after conservative projection onto a's grid.

    b is treated as the reference: the distance is normalized by its mass of
    absolute values on the common grid.
    """
    bc = b if b.grid is a.grid else regrid(b, a.grid)
    num = float(np.sum(np.abs(a.values - bc.values) * a.grid.widths))
    den = float(np.sum(np.abs(bc.values) * a.grid.widths))
    if den == 0.0:
        return num
    return num / den


def fine_reference(config: RunConfig, resolution_factor: int = 4,
                   dt: float | None = None, cell_cap: int = 2000,
                   step_cap: int = 2_000_000) -> TimeSeries:
    """Fixed-step Heun run of the same operators on a finer uniform grid.

    The reference grid spans the same sizes with resolution_factor times the
    cell count at uniform spacing, and the initial state is transferred
    conservatively.  dt defaults to a tenth of the initial stability limit
    and never adapts, so the output is independent of the main controller;
    pass dt explicitly on strongly coagulating problems (a fixed step cannot
    anticipate rate growth) or for Richardson checks.  Problems beyond
    cell_cap cells or step_cap steps are refused.
    """
    src_grid = config.initial.grid
    n_ref = resolution_factor * src_grid.n
    if n_ref > cell_cap:
        raise ResourceCapExceeded(
            f"reference grid needs {n_ref} cells, cap is {cell_cap}")
    grid = make_grid(src_grid.x_min, src_grid.x_max, n_ref, kind="uniform")
    init = regrid(config.initial, grid)
    tables = build_tables(grid, config.spec, config.trunc,
                          include_coag=config.coagulation,
                          include_frag=config.fragmentation)

    f = np.array(init.values, dtype=float)
    t0 = t = float(init.t)
    t_end = float(config.t_end)
    stride = float(config.output_stride)

    k1, _, rate = eval_rates(f, tables)
    if dt is None:
        top = float(rate.max()) if rate.size else 0.0
        dt = 0.1 / top if top > 0.0 else stride
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_end > t0 and (t_end - t0) / dt > step_cap:
        raise ResourceCapExceeded(
            f"{math.ceil((t_end - t0) / dt)} fixed steps exceed the cap {step_cap}")

    ref_config = dataclasses.replace(config, initial=init, dt_init=dt,
                                     dt_min=dt, dt_max=dt)
    constants = derived_constants(config.spec, m0=config.m0, m1=config.m1)
    rec = _Recorder(ref_config, constants, ref_config.tracked_exponents(constants))

    start = State(grid, f.copy(), t)
    rec.record(start, 0.0, 0.0, 0, 0)
    rec.snapshots.append(start)
    if t_end == t0:
        return rec.freeze()

    steps = 0
    cum = comp = 0.0
    k_out = 1
    next_out = min(t0 + stride, t_end)
    if next_out > t_end - 1e-9 * stride:
        next_out = t_end

    while t < t_end:
        k1, led1, _ = eval_rates(f, tables)
        if not np.all(np.isfinite(k1)):
            raise NonFiniteStateError(t, State(grid, f.copy(), t))
        remaining = next_out - t
        clipped = dt >= remaining
        h = remaining if clipped else dt
        f1 = f + h * k1
        k2, led2, _ = eval_rates(f1, tables)
        f2 = f + (0.5 * h) * (k1 + k2)
        if not np.all(np.isfinite(f2)) or np.any(f1 < 0.0) or np.any(f2 < 0.0):
            raise ValueError(
                f"fixed step dt={dt:.3e} is too large for stability at t={t:.6g}")
        inc = (0.5 * h) * (led1.coag_mass_flux_out + led2.coag_mass_flux_out)
        y = inc - comp
        s = cum + y
        comp = (s - cum) - y
        cum = s
        f = f2
        steps += 1
        t_new = next_out if clipped else t + h
        if t_new < next_out:
            t = t_new
            continue
        t = next_out
        st = State(grid, f.copy(), t)
        rec.record(st, cum, h, steps, 0)
        if t >= t_end:
            rec.snapshots.append(st)
            break
        k_out += 1
        next_out = t0 + k_out * stride
        if next_out > t_end - 1e-9 * stride:
            next_out = t_end

    return rec.freeze()
