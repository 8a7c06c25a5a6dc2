"""Plain-text artifacts: experiment configs, time-series CSV, snapshots.

Everything is UTF-8 text.  Floats are written with %.17g, which is enough
significant digits that parsing an artifact back reproduces the identical
bit pattern; every writer goes through a temporary file in the target
directory followed by an atomic rename, so a reader never observes a
half-written artifact.

Two flavors of config file exist.  Experiment configs are user-authored and
carry the physics ([coefficients], [initial], [grid], [run], [experiment]);
all six physical parameters lam, alpha, nu, K0, a0 and rho are mandatory,
everything else has documented defaults.  Run echoes are written into a run
directory next to the CSV and snapshots and carry only what is needed to
rebuild the recorded TimeSeries ([coefficients] and [run]); the grid and the
densities live in the snapshot files themselves.

The CSV schema is fixed: extra tracked moment columns are an in-memory
feature and are not persisted, and the rejection counter is dropped (a
reloaded series reports zero rejections).
"""

from __future__ import annotations

import configparser
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coagfrag.grid import (
    SizeGrid,
    State,
    exponential_ic,
    gaussian_bump_ic,
    load_tabulated_ic,
    make_grid,
    powerlaw_cutoff_ic,
    project,
)
from coagfrag.integrator import RunConfig, TimeSeries
from coagfrag.kernel import CoefficientSpec, PowerLawDaughter, derived_constants, validate
from coagfrag.operators import TruncationSpec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "read_experiment",
    "atomic_write_text",
    "CSV_COLUMNS",
    "write_timeseries",
    "read_timeseries",
    "write_snapshot",
    "read_snapshot",
    "write_run",
    "load_run",
]

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("single", "j_sweep", "rho_sweep", "convergence_study")

CSV_COLUMNS = ("t", "M_m0", "M_m1", "M_1", "M_lambda", "M_2lambda-alpha",
               "log_mass", "lyapunov", "cum_trunc_loss", "dt", "steps")


class ConfigError(ValueError):
    """A config file is missing, malformed, or inconsistent."""


def _g(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str) -> Path:
    """Write text to path via a sibling temp file and an atomic rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------------------
# experiment configs


@dataclass(frozen=True)
class ExperimentConfig:
    """A run recipe plus what kind of experiment to drive with it.

    j_list and rho_list parametrize the sweep kinds (a rho sweep runs one
    threshold scan per rho), resolutions holds cells-per-decade values for a
    convergence study, and seed is reserved: the solver is deterministic, so
    nothing consumes it yet.
    """

    run: RunConfig
    kind: str = "single"
    out: Path = Path("runs")
    j_list: tuple = ()
    rho_list: tuple = ()
    resolutions: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for name, values in (("j_list", self.j_list), ("rho_list", self.rho_list),
                             ("resolutions", self.resolutions)):
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        if self.kind in ("j_sweep", "rho_sweep") and not self.j_list:
            raise ConfigError(f"{self.kind} needs a non-empty j_list")
        if self.kind == "rho_sweep" and not self.rho_list:
            raise ConfigError("rho_sweep needs a non-empty rho_list")
        if self.kind == "convergence_study" and not self.resolutions:
            raise ConfigError("convergence_study needs non-empty resolutions")
        object.__setattr__(self, "out", Path(self.out))


class _Section:
    """One config section with typed getters that name the offending key."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self._p = parser
        self._name = name

    def has(self, key: str) -> bool:
        return self._p.has_option(self._name, key)

    def raw(self, key: str, default=None):
        if not self.has(key):
            if default is not None:
                return default
            raise ConfigError(f"missing required key [{self._name}] {key}")
        return self._p.get(self._name, key)

    def floatv(self, key: str, default: float | None = None) -> float:
        raw = self.raw(key, default if default is None else _g(default))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{self._name}] {key} = {raw!r} is not a number") from None

    def intv(self, key: str, default: int | None = None) -> int:
        raw = self.raw(key, default if default is None else str(default))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{self._name}] {key} = {raw!r} is not an integer") from None

    def boolv(self, key: str, default: bool) -> bool:
        raw = str(self.raw(key, str(default))).strip().lower()
        if raw in ("true", "yes", "on", "1"):
            return True
        if raw in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"[{self._name}] {key} = {raw!r} is not a boolean")

    def float_list(self, key: str) -> tuple:
        if not self.has(key):
            return ()
        raw = self._p.get(self._name, key)
        try:
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"[{self._name}] {key} = {raw!r} is not a number list") from None

    def int_list(self, key: str) -> tuple:
        return tuple(int(v) if float(v).is_integer() else _bad_int(self._name, key, v)
                     for v in self.float_list(key))


def _bad_int(section, key, v):
    raise ConfigError(f"[{section}] {key} contains non-integer value {v}")


def _parse_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:   # missing file raises OSError
        try:
            parser.read_file(fh, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"could not parse {path}: {exc}") from None
    return parser


def _spec_from(parser: configparser.ConfigParser) -> CoefficientSpec:
    if not parser.has_section("coefficients"):
        raise ConfigError("missing required section [coefficients]")
    sec = _Section(parser, "coefficients")
    daughter = PowerLawDaughter(nu=sec.floatv("nu"))
    spec = CoefficientSpec(lam=sec.floatv("lam"), alpha=sec.floatv("alpha"),
                           K0=sec.floatv("K0"), a0=sec.floatv("a0"),
                           daughter=daughter)
    return validate(spec)


def _initial_from(parser, grid: SizeGrid) -> tuple[State, str]:
    if not parser.has_section("initial"):
        raise ConfigError("missing required section [initial]")
    sec = _Section(parser, "initial")
    kind = str(sec.raw("kind", "exponential")).strip().lower()
    if kind == "tabulated":
        # the table is the data; rho would be redundant, so it is not read
        fin, breakpoints = load_tabulated_ic(sec.raw("path"))
        return project(fin, grid, points=breakpoints), kind
    rho = sec.floatv("rho")
    if kind == "exponential":
        fin = exponential_ic(rho, theta=sec.floatv("theta", 1.0))
    elif kind == "gaussian":
        x0 = sec.floatv("x0", 1.0)
        width = sec.floatv("width", 0.0)
        fin = gaussian_bump_ic(rho, x0=x0, width=width if width > 0.0 else None)
    elif kind == "powerlaw":
        fin = powerlaw_cutoff_ic(rho, q=sec.floatv("q", 0.5),
                                 theta=sec.floatv("theta", 1.0))
    else:
        raise ConfigError(f"[initial] kind = {kind!r} is not a known shape")
    return project(fin, grid), kind


def _grid_from(parser) -> SizeGrid:
    sec = _Section(parser, "grid") if parser.has_section("grid") else None
    x_min = sec.floatv("x_min", 1e-4) if sec else 1e-4
    x_max = sec.floatv("x_max", 1e4) if sec else 1e4
    kind = str(sec.raw("kind", "geometric")).strip() if sec else "geometric"
    if sec and sec.has("n_cells"):
        n = sec.intv("n_cells")
    else:
        per_decade = sec.intv("cells_per_decade", 160) if sec else 160
        n = max(2, round(per_decade * math.log10(x_max / x_min)))
    try:
        return make_grid(x_min, x_max, n, kind=kind)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None


def _run_params(parser) -> dict:
    if not parser.has_section("run"):
        raise ConfigError("missing required section [run]")
    sec = _Section(parser, "run")
    params = {
        "t_end": sec.floatv("t_end"),
        "dt_init": sec.floatv("dt_init", 1e-6),
        "dt_min": sec.floatv("dt_min", 1e-12),
        "dt_max": sec.floatv("dt_max", 10.0),
        "rel_tol": sec.floatv("rel_tol", 1e-6),
        "abs_tol": sec.floatv("abs_tol", 1e-14),
        "output_stride": sec.floatv("output_stride", 1.0),
        "coagulation": sec.boolv("coagulation", True),
        "fragmentation": sec.boolv("fragmentation", True),
    }
    raw_j = str(sec.raw("j", "none")).strip().lower()
    try:
        params["trunc"] = (TruncationSpec.none() if raw_j in ("none", "")
                           else TruncationSpec.cutoff(float(raw_j)))
    except ValueError:
        raise ConfigError(f"[run] j = {raw_j!r} is not a usable threshold") from None
    if sec.has("snapshot_every"):
        params["snapshot_every"] = sec.floatv("snapshot_every")
    if sec.has("m0"):
        params["m0"] = sec.floatv("m0")
    if sec.has("m1"):
        params["m1"] = sec.floatv("m1")
    return params


def read_experiment(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a user experiment config; see the module docstring for layout.

    overrides maps dotted "section.key" names to replacement values (None
    removes the key) and is applied before interpretation; sweep drivers use
    it to pin one point of a parameter list.  Raises ConfigError on malformed
    content and OSError when the file is missing.  The coefficient block is
    validated, so impossible exponent combinations surface here as
    AssumptionViolation.
    """
    parser = _parse_ini(path)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} is not of the form section.key")
        if value is None:
            if parser.has_section(section):
                parser.remove_option(section, key)
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value if isinstance(value, str) else _g(value))
    spec = _spec_from(parser)
    grid = _grid_from(parser)
    initial, ic_kind = _initial_from(parser, grid)
    params = _run_params(parser)
    try:
        run_cfg = RunConfig(spec=spec, initial=initial, **params)
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None

    kind, out, j_list, rho_list, resolutions, seed = "single", Path("runs"), (), (), (), 0
    if parser.has_section("experiment"):
        sec = _Section(parser, "experiment")
        kind = str(sec.raw("kind", "single")).strip().lower()
        out = Path(str(sec.raw("out", "runs")))
        j_list = sec.float_list("j_list")
        rho_list = sec.float_list("rho_list")
        resolutions = sec.int_list("resolutions")
        seed = sec.intv("seed", 0)
    if kind == "rho_sweep" and ic_kind == "tabulated":
        raise ConfigError("rho_sweep needs an analytic initial shape, "
                          "a tabulated table has no rho to vary")
    return ExperimentConfig(run=run_cfg, kind=kind, out=out, j_list=j_list,
                            rho_list=rho_list, resolutions=resolutions, seed=seed)


# ---------------------------------------------------------------------------
# time-series CSV


def write_timeseries(path, ts: TimeSeries) -> Path:
    """Write the recorded columns as CSV with the documented fixed schema."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for i in range(ts.n_records):
        row = [ts.times[i], *ts.moments[i, :5], ts.log_mass[i], ts.lyapunov[i],
               ts.cum_loss[i], ts.dt[i]]
        buf.write(",".join(_g(v) for v in row) + f",{int(ts.steps[i])}\n")
    return atomic_write_text(path, buf.getvalue())


def read_timeseries(path) -> dict:
    """Read a time-series CSV back into a dict of column arrays."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if tuple(header.split(",")) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header {header!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"{len(CSV_COLUMNS)} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows)
    return {name: table[:, k] for k, name in enumerate(CSV_COLUMNS)}


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(path, state: State) -> Path:
    """Write one State as text: time, grid edges, then one density per cell."""
    lines = [f"t {_g(state.t)}",
             "edges " + " ".join(_g(e) for e in state.grid.edges)]
    lines.extend(_g(v) for v in state.values)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_snapshot(path) -> State:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    try:
        if not lines[0].startswith("t "):
            raise ValueError("first line must be the time")
        t = float(lines[0][2:])
        if not lines[1].startswith("edges "):
            raise ValueError("second line must hold the grid edges")
        edges = np.array([float(tok) for tok in lines[1][6:].split()])
        values = np.array([float(tok) for tok in lines[2:] if tok.strip()])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed snapshot ({exc})") from None
    centers = 0.5 * (edges[:-1] + edges[1:])
    grid = SizeGrid(edges=edges, centers=centers, widths=np.diff(edges))
    return State(grid, values, t)


# ---------------------------------------------------------------------------
# run directories


def _echo_config(ts: TimeSeries) -> str:
    cfg, spec, c = ts.config, ts.config.spec, ts.constants
    if not isinstance(spec.daughter, PowerLawDaughter):
        raise ValueError("run artifacts only persist power-law daughter profiles")
    j = cfg.trunc.j
    lines = [
        "# run artifact written by coagfrag; grid and densities live in the",
        "# snapshot files, this echo carries what load_run needs.",
        "",
        "[coefficients]",
        f"lam = {_g(spec.lam)}",
        f"alpha = {_g(spec.alpha)}",
        f"nu = {_g(spec.daughter.nu)}",
        f"K0 = {_g(spec.K0)}",
        f"a0 = {_g(spec.a0)}",
        "",
        "[run]",
        f"t_end = {_g(cfg.t_end)}",
        f"j = {'none' if j is None else _g(j)}",
        f"dt_init = {_g(cfg.dt_init)}",
        f"dt_min = {_g(cfg.dt_min)}",
        f"dt_max = {_g(cfg.dt_max)}",
        f"rel_tol = {_g(cfg.rel_tol)}",
        f"abs_tol = {_g(cfg.abs_tol)}",
        f"output_stride = {_g(cfg.output_stride)}",
        f"coagulation = {str(cfg.coagulation).lower()}",
        f"fragmentation = {str(cfg.fragmentation).lower()}",
        f"m0 = {_g(c.m0)}",
        f"m1 = {_g(c.m1)}",
    ]
    if cfg.snapshot_every is not None:
        lines.append(f"snapshot_every = {_g(cfg.snapshot_every)}")
    if cfg.extra_moments:
        log.warning("extra tracked moments %s are not persisted in artifacts",
                    cfg.extra_moments)
    return "\n".join(lines) + "\n"


def write_run(out_dir, ts: TimeSeries) -> Path:
    """Write a complete run directory: config echo, CSV, all snapshots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.cfg", _echo_config(ts))
    write_timeseries(out / "series.csv", ts)
    for k, snap in enumerate(ts.snapshots):
        write_snapshot(out / f"snapshot_{k:04d}.txt", snap)
    log.info("wrote run artifacts to %s (%d records, %d snapshots)",
             out, ts.n_records, len(ts.snapshots))
    return out


def load_run(run_dir) -> TimeSeries:
    """Rebuild a TimeSeries from a run directory written by write_run.

    The initial state is snapshot 0 and the grid is rebuilt bit-exactly from
    its edges.  The absolute-log mass column is recovered from the recorded
    entropy column by subtracting the moment term (exact up to rounding),
    and the rejection counter, which the schema does not persist, reloads
    as zero.
    """
    run_dir = Path(run_dir)
    parser = _parse_ini(run_dir / "config.cfg")
    spec = _spec_from(parser)
    params = _run_params(parser)
    m0 = params.pop("m0", None)
    m1 = params.pop("m1", None)
    snap_paths = sorted(run_dir.glob("snapshot_*.txt"))
    if not snap_paths:
        raise ValueError(f"{run_dir}: no snapshot files")
    snaps = tuple(read_snapshot(p) for p in snap_paths)
    cols = read_timeseries(run_dir / "series.csv")

    config = RunConfig(spec=spec, initial=snaps[0], m0=m0, m1=m1, **params)
    constants = derived_constants(spec, m0=m0, m1=m1)
    exps = config.tracked_exponents(constants)
    n = cols["t"].shape[0]
    moments = np.column_stack([cols["M_m0"], cols["M_m1"], cols["M_1"],
                               cols["M_lambda"], cols["M_2lambda-alpha"]])
    if len(exps) != 5:
        raise ValueError("run artifacts never carry extra moment columns")
    abslog = cols["lyapunov"] - cols["M_m1"] / (math.e * (1.0 - constants.m1))
    return TimeSeries(config=config, constants=constants, exponents=exps,
                      times=cols["t"], moments=moments,
                      log_mass=cols["log_mass"], abslog_mass=abslog,
                      lyapunov=cols["lyapunov"], cum_loss=cols["cum_trunc_loss"],
                      dt=cols["dt"], steps=cols["steps"],
                      rejected=np.zeros(n), snapshots=snaps)
