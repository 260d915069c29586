"""Experiment runner, table catalog and convergence studies.

Outputs are plain CSV (comma separated, header row, no quoting) written
atomically: each file is assembled under a temporary name and renamed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np

from .config import ExperimentSpec
from .energy import GinzburgLandau1D, LandauBrazovskii2D
from .fields import Grid, Metric, mass, save_field
from .imf import AuxProblem, IMFOptions, InnerStop, force_norm, problem_kind, run_cycle, run_imf
from .initial import InitialCondition, make_initial
from .minmode import EigOptions, EigenSolverError, min_mode, spectrum_head
from .schemes import StepperConfig, make_stepper, relax

Array = np.ndarray


# -- output helpers -------------------------------------------------------------------


def fmt(x) -> str:
    """CSV cell text; floats keep full precision so reruns compare byte for byte."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")
    os.replace(tmp, path)
    return path


class _TraceWriter:
    header = ["cycle", "iteration", "aux_value", "aux_grad_norm", "energy", "grad_norm"]

    def __init__(self, path: Path | None, echo: TextIO | None = None):
        self.path = path
        self.echo = echo
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = path.with_name(path.name + ".tmp")
            self.fh = open(self.tmp, "w")
            self.fh.write(",".join(self.header) + "\n")

    def __call__(self, cycle, n, aux, aux_err, energy, err):
        if self.fh is not None:
            self.fh.write(",".join(fmt(x) for x in (cycle, n, float(aux), float(aux_err), float(energy), float(err))) + "\n")
        if self.echo is not None and n == 0:
            print(f"cycle {cycle}: F = {energy:.10g}, |grad F| = {err:.3e}", file=self.echo)

    def close(self):
        if self.fh is not None:
            self.fh.close()
            os.replace(self.tmp, self.path)
            self.fh = None


# -- single experiment ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    grid: Grid
    phi: Array
    energy: float
    grad_norm: float
    spectrum: list[float]
    cycles: int
    total_iterations: int
    converged: bool
    diverged: bool
    mass: float
    errors: list[float] = field(default_factory=list)

    def row(self) -> list:
        lam = (self.spectrum + [math.nan] * 3)[:3]
        return [
            self.spec.name,
            self.spec.mode,
            self.energy,
            self.grad_norm,
            *lam,
            self.cycles,
            self.total_iterations,
            self.converged,
            self.diverged,
            self.mass,
        ]


RESULT_HEADER = [
    "name",
    "mode",
    "energy",
    "grad_norm",
    "lambda_1",
    "lambda_2",
    "lambda_3",
    "cycles",
    "total_iterations",
    "converged",
    "diverged",
    "mass",
]


def initial_field(spec: ExperimentSpec, grid: Grid) -> Array:
    return make_initial(spec.init, grid)


def run_experiment(
    spec: ExperimentSpec,
    out: str | Path | None = None,
    *,
    echo: TextIO | None = None,
    spectrum_size: int = 3,
) -> ExperimentResult:
    """Run a relaxation or saddle search and write its artifacts to ``out``.

    Divergence is reported through ``result.diverged``; it is not raised.
    """
    spec.validate()
    out = Path(out if out is not None else spec.out or spec.name)
    model, grid = spec.build_model(), spec.build_grid()
    model.check_grid(grid)
    metric = spec.metric_kind
    f0 = initial_field(spec, grid)
    tracer = _TraceWriter(out / "trace.csv", echo)
    try:
        if spec.mode == "relax":
            cfg = StepperConfig(spec.dt, spec.scheme, problem_kind(model, metric), relaxation=True)
            met = Metric(metric, grid)

            def cb(n, phi, err):
                e = model.energy(grid, phi)
                tracer(0, n, e, err, e, err)

            r = relax(model, grid, f0, cfg, tolerance=spec.relax_tolerance, max_iterations=spec.max_inner_iterations, callback=cb)
            phi, converged, diverged = r.phi, r.converged, r.diverged
            cycles, total, errors = 0, r.iterations, []
        else:
            r = run_imf(model, grid, f0, spec.imf_options(), trace=tracer)
            phi, converged, diverged = r.phi, r.converged, r.diverged
            cycles, total, errors = r.cycles, r.total_iterations, r.errors
    finally:
        tracer.close()

    met = Metric(metric, grid)
    if diverged:
        energy, err, spectrum = math.nan, math.inf, []
    else:
        energy, err = model.energy(grid, phi), force_norm(model, met, phi)
        spectrum = [float(x) for x in spectrum_head(model, grid, phi, spectrum_size, metric)] if spectrum_size else []
    result = ExperimentResult(
        spec=spec,
        grid=grid,
        phi=phi,
        energy=energy,
        grad_norm=err,
        spectrum=spectrum,
        cycles=cycles,
        total_iterations=total,
        converged=converged,
        diverged=diverged,
        mass=float(mass(grid, phi)) if not diverged else math.nan,
        errors=list(errors),
    )
    write_csv(out / "result.csv", RESULT_HEADER, [result.row()])
    write_csv(out / "spectrum.csv", ["index", "eigenvalue"], [(i + 1, lam) for i, lam in enumerate(spectrum)])
    if not diverged:
        tmp = out / "final.field.tmp"
        save_field(tmp, grid, phi)
        os.replace(tmp, out / "final.field")
    return result


def eigen_report(spec: ExperimentSpec, out: str | Path | None = None, k: int = 3) -> list[float]:
    """Spectrum head of the configured initial field, written to ``spectrum.csv``."""
    spec.validate()
    model, grid = spec.build_model(), spec.build_grid()
    f0 = initial_field(spec, grid)
    lam = [float(x) for x in spectrum_head(model, grid, f0, k, spec.metric_kind)]
    if out is not None:
        write_csv(Path(out) / "spectrum.csv", ["index", "eigenvalue"], [(i + 1, v) for i, v in enumerate(lam)])
    return lam


# -- named setups ---------------------------------------------------------------------

CH_KAPPA = 0.04
CH_MASS = 0.6

CH_NEUMANN_INIT = InitialCondition("tanh_layer", mass=CH_MASS, amplitude=0.3, width=0.15, center=0.0)
CH_PERIODIC_INIT = InitialCondition("tanh_layer", mass=CH_MASS, amplitude=-0.9, width=0.03, center=0.5, half_length=0.08)
LB_LAMELLAR = InitialCondition("lamellar", wavevector=(0, 4), amplitude=0.5)
LB_CYLINDER = InitialCondition("cylinder_seed", amplitude=0.5)
LB_MIX = 0.35


@dataclass(frozen=True)
class Setup:
    model: object
    grid: Grid
    metric: str
    init: Callable[[], Array]


def _ac(bc: str, kind: str) -> Setup:
    grid = Grid.line(200, 1.0, bc)
    return Setup(GinzburgLandau1D(kappa=0.01), grid, "l2", lambda: make_initial(InitialCondition(kind), grid))


def _ch(bc: str) -> Setup:
    grid = Grid.line(200, 1.0, bc)
    ic = CH_NEUMANN_INIT if bc == "neumann" else CH_PERIODIC_INIT
    return Setup(GinzburgLandau1D(kappa=CH_KAPPA), grid, "hminus1", lambda: make_initial(ic, grid))


def lb_grid() -> Grid:
    return Grid.rect(100, 100, 16 * math.pi / math.sqrt(3), 8 * math.pi)


def lb_stable_state(which: str, tolerance: float = 1e-8):
    """Relax the lamellar or cylinder seed with the convex-splitting flow (dt = 2)."""
    model, grid = LandauBrazovskii2D(), lb_grid()
    ic = {"lamellar": LB_LAMELLAR, "cylinder": LB_CYLINDER}[which]
    cfg = StepperConfig(2.0, "cs", "lb_hm1", relaxation=True)
    return relax(model, grid, make_initial(ic, grid), cfg, tolerance=tolerance)


_LB_CACHE: dict[str, Array] = {}


def lb_near_saddle() -> Array:
    """Starting field for the 2-D tables.

    The relaxed lamellar and cylinder states are mixed ``0.65 : 0.35`` (a
    point just on the cylinder side of the basin boundary) and one IMF cycle
    (CS, dt = 10, 1000 inner steps) is applied.  The result has
    ``|grad F|_{H^-1}`` of about 2e-2 and one negative eigenvalue.
    """
    if "near_saddle" not in _LB_CACHE:
        model, grid = LandauBrazovskii2D(), lb_grid()
        lam = lb_stable_state("lamellar").phi
        cyl = lb_stable_state("cylinder").phi
        mix = (1 - LB_MIX) * lam + LB_MIX * cyl
        opts = IMFOptions(metric="hminus1", scheme="cs", dt=10.0, stop=InnerStop(cap=1000), outer_tolerance=1e-12, max_cycles=1)
        _LB_CACHE["near_saddle"] = run_imf(model, grid, mix, opts).phi
    return _LB_CACHE["near_saddle"].copy()


def _lb() -> Setup:
    return Setup(LandauBrazovskii2D(), lb_grid(), "hminus1", lb_near_saddle)


TABLE_SETUPS: dict[str, Callable[[], Setup]] = {
    "T1a": lambda: _ac("neumann", "cos_pi_x"),
    "T1b": lambda: _ac("periodic", "sin_2pi_x"),
    "T2a": lambda: _ac("neumann", "cos_pi_x"),
    "T2b": lambda: _ac("periodic", "sin_2pi_x"),
    "T3a": lambda: _ch("neumann"),
    "T3b": lambda: _ch("periodic"),
    "T4a": lambda: _ch("neumann"),
    "T4b": lambda: _ch("periodic"),
    "T5a": _lb,
    "T5b": _lb,
}
TABLE_IDS = tuple(TABLE_SETUPS)


def reference_data() -> dict:
    text = resources.files("saddlesplit").joinpath("data/reference.json").read_text()
    return json.loads(text)


# -- table reproduction ---------------------------------------------------------------

DIVERGED = "diverged"
CAPPED = "not_reached"
TABLE_HEADER = ["table", "source", "quantity", "dt", "column", "scheme", "measured", "reference", "status"]


@dataclass
class Cell:
    table: str
    source: str
    quantity: str
    dt: float
    column: float
    scheme: str
    measured: object
    reference: object
    status: str = ""

    def row(self) -> list:
        return [self.table, self.source, self.quantity, self.dt, self.column, self.scheme, self.measured, self.reference, self.status]


def band(reference: float, quantity: str, scheme: str) -> float:
    """Allowed absolute deviation for a finite reference value."""
    if quantity == "cycles":
        return 1.0 if reference <= 6 else 2.0
    if scheme == "cs" and reference <= 30:
        return max(5.0, 0.1 * reference)
    return 0.1 * reference


def within_band(measured, reference, quantity: str, scheme: str) -> bool:
    if reference == DIVERGED:
        return measured == DIVERGED
    if not isinstance(measured, (int, np.integer)):
        return False
    return abs(measured - reference) <= band(reference, quantity, scheme) + 1e-9


def cell_budget(reference, quantity: str, scheme: str, finite_refs: list[float]) -> int:
    """Largest count worth running for a cell: anything beyond it fails the band."""
    if reference == DIVERGED:
        ref = max(finite_refs) if finite_refs else 100
        return int(math.ceil(ref + band(ref, quantity, "ncs"))) + 1
    return int(math.floor(reference + band(reference, quantity, scheme) + 1e-9)) + 1


def _first_cycle(setup: Setup, phi0: Array, eig_tolerance: float = 1e-9):
    pair = min_mode(setup.model, setup.grid, phi0, EigOptions(metric=setup.metric, tolerance=eig_tolerance))
    return AuxProblem(setup.model, setup.grid, phi0, pair.vector, Metric(setup.metric, setup.grid))


def inner_counts(p: AuxProblem, scheme: str, dt: float, tolerances: list[float], budget: int) -> list:
    """First-cycle step counts to reach each tolerance, from one inner run."""
    tol_sorted = sorted(tolerances, reverse=True)
    hits: dict[float, int] = {}

    def trace(cycle, n, L, err, F, ferr):
        for t in tol_sorted:
            if t not in hits and err <= t:
                hits[t] = n

    cfg = StepperConfig(dt, scheme, problem_kind(p.model, p.metric.kind))
    stop = InnerStop(tolerance=min(tolerances), max_iterations=budget)
    _, rep = run_cycle(p, make_stepper(cfg, p), stop, trace=trace)
    out = []
    for t in tolerances:
        if t in hits:
            out.append(hits[t])
        elif rep.diverged:
            out.append(DIVERGED)
        else:
            out.append(CAPPED)
    return out


def cycle_count(setup: Setup, phi0: Array, scheme: str, dt: float, cap: int, outer_tolerance: float, budget: int):
    opts = IMFOptions(
        metric=setup.metric, scheme=scheme, dt=dt, stop=InnerStop(cap=cap), outer_tolerance=outer_tolerance, max_cycles=budget
    )
    try:
        r = run_imf(setup.model, setup.grid, phi0, opts)
    except EigenSolverError:
        return CAPPED
    if r.converged:
        return r.cycles
    return DIVERGED if r.diverged else CAPPED


def classify(cells: list[Cell]) -> None:
    """Set ``status`` to pass / soft / fail.

    A finite cell outside its band is ``soft`` when the trend still holds:
    the count does not increase with dt (within the same scheme and column).
    """
    for c in cells:
        c.status = "pass" if within_band(c.measured, c.reference, c.quantity, c.scheme) else "fail"
    for c in cells:
        if c.status != "fail" or c.reference == DIVERGED or not isinstance(c.measured, (int, np.integer)):
            continue
        peers = sorted((d for d in cells if d.scheme == c.scheme and d.column == c.column), key=lambda d: d.dt)
        i = peers.index(c)
        ok = True
        if i > 0:
            prev = peers[i - 1].measured
            ok &= isinstance(prev, (int, np.integer)) and c.measured <= prev
        if i + 1 < len(peers):
            nxt = peers[i + 1].measured
            ok &= nxt == DIVERGED or nxt == CAPPED or (isinstance(nxt, (int, np.integer)) and c.measured >= nxt)
        c.status = "soft" if ok else "fail"


def reproduce_table(
    table_id: str,
    out: str | Path | None = None,
    *,
    budget: str = "band",
    max_cycles: int = 500,
    max_iterations: int = 200_000,
    progress: TextIO | None = None,
) -> list[Cell]:
    """Run every cell of a table and compare with the embedded reference.

    ``budget="band"`` stops each run once its count is past the upper edge
    of the acceptance band (the cell fails either way); ``budget="full"``
    uses ``max_cycles`` / ``max_iterations``.
    """
    if table_id not in TABLE_SETUPS:
        raise KeyError(f"unknown table {table_id!r}; expected one of {', '.join(TABLE_IDS)}")
    ref = reference_data()["tables"][table_id]
    setup = TABLE_SETUPS[table_id]()
    phi0 = setup.init()
    quantity, columns, dts = ref["quantity"], ref["columns"], ref["dts"]
    cells: list[Cell] = []
    p = _first_cycle(setup, phi0) if quantity == "iterations" else None

    for scheme in ("cs", "ncs"):
        for i, dt in enumerate(dts):
            refs = ref[scheme][i]
            finite = [r for row in ref[scheme] for r in row if r != DIVERGED] + [r for row in ref["cs"] for r in row if r != DIVERGED]
            if quantity == "iterations":
                if budget == "band":
                    b = max(cell_budget(r, quantity, scheme, finite) for r in refs)
                else:
                    b = max_iterations
                measured = inner_counts(p, scheme, dt, columns, b)
            else:
                measured = []
                for cap, r in zip(columns, refs):
                    b = cell_budget(r, quantity, scheme, finite) if budget == "band" else max_cycles
                    measured.append(cycle_count(setup, phi0, scheme, dt, int(cap), ref["outer_tolerance"], b))
            for col, r, m in zip(columns, refs, measured):
                cells.append(Cell(table_id, ref["source"], quantity, dt, col, scheme, m, r))
            if progress is not None:
                print(f"{table_id} {scheme} dt={dt}: {measured} (reference {refs})", file=progress, flush=True)
    classify(cells)
    if out is not None:
        write_csv(Path(out) / f"{table_id}.csv", TABLE_HEADER, (c.row() for c in cells))
    return cells


# -- convergence studies --------------------------------------------------------------


def fit_order(errors: list[float], floor: float = 1e-9, last: int = 3) -> float:
    """Slope of ``log e_{k+1}`` against ``log e_k`` over the last resolvable cycles.

    Resolvable cycles form the leading run of errors that are above ``floor``
    and keep decreasing; once the inner solves stop resolving the error the
    series stalls and the remaining entries carry no rate information.  The
    fit uses the last ``last`` errors of that run.
    """
    run: list[float] = []
    for x in errors:
        if not (math.isfinite(x) and x > floor) or (run and x >= run[-1]):
            break
        run.append(x)
    run = run[-last:]
    if len(run) < 3:
        raise ValueError(f"need at least three resolvable errors above {floor:g}, got {run}")
    x = np.log(run[:-1])
    y = np.log(run[1:])
    return float(np.polyfit(x, y, 1)[0])


def convergence_study(
    spec: ExperimentSpec, seeds: Iterable[int] | None = None, out: str | Path | None = None
) -> dict[int | None, ExperimentResult]:
    """Per-cycle error series for ``spec`` (and for each seed, if given).

    Writes ``convergence.csv`` with columns ``seed, cycle, error, energy``.
    """
    runs: dict[int | None, ExperimentResult] = {}
    seeds = list(seeds) if seeds is not None else [spec.seed]
    rows = []
    for s in seeds:
        sp = spec.with_seed(s) if s is not None else spec
        sub = Path(out) / f"seed_{s}" if out is not None else Path(sp.out or sp.name) / f"seed_{s}"
        res = run_experiment(sp, sub, spectrum_size=0)
        runs[s] = res
        for k, e in enumerate(res.errors):
            rows.append(("none" if s is None else s, k, e, res.energy))
    if out is not None:
        write_csv(Path(out) / "convergence.csv", ["seed", "cycle", "error", "energy"], rows)
    return runs


def summarize(cells: list[Cell]) -> dict[str, int]:
    out = {"pass": 0, "soft": 0, "fail": 0}
    for c in cells:
        out[c.status] += 1
    return out


__all__ = [
    "CH_NEUMANN_INIT",
    "CH_PERIODIC_INIT",
    "Cell",
    "ExperimentResult",
    "TABLE_IDS",
    "classify",
    "convergence_study",
    "eigen_report",
    "fit_order",
    "lb_near_saddle",
    "lb_stable_state",
    "reference_data",
    "reproduce_table",
    "run_experiment",
    "summarize",
    "write_csv",
]
