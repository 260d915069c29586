"""Iterative minimization formulation for index-1 saddle points.

Each outer cycle freezes the current state ``phi_k`` and the min-mode ``v``
and minimises the auxiliary functional

    L(phi) = (1 - alpha) F(phi) + alpha F(phi - vt) - beta F(phi_k + vt),
    vt = <v, phi - phi_k>_metric v,

whose minimiser is the next iterate.  With the default ``(alpha, beta) =
(0, 2)`` this is ``F(phi) - 2 F(phi_hat)``.  In the H^-1 metric the pairing
``<v, .>_{H^-1}`` is evaluated as the L2 pairing with ``w = (-Delta)^-1 v``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .energy import Model, SplitPair
from .fields import Grid, Metric, check_zero_mean, inv_neg_laplacian_zero_mean, l2_inner

Array = np.ndarray

DIVERGENCE_BOUND = 1e6


class DivergenceError(RuntimeError):
    """A stepper produced a state the run cannot continue from."""


@dataclass(frozen=True, eq=False)
class AuxProblem:
    """Frozen data of one cycle.  ``v=None`` means relaxation (plain gradient flow of F)."""

    model: Model
    grid: Grid
    phi_k: Array
    v: Array | None
    metric: Metric
    alpha: float = 0.0
    beta: float = 2.0
    w: Array | None = field(init=False, default=None)

    def __post_init__(self):
        self.model.check_grid(self.grid)
        object.__setattr__(self, "phi_k", self.grid.check(self.phi_k))
        if self.metric.grid != self.grid:
            raise ValueError("metric and problem grids differ")
        if self.v is None:
            return
        v = self.grid.check(self.v)
        object.__setattr__(self, "v", v)
        if not self.alpha + self.beta > 1:
            raise ValueError(f"need alpha + beta > 1, got alpha={self.alpha}, beta={self.beta}")
        if self.metric.conserving:
            check_zero_mean(self.grid, v, "min-mode")
            object.__setattr__(self, "w", inv_neg_laplacian_zero_mean(self.grid, v))

    @classmethod
    def relaxation(cls, model: Model, grid: Grid, metric: Metric) -> "AuxProblem":
        return cls(model, grid, np.zeros(grid.shape), None, metric)

    @property
    def relaxing(self) -> bool:
        return self.v is None

    @property
    def m(self) -> Array:
        """L2 representer of ``<v, .>_metric`` (``v`` or ``w``)."""
        return self.w if self.metric.conserving else self.v

    def coefficient(self, f: Array) -> float:
        """``<v, f - phi_k>`` in the active metric."""
        return l2_inner(self.grid, self.m, f - self.phi_k)


def phi_hat(p: AuxProblem, f: Array) -> Array:
    if p.relaxing:
        return p.phi_k.copy()
    return p.phi_k + p.coefficient(p.grid.check(f)) * p.v


def aux_value(p: AuxProblem, f: Array) -> float:
    F = p.model.energy
    if p.relaxing:
        return F(p.grid, f)
    vt = phi_hat(p, f) - p.phi_k
    value = p.beta * -F(p.grid, p.phi_k + vt)
    if p.alpha != 1.0:
        value += (1.0 - p.alpha) * F(p.grid, f)
    if p.alpha != 0.0:
        value += p.alpha * F(p.grid, f - vt)
    return value


def aux_gradient_l2(p: AuxProblem, f: Array) -> Array:
    """L2 gradient of ``aux_value``."""
    g = p.model.gradient
    f = p.grid.check(f)
    if p.relaxing:
        return g(p.grid, f)
    vt = p.coefficient(f) * p.v
    out = -p.beta * l2_inner(p.grid, p.v, g(p.grid, p.phi_k + vt)) * p.m
    if p.alpha != 1.0:
        out = out + (1.0 - p.alpha) * g(p.grid, f)
    if p.alpha != 0.0:
        gs = g(p.grid, f - vt)
        out = out + p.alpha * (gs - l2_inner(p.grid, p.v, gs) * p.m)
    return out


def aux_gradient(p: AuxProblem, f: Array) -> Array:
    """Gradient of ``aux_value`` in the problem's metric (the flow right-hand side, negated)."""
    return p.metric.riesz(aux_gradient_l2(p, f))


def aux_gradient_norm(p: AuxProblem, f: Array) -> float:
    return p.metric.gradient_norm(aux_gradient_l2(p, f))


def force_norm(model: Model, metric: Metric, f: Array) -> float:
    """``||grad F||`` in the metric."""
    return metric.gradient_norm(model.gradient(metric.grid, f))


# -- splittings of L ----------------------------------------------------------


@dataclass(frozen=True)
class AuxPart:
    value: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    hessian: Callable[[Array, Array], Array]


@dataclass(frozen=True)
class AuxSplit:
    contractive: AuxPart
    expansive: AuxPart


class _Terms:
    """Value / gradient / Hessian of the three kinds of term appearing in L.

    ``plain``: G(phi); ``shifted``: G(phi - vt); ``reflected``: G(phi_k + vt).
    """

    def __init__(self, p: AuxProblem):
        self.p = p

    def _proj(self, x: Array) -> Array:  # x -> <m, x> v
        return l2_inner(self.p.grid, self.p.m, x) * self.p.v

    def _proj_t(self, x: Array) -> Array:  # adjoint: x -> <v, x> m
        return l2_inner(self.p.grid, self.p.v, x) * self.p.m

    def value(self, part, which: str, f: Array) -> float:
        return part.value(self.p.grid, self._arg(which, f))

    def _arg(self, which: str, f: Array) -> Array:
        if which == "plain":
            return f
        vt = self._proj(f - self.p.phi_k)
        return f - vt if which == "shifted" else self.p.phi_k + vt

    def gradient(self, part, which: str, f: Array) -> Array:
        gx = part.gradient(self.p.grid, self._arg(which, f))
        if which == "plain":
            return gx
        if which == "shifted":
            return gx - self._proj_t(gx)
        return self._proj_t(gx)

    def hessian(self, part, which: str, f: Array, psi: Array) -> Array:
        x = self._arg(which, f)
        if which == "plain":
            return part.hessian(self.p.grid, x, psi)
        if which == "shifted":
            d = psi - self._proj(psi)
            hd = part.hessian(self.p.grid, x, d)
            return hd - self._proj_t(hd)
        return self._proj_t(part.hessian(self.p.grid, x, self._proj(psi)))


def _combine(terms: _Terms, items: list[tuple[float, object, str]]) -> AuxPart:
    items = [(c, part, which) for c, part, which in items if c != 0.0]
    grid = terms.p.grid

    def value(f):
        return sum(c * terms.value(part, which, f) for c, part, which in items)

    def gradient(f):
        out = np.zeros(grid.shape)
        for c, part, which in items:
            out = out + c * terms.gradient(part, which, f)
        return out

    def hessian(f, psi):
        out = np.zeros(grid.shape)
        for c, part, which in items:
            out = out + c * terms.hessian(part, which, f, psi)
        return out

    return AuxPart(value, gradient, hessian)


def build_aux_split(p: AuxProblem, split_lin: SplitPair, split_nl: SplitPair) -> AuxSplit:
    """Dual splitting ``L = L_c - L_e`` whose contractive gradient is linear.

    Uses the linear-contractive pair ``F = Fc - Fe`` for the ``phi`` and
    ``phi - vt`` terms and the nonlinear-contractive pair ``F = Gc - Ge``
    for the other two, so that every term of ``L_c`` has a linear gradient.
    """
    if p.relaxing:
        raise ValueError("relaxation problems have no auxiliary splitting")
    if p.alpha < 0 or p.beta < 0:
        raise ValueError(f"the dual splitting needs alpha, beta >= 0, got ({p.alpha}, {p.beta})")
    a, b = p.alpha, p.beta
    Fc, Fe = split_lin.contractive, split_lin.expansive
    Gc, Ge = split_nl.contractive, split_nl.expansive
    t = _Terms(p)
    lc = _combine(t, [(1.0, Fc, "plain"), (a, Ge, "plain"), (a, Fc, "shifted"), (b, Ge, "reflected")])
    le = _combine(t, [(1.0, Fe, "plain"), (a, Gc, "plain"), (a, Fe, "shifted"), (b, Gc, "reflected")])
    return AuxSplit(lc, le)


def branch_split(p: AuxProblem, pair: SplitPair) -> AuxSplit:
    """Splitting of L built from a single pair, choosing the branch by the signs of alpha, beta."""
    if p.relaxing:
        raise ValueError("relaxation problems have no auxiliary splitting")
    a, b = p.alpha, p.beta
    c, e = pair.contractive, pair.expansive
    t = _Terms(p)

    def build(c, e):
        if a >= 0 and b >= 0:
            items = [(1.0, c, "plain"), (a, e, "plain"), (a, c, "shifted"), (b, e, "reflected")]
        elif a >= 0 and b <= 0:
            items = [(1.0, c, "plain"), (a, e, "plain"), (a, c, "shifted"), (-b, c, "reflected")]
        elif a <= 0 and b >= 0:
            items = [(1.0, c, "plain"), (-a, c, "plain"), (-a, e, "shifted"), (b, e, "reflected")]
        else:
            raise ValueError("alpha and beta cannot both be negative")
        return _combine(t, items)

    return AuxSplit(build(c, e), build(e, c))


# -- cycles -------------------------------------------------------------------

TOLERANCE = "tolerance"
ITERATION_CAP = "iteration-cap"
DIVERGED = "diverged"


@dataclass(frozen=True)
class InnerStop:
    """Stop the inner flow at ``||grad L|| <= tolerance`` or after ``cap`` steps."""

    tolerance: float | None = None
    cap: int | None = None
    max_iterations: int = 200_000

    def __post_init__(self):
        if self.tolerance is None and self.cap is None:
            raise ValueError("InnerStop needs a tolerance or an iteration cap")
        if self.cap is not None and self.cap < 0:
            raise ValueError("cap must be non-negative")


@dataclass
class CycleReport:
    cycle: int
    iterations: int
    aux_grad_norm: float
    force_norm: float
    lambda_min: float
    energy: float
    wall_time: float
    reason: str

    @property
    def diverged(self) -> bool:
        return self.reason == DIVERGED


TraceFn = Callable[[int, int, float, float, float, float], None]


def diverged_state(phi: Array) -> bool:
    return not np.all(np.isfinite(phi)) or float(np.max(np.abs(phi))) > DIVERGENCE_BOUND


def run_cycle(
    p: AuxProblem,
    stepper: Callable[[Array], Array],
    stop: InnerStop,
    *,
    cycle: int = 0,
    lambda_min: float = math.nan,
    trace: TraceFn | None = None,
) -> tuple[Array, CycleReport]:
    """Integrate the inner flow from ``phi_k`` until ``stop`` fires.

    The gradient norm is checked before every step, so ``iterations`` is the
    number of steps taken to first meet the tolerance.
    """
    t0 = time.perf_counter()
    phi = p.phi_k.copy()
    limit = stop.cap if stop.cap is not None else stop.max_iterations
    n = 0
    reason = ITERATION_CAP
    err = math.nan
    while True:
        err = aux_gradient_norm(p, phi)
        if trace is not None:
            trace(cycle, n, aux_value(p, phi), err, p.model.energy(p.grid, phi), force_norm(p.model, p.metric, phi))
        if not math.isfinite(err):
            reason = DIVERGED
            break
        if stop.tolerance is not None and err <= stop.tolerance:
            reason = TOLERANCE
            break
        if n >= limit:
            break
        try:
            nxt = stepper(phi)
        except DivergenceError:
            reason = DIVERGED
            break
        if diverged_state(nxt):
            reason = DIVERGED
            phi = nxt
            n += 1
            break
        phi = nxt
        n += 1
    finite = reason != DIVERGED
    report = CycleReport(
        cycle=cycle,
        iterations=n,
        aux_grad_norm=err,
        force_norm=force_norm(p.model, p.metric, phi) if finite else math.inf,
        lambda_min=lambda_min,
        energy=p.model.energy(p.grid, phi) if finite else math.nan,
        wall_time=time.perf_counter() - t0,
        reason=reason,
    )
    return phi, report


@dataclass(frozen=True)
class IMFOptions:
    metric: str = "l2"
    scheme: str = "cs"
    dt: float = 0.1
    stop: InnerStop = InnerStop(tolerance=1e-8)
    outer_tolerance: float = 1e-8
    max_cycles: int = 500
    alpha: float = 0.0
    beta: float = 2.0
    eig_tolerance: float = 1e-9
    eig_max_iterations: int = 2000
    deflate_translation: bool = True
    guard_cap: int = 50
    warm_start: bool = True


@dataclass
class IMFResult:
    phi: Array
    reports: list[CycleReport]
    errors: list[float]
    converged: bool
    diverged: bool
    lambda_min: float

    @property
    def cycles(self) -> int:
        return len(self.reports)

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.reports)


def run_imf(
    model: Model, grid: Grid, f0: Array, opts: IMFOptions = IMFOptions(), *, trace: TraceFn | None = None
) -> IMFResult:
    """Outer loop: min-mode, then one inner minimisation, until ``||grad F|| <= outer_tolerance``.

    ``errors[k]`` is the force norm at the start of cycle ``k`` (so the
    last entry belongs to the returned state).
    """
    from .minmode import EigOptions, min_mode
    from .schemes import StepperConfig, make_stepper

    f0 = grid.check(f0)
    if diverged_state(f0):
        raise ValueError("initial field must be finite")
    metric = Metric(opts.metric, grid)
    eig = EigOptions(
        metric=opts.metric,
        tolerance=opts.eig_tolerance,
        max_iterations=opts.eig_max_iterations,
        deflate_translation=opts.deflate_translation,
    )
    cfg = StepperConfig(dt=opts.dt, kind=opts.scheme, problem=problem_kind(model, opts.metric))
    phi = f0.copy()
    reports: list[CycleReport] = []
    errors: list[float] = []
    guess = None
    lam = math.nan
    for k in range(opts.max_cycles + 1):
        e = force_norm(model, metric, phi)
        errors.append(e)
        if e <= opts.outer_tolerance:
            return IMFResult(phi, reports, errors, True, False, lam)
        if k == opts.max_cycles:
            break
        pair = min_mode(model, grid, phi, eig, guess=guess)
        lam = pair.value
        stop = opts.stop
        if k == 0 and lam >= 0 and stop.cap is None:
            stop = InnerStop(tolerance=stop.tolerance, cap=opts.guard_cap)
        p = AuxProblem(model, grid, phi, pair.vector, metric, opts.alpha, opts.beta)
        phi, rep = run_cycle(p, make_stepper(cfg, p), stop, cycle=k, lambda_min=lam, trace=trace)
        reports.append(rep)
        if rep.diverged:
            return IMFResult(phi, reports, errors, False, True, lam)
        guess = pair.vector if opts.warm_start else None
    return IMFResult(phi, reports, errors, False, False, lam)


def problem_kind(model: Model, metric: str) -> str:
    if model.name == "lb2d":
        return "lb_hm1"
    return "ac_l2" if metric == "l2" else "ch_hm1"


__all__ = [
    "AuxProblem",
    "AuxSplit",
    "CycleReport",
    "DivergenceError",
    "IMFOptions",
    "IMFResult",
    "InnerStop",
    "aux_gradient",
    "aux_gradient_l2",
    "aux_gradient_norm",
    "aux_value",
    "branch_split",
    "build_aux_split",
    "force_norm",
    "phi_hat",
    "run_cycle",
    "run_imf",
]
