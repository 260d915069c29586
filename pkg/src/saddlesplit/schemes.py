"""Time steppers for the inner gradient flow of the auxiliary functional.

With the flow operator ``G`` (identity for L2, ``-Delta`` for H^-1) the flow is
``phi_t = -G dL/dphi``.  Two steppers are provided.

* Convex splitting (``cs``): the linear-contractive pair ``F = Fc - Fe`` is
  used for ``F(phi)`` and the nonlinear-contractive pair ``F = Gc - Ge`` for
  ``F(phi_hat)``, so the implicit side is the constant-coefficient operator
  ``I + dt G Ac`` plus one rank-one term and is solved exactly in the
  transform basis with the Woodbury identity.
* Linearised (``ncs``): the nonlinearity is Taylor-expanded about the old
  state, giving the state-dependent operator ``I + dt G H(phi^n)``, solved by
  preconditioned conjugate gradients.  The ``phi_hat`` term stays explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import LINEAR_CONTRACTIVE, NONLINEAR_CONTRACTIVE, Model, warn_if_outside
from .fields import Grid, Metric, _inv_neg_laplacian, l2_inner, laplacian
from .imf import AuxProblem, DivergenceError, InnerStop, force_norm

Array = np.ndarray

PROBLEMS = {"ac_l2": ("gl1d", "l2"), "ch_hm1": ("gl1d", "hminus1"), "lb_hm1": ("lb2d", "hminus1")}
SINGULAR_TOL = 1e-14


class SingularOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    kind: str = "cs"
    problem: str = "ac_l2"
    relaxation: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.kind not in ("cs", "ncs"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")


# -- implicit operators -------------------------------------------------------


@dataclass(frozen=True)
class RankOne:
    """``x -> weight * left * <right, x>_L2``."""

    weight: float
    left: Array
    right: Array


@dataclass(frozen=True)
class ImplicitOperator:
    grid: Grid
    symbol: Array
    corrections: tuple[RankOne, ...] = ()

    def __post_init__(self):
        if len(self.corrections) > 2:
            raise ValueError("at most two rank-one corrections are supported")

    def apply(self, x: Array) -> Array:
        out = self.grid.apply_symbol(self.symbol, x)
        for c in self.corrections:
            out = out + c.weight * l2_inner(self.grid, c.right, x) * c.left
        return out


def solve_implicit(op: ImplicitOperator, rhs: Array) -> Array:
    """Solve ``(D + sum_i s_i a_i b_i^T W) x = rhs`` by sequential Woodbury updates."""
    rhs = op.grid.check(rhs)
    bad = np.abs(op.symbol) < SINGULAR_TOL
    if np.any(bad):
        mode = np.unravel_index(int(np.argmax(bad)), op.symbol.shape)
        raise SingularOperatorError(f"implicit operator is singular at transform mode {tuple(int(i) for i in mode)}")
    inv = 1.0 / op.symbol

    def solve(k: int, r: Array) -> Array:
        if k == 0:
            return op.grid.apply_symbol(inv, r)
        c = op.corrections[k - 1]
        x = solve(k - 1, r)
        y = solve(k - 1, c.left)
        denom = 1.0 + c.weight * l2_inner(op.grid, c.right, y)
        if abs(denom) < SINGULAR_TOL:
            raise SingularOperatorError(f"rank-one correction {k - 1} makes the operator singular")
        return x - (c.weight * l2_inner(op.grid, c.right, x) / denom) * y

    return solve(len(op.corrections), rhs)


# -- conjugate gradients for the linearised stepper ------------------------------


def pcg(apply_a, precond, b: Array, inner, x0: Array, rtol: float = 1e-12, maxiter: int = 1000) -> Array:
    """Preconditioned CG for an operator self-adjoint in ``inner``.

    A non-positive curvature ``<p, A p>`` means the operator is not positive
    definite; this is raised as :class:`DivergenceError`.
    """
    bnorm = math.sqrt(max(inner(b, b), 0.0))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = x0.copy()
    r = b - apply_a(x)
    z = precond(r)
    rz = inner(r, z)
    p = z.copy()
    for _ in range(maxiter):
        if math.sqrt(max(inner(r, r), 0.0)) <= rtol * bnorm:
            return x
        if not rz > 0:
            raise DivergenceError("preconditioned residual lost positivity")
        ap = apply_a(p)
        pap = inner(p, ap)
        if not pap > 0:
            raise DivergenceError("linearised implicit operator is not positive definite")
        a = rz / pap
        x = x + a * p
        r = r - a * ap
        z = precond(r)
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if math.sqrt(max(inner(r, r), 0.0)) <= 1e3 * rtol * bnorm:
        return x
    raise DivergenceError(f"conjugate gradients did not converge in {maxiter} iterations")


# -- steppers -------------------------------------------------------------------


class _Base:
    def __init__(self, cfg: StepperConfig, p: AuxProblem):
        model_name, metric_kind = PROBLEMS[cfg.problem]
        if p.model.name != model_name or p.metric.kind != metric_kind:
            raise ValueError(f"problem {cfg.problem!r} needs model {model_name} in the {metric_kind} metric")
        if cfg.relaxation != p.relaxing:
            raise ValueError("relaxation flag and problem (v is None) disagree")
        if not p.relaxing and p.alpha != 0.0:
            raise ValueError("the linear steppers implement alpha = 0 only")
        self.cfg, self.p = cfg, p
        self.grid: Grid = p.grid
        self.model: Model = p.model
        self.hm1 = p.metric.conserving
        # flow operator G in the transform basis
        self.g_symbol = self.grid.neg_laplacian_symbol if self.hm1 else np.ones_like(self.grid.neg_laplacian_symbol)
        self.scale = 0.0 if p.relaxing else p.beta

    def flow(self, g: Array) -> Array:
        return -laplacian(self.grid, g) if self.hm1 else g

    def hat_term(self, phi: Array, gradient) -> Array:
        """``beta <v, gradient(phi_hat)> v``, zero in relaxation mode."""
        if self.p.relaxing:
            return np.zeros(self.grid.shape)
        ph = self.p.phi_k + self.p.coefficient(phi) * self.p.v
        return self.scale * l2_inner(self.grid, self.p.v, gradient(self.grid, ph)) * self.p.v


class ConvexSplittingStepper(_Base):
    def __init__(self, cfg: StepperConfig, p: AuxProblem):
        super().__init__(cfg, p)
        self.lin = p.model.split(LINEAR_CONTRACTIVE)
        self.nl = p.model.split(NONLINEAR_CONTRACTIVE)
        dt = cfg.dt
        symbol = 1.0 + dt * self.g_symbol * self.lin.contractive.symbol(self.grid)
        corrections: tuple[RankOne, ...] = ()
        self.constant = np.zeros(self.grid.shape)
        if not p.relaxing:
            ae = self.nl.expansive.symbol(self.grid)
            v, m = p.v, p.m
            ae_v = self.grid.apply_symbol(ae, v)
            c_v = l2_inner(self.grid, v, ae_v)
            corrections = (RankOne(self.scale * dt * c_v, v, m),)
            shift = l2_inner(self.grid, ae_v, p.phi_k) - c_v * l2_inner(self.grid, m, p.phi_k)
            self.constant = -self.scale * dt * shift * v
        self.op = ImplicitOperator(self.grid, symbol, corrections)

    def __call__(self, phi: Array) -> Array:
        dt = self.cfg.dt
        warn_if_outside(self.lin, phi, "convex-splitting step: ")
        explicit = self.flow(self.lin.expansive.gradient(self.grid, phi)) + self.hat_term(phi, self.nl.contractive.gradient)
        return solve_implicit(self.op, phi + self.constant + dt * explicit)


class LinearizedStepper(_Base):
    def __init__(self, cfg: StepperConfig, p: AuxProblem):
        super().__init__(cfg, p)
        self.lin_symbol = self.model.linear_symbol(self.grid)
        self.w = self.grid.weights

    def _inner(self, x: Array, y: Array) -> float:
        if self.hm1:
            return float(np.sum(self.w * x * _inv_neg_laplacian(self.grid, y)))
        return float(np.sum(self.w * x * y))

    def __call__(self, phi: Array) -> Array:
        dt, grid, model = self.cfg.dt, self.grid, self.model
        grad = model.gradient(grid, phi)
        hphi = model.hessian_apply(grid, phi, phi)
        rhs = phi + dt * (self.flow(hphi - grad) + self.hat_term(phi, model.gradient))

        def apply_a(x):
            return x + dt * self.flow(model.hessian_apply(grid, phi, x))

        c0 = max(float(np.mean(model.curvature(phi))), 0.0)
        pre_symbol = 1.0 / (1.0 + dt * self.g_symbol * (self.lin_symbol + c0))

        def precond(r):
            return grid.apply_symbol(pre_symbol, r)

        if not self.hm1:
            return pcg(apply_a, precond, rhs, self._inner, phi)
        # the operator maps zero-mean fields to zero-mean fields and fixes constants
        mbar = float(np.sum(self.w * rhs)) / grid.volume
        const = np.full(grid.shape, mbar)
        b = rhs - apply_a(const)
        b = b - float(np.sum(self.w * b)) / grid.volume
        x0 = phi - float(np.sum(self.w * phi)) / grid.volume
        return const + pcg(apply_a, precond, b, self._inner, x0)


def make_stepper(cfg: StepperConfig, p: AuxProblem):
    if cfg.kind == "cs":
        return ConvexSplittingStepper(cfg, p)
    return LinearizedStepper(cfg, p)


def _step(kind: str, problem: str, cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    if cfg.kind != kind or cfg.problem != problem:
        cfg = StepperConfig(cfg.dt, kind, problem, cfg.relaxation)
    return make_stepper(cfg, p)(p.grid.check(f))


def step_cs_ac(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("cs", "ac_l2", cfg, p, f)


def step_ncs_ac(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("ncs", "ac_l2", cfg, p, f)


def step_cs_ch(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("cs", "ch_hm1", cfg, p, f)


def step_ncs_ch(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("ncs", "ch_hm1", cfg, p, f)


def step_cs_lb(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("cs", "lb_hm1", cfg, p, f)


def step_ncs_lb(cfg: StepperConfig, p: AuxProblem, f: Array) -> Array:
    return _step("ncs", "lb_hm1", cfg, p, f)


# -- relaxation ---------------------------------------------------------------------


@dataclass
class RelaxResult:
    phi: Array
    iterations: int
    grad_norm: float
    energy: float
    converged: bool
    diverged: bool = False


def relax(
    model: Model,
    grid: Grid,
    f0: Array,
    cfg: StepperConfig,
    tolerance: float = 1e-8,
    max_iterations: int = 100_000,
    callback=None,
) -> RelaxResult:
    """Gradient flow of F itself (``v = 0``) until ``||grad F||_metric <= tolerance``."""
    from .imf import diverged_state

    if not cfg.relaxation:
        raise ValueError("relax needs a relaxation StepperConfig")
    metric = Metric(PROBLEMS[cfg.problem][1], grid)
    p = AuxProblem.relaxation(model, grid, metric)
    step = make_stepper(cfg, p)
    phi = grid.check(f0).copy()
    stop = InnerStop(tolerance=tolerance, max_iterations=max_iterations)
    n = 0
    while True:
        err = force_norm(model, metric, phi)
        if callback is not None:
            callback(n, phi, err)
        if err <= stop.tolerance:
            return RelaxResult(phi, n, err, model.energy(grid, phi), True)
        if n >= stop.max_iterations:
            return RelaxResult(phi, n, err, model.energy(grid, phi), False)
        try:
            phi = step(phi)
        except DivergenceError:
            return RelaxResult(phi, n, math.inf, math.nan, False, True)
        n += 1
        if diverged_state(phi):
            return RelaxResult(phi, n, math.inf, math.nan, False, True)


__all__ = [
    "ConvexSplittingStepper",
    "ImplicitOperator",
    "LinearizedStepper",
    "RankOne",
    "RelaxResult",
    "SingularOperatorError",
    "StepperConfig",
    "make_stepper",
    "pcg",
    "relax",
    "solve_implicit",
    "step_cs_ac",
    "step_cs_ch",
    "step_cs_lb",
    "step_ncs_ac",
    "step_ncs_ch",
    "step_ncs_lb",
]
