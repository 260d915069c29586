"""Free-energy functionals and their convex splittings.

Two models are provided:

* :class:`GinzburgLandau1D` -- ``int kappa^2/2 |u_x|^2 + (u^2 - 1)^2 / 4`` on a
  1-D Neumann or periodic grid.
* :class:`LandauBrazovskii2D` -- ``int xi^2/2 [(Delta + 1) u]^2 + Phi(u)`` with
  ``Phi(u) = tau/2 u^2 - gamma/3! u^3 + 1/4! u^4`` on a 2-D periodic grid.

Each model exposes the value, L2 gradient and Hessian action of the discrete
energy, plus two splittings ``F = F_c - F_e``: one whose contractive part has a
linear gradient (``LINEAR_CONTRACTIVE``) and one whose expansive part has a
linear gradient (``NONLINEAR_CONTRACTIVE``).  The linear parts carry their
transform-basis symbol so steppers can invert them directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import Grid, gradient_sq_integral, helmholtz_sq, l2_inner, laplacian

LINEAR_CONTRACTIVE = "linear_contractive"
NONLINEAR_CONTRACTIVE = "nonlinear_contractive"

Array = np.ndarray


class ConvexRangeWarning(UserWarning):
    """Field values left the range where the splitting is convex."""


@dataclass(frozen=True)
class SplitPart:
    """One convex piece of a splitting.

    ``symbol`` is set for parts whose gradient is linear: the gradient is then
    ``grid.apply_symbol(symbol(grid), u)``.
    """

    value: Callable[[Grid, Array], float]
    gradient: Callable[[Grid, Array], Array]
    hessian: Callable[[Grid, Array, Array], Array]
    symbol: Callable[[Grid], Array] | None = None

    @property
    def linear(self) -> bool:
        return self.symbol is not None


@dataclass(frozen=True)
class SplitPair:
    kind: str
    contractive: SplitPart
    expansive: SplitPart
    convex_range: tuple[float, float]


def _integrate(grid: Grid, density: Array) -> float:
    return float(np.sum(grid.weights * density))


@dataclass(frozen=True)
class GinzburgLandau1D:
    """Ginzburg-Landau energy with double-well ``(u^2 - 1)^2 / 4``.

    ``c`` is the stabilising constant of the linear-contractive splitting;
    its expansive part is convex for ``u^2 <= (2c + 1) / 3``.
    """

    kappa: float = 0.01
    c: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")

    name = "gl1d"

    def check_grid(self, grid: Grid) -> None:
        if grid.dim != 1:
            raise ValueError("GinzburgLandau1D needs a 1-D grid")

    def energy(self, grid: Grid, u: Array) -> float:
        u = grid.check(u)
        bulk = 0.25 * (u * u - 1.0) ** 2
        return 0.5 * self.kappa**2 * gradient_sq_integral(grid, u) + _integrate(grid, bulk)

    def gradient(self, grid: Grid, u: Array) -> Array:
        return -self.kappa**2 * laplacian(grid, u) + u**3 - u

    def curvature(self, u: Array) -> Array:
        """Second derivative of the local density, ``f''(u)``."""
        return 3.0 * u * u - 1.0

    def hessian_apply(self, grid: Grid, u: Array, psi: Array) -> Array:
        return -self.kappa**2 * laplacian(grid, psi) + self.curvature(u) * psi

    def linear_symbol(self, grid: Grid) -> Array:
        """Constant-coefficient part of the Hessian (``-kappa^2 Delta``)."""
        return self.kappa**2 * grid.neg_laplacian_symbol

    def split(self, kind: str) -> SplitPair:
        k2, c = self.kappa**2, self.c
        if kind == LINEAR_CONTRACTIVE:
            contractive = SplitPart(
                value=lambda g, u: 0.5 * k2 * gradient_sq_integral(g, u) + _integrate(g, c * u * u + 0.25),
                gradient=lambda g, u: -k2 * laplacian(g, u) + 2.0 * c * u,
                hessian=lambda g, u, p: -k2 * laplacian(g, p) + 2.0 * c * p,
                symbol=lambda g: k2 * g.neg_laplacian_symbol + 2.0 * c,
            )
            expansive = SplitPart(
                value=lambda g, u: _integrate(g, -0.25 * u**4 + (c + 0.5) * u * u),
                gradient=lambda g, u: -(u**3) + (2.0 * c + 1.0) * u,
                hessian=lambda g, u, p: (-3.0 * u * u + 2.0 * c + 1.0) * p,
            )
            bound = np.sqrt((2.0 * c + 1.0) / 3.0)
            return SplitPair(kind, contractive, expansive, (-bound, bound))
        if kind == NONLINEAR_CONTRACTIVE:
            contractive = SplitPart(
                value=lambda g, u: 0.5 * k2 * gradient_sq_integral(g, u) + _integrate(g, 0.25 * u**4 + 0.25),
                gradient=lambda g, u: -k2 * laplacian(g, u) + u**3,
                hessian=lambda g, u, p: -k2 * laplacian(g, p) + 3.0 * u * u * p,
            )
            expansive = SplitPart(
                value=lambda g, u: _integrate(g, 0.5 * u * u),
                gradient=lambda g, u: np.array(u, dtype=float),
                hessian=lambda g, u, p: np.array(p, dtype=float),
                symbol=lambda g: np.ones_like(g.neg_laplacian_symbol),
            )
            return SplitPair(kind, contractive, expansive, (-np.inf, np.inf))
        raise ValueError(f"unknown split kind {kind!r}")


@dataclass(frozen=True)
class LandauBrazovskii2D:
    """Landau-Brazovskii energy on a periodic 2-D grid.

    The linear-contractive splitting uses the constant ``c``; its expansive
    part ``-u^4/24 + gamma u^3/6 + c u^2/2`` is convex while
    ``c + gamma u - u^2/2 >= 0`` (``[-6.5, 7]`` for the defaults).
    """

    tau: float = -0.15
    xi: float = 1.0
    gamma: float = 0.25
    c: float = 22.75

    name = "lb2d"

    def check_grid(self, grid: Grid) -> None:
        if grid.dim != 2 or not grid.periodic:
            raise ValueError("LandauBrazovskii2D needs a 2-D periodic grid")

    def potential(self, u: Array) -> Array:
        return self.tau / 2 * u**2 - self.gamma / 6 * u**3 + u**4 / 24

    def potential_prime(self, u: Array) -> Array:
        return self.tau * u - self.gamma / 2 * u**2 + u**3 / 6

    def curvature(self, u: Array) -> Array:
        return self.tau - self.gamma * u + u**2 / 2

    def energy(self, grid: Grid, u: Array) -> float:
        u = grid.check(u)
        shifted = laplacian(grid, u) + u
        return _integrate(grid, self.xi**2 / 2 * shifted**2 + self.potential(u))

    def gradient(self, grid: Grid, u: Array) -> Array:
        return self.xi**2 * helmholtz_sq(grid, u) + self.potential_prime(u)

    def hessian_apply(self, grid: Grid, u: Array, psi: Array) -> Array:
        return self.xi**2 * helmholtz_sq(grid, psi) + self.curvature(u) * psi

    def linear_symbol(self, grid: Grid) -> Array:
        return self.xi**2 * (1.0 - grid.neg_laplacian_symbol) ** 2

    def split(self, kind: str) -> SplitPair:
        xi2, tau, gam, c = self.xi**2, self.tau, self.gamma, self.c
        if kind == LINEAR_CONTRACTIVE:
            contractive = SplitPart(
                value=lambda g, u: _integrate(g, xi2 / 2 * (laplacian(g, u) + u) ** 2 + (tau + c) / 2 * u * u),
                gradient=lambda g, u: xi2 * helmholtz_sq(g, u) + (tau + c) * u,
                hessian=lambda g, u, p: xi2 * helmholtz_sq(g, p) + (tau + c) * p,
                symbol=lambda g: xi2 * (1.0 - g.neg_laplacian_symbol) ** 2 + tau + c,
            )
            expansive = SplitPart(
                value=lambda g, u: _integrate(g, -(u**4) / 24 + gam / 6 * u**3 + c / 2 * u * u),
                gradient=lambda g, u: -(u**3) / 6 + gam / 2 * u * u + c * u,
                hessian=lambda g, u, p: (-(u * u) / 2 + gam * u + c) * p,
            )
            disc = np.sqrt(gam * gam + 2.0 * c)
            return SplitPair(kind, contractive, expansive, (gam - disc, gam + disc))
        if kind == NONLINEAR_CONTRACTIVE:

            def value_c(g: Grid, u: Array) -> float:
                lap = laplacian(g, u)
                return _integrate(g, xi2 / 2 * lap**2 + u**4 / 24 - gam / 6 * u**3 + (xi2 + tau) / 2 * u * u)

            def grad_c(g: Grid, u: Array) -> Array:
                return xi2 * laplacian(g, laplacian(g, u)) + u**3 / 6 - gam / 2 * u * u + (xi2 + tau) * u

            def hess_c(g: Grid, u: Array, p: Array) -> Array:
                return xi2 * laplacian(g, laplacian(g, p)) + (u * u / 2 - gam * u + xi2 + tau) * p

            contractive = SplitPart(value_c, grad_c, hess_c)
            expansive = SplitPart(
                value=lambda g, u: xi2 * gradient_sq_integral(g, u),
                gradient=lambda g, u: -2.0 * xi2 * laplacian(g, u),
                hessian=lambda g, u, p: -2.0 * xi2 * laplacian(g, p),
                symbol=lambda g: 2.0 * xi2 * g.neg_laplacian_symbol,
            )
            return SplitPair(kind, contractive, expansive, (-np.inf, np.inf))
        raise ValueError(f"unknown split kind {kind!r}")


Model = GinzburgLandau1D | LandauBrazovskii2D


def energy(model: Model, grid: Grid, u: Array) -> float:
    model.check_grid(grid)
    return model.energy(grid, u)


def gradient_l2(model: Model, grid: Grid, u: Array) -> Array:
    model.check_grid(grid)
    return model.gradient(grid, grid.check(u))


def hessian_apply(model: Model, grid: Grid, u: Array, psi: Array) -> Array:
    model.check_grid(grid)
    return model.hessian_apply(grid, grid.check(u), grid.check(psi))


def split(model: Model, kind: str) -> SplitPair:
    return model.split(kind)


def warn_if_outside(pair: SplitPair, u: Array, context: str = "") -> bool:
    """Warn (once per call) when ``u`` leaves the pair's convex range."""
    lo, hi = pair.convex_range
    umin, umax = float(np.min(u)), float(np.max(u))
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    if umin < lo - slack or umax > hi + slack:
        warnings.warn(
            f"{context}field range [{umin:.4g}, {umax:.4g}] exceeds convex range [{lo:.4g}, {hi:.4g}]",
            ConvexRangeWarning,
            stacklevel=2,
        )
        return True
    return False


def dense_hessian(model: Model, grid: Grid, u: Array) -> Array:
    """Assemble the L2 Hessian matrix column by column (small grids only)."""
    n = grid.size
    cols = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        cols[:, i] = model.hessian_apply(grid, u, e.reshape(grid.shape)).ravel()
        e[i] = 0.0
    return cols


__all__ = [
    "LINEAR_CONTRACTIVE",
    "NONLINEAR_CONTRACTIVE",
    "ConvexRangeWarning",
    "GinzburgLandau1D",
    "LandauBrazovskii2D",
    "Model",
    "SplitPair",
    "SplitPart",
    "dense_hessian",
    "energy",
    "gradient_l2",
    "hessian_apply",
    "l2_inner",
    "split",
    "warn_if_outside",
]
