"""Smallest eigenpairs ("min-modes") of the energy Hessian in the L2 or H^-1 metric.

In the L2 metric we minimise ``<psi, H psi> / <psi, psi>``.  In H^-1 the
Hessian is ``-Delta H`` restricted to zero-mass fields, which is the symmetric
pencil ``P H P psi = lambda (-Delta)^-1 psi``; the Rayleigh quotient becomes
``<psi, H psi> / <psi, (-Delta)^-1 psi>``.

The iterative solver is a block LOBPCG written against a weighted inner
product, with the constant-coefficient part of the Hessian (shifted) as
preconditioner.  Small 1-D problems can also be solved densely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .energy import Model, dense_hessian
from .fields import (
    Grid,
    Metric,
    _inv_neg_laplacian,
    centered_derivative,
    gradient_sq_integral,
    laplacian,
)

DENSE_LIMIT = 402


class EigenSolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class EigOptions:
    metric: str = "l2"
    max_iterations: int = 1000
    tolerance: float = 1e-9
    deflation_angle_threshold_deg: float = 10.0
    deflate_translation: bool = True
    block_size: int = 3

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.deflation_angle_threshold_deg < 90:
            raise ValueError("deflation threshold must lie in (0, 90) degrees")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@dataclass
class EigPair:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int = 0
    deflated: bool = False


class _Pencil:
    """Hessian pencil at a fixed state, acting on column blocks of flat vectors."""

    def __init__(self, model: Model, grid: Grid, u: np.ndarray, metric: str):
        self.model, self.grid, self.u = model, grid, u
        self.hminus1 = metric == "hminus1"
        self.w = grid.weights.ravel()
        curv = np.abs(model.curvature(u))
        shift = float(np.max(curv)) + 1.0
        self.precond_symbol = 1.0 / (model.linear_symbol(grid) + shift)
        self.constraints: np.ndarray | None = None  # B-orthonormal columns
        self.b_constraints: np.ndarray | None = None

    def _cols(self, fn, X: np.ndarray) -> np.ndarray:
        shape = self.grid.shape
        return np.column_stack([fn(x.reshape(shape)).ravel() for x in X.T]) if X.shape[1] else X.copy()

    def apply_a(self, X):
        return self._cols(lambda x: self.model.hessian_apply(self.grid, self.u, x), X)

    def apply_b(self, X):
        if not self.hminus1:
            return X.copy()
        return self._cols(lambda x: _inv_neg_laplacian(self.grid, x), X)

    def precond(self, R):
        return self._cols(lambda r: self.grid.apply_symbol(self.precond_symbol, r), R)

    def dot(self, X, Y):
        return X.T @ (self.w[:, None] * Y)

    def _zero_mean(self, X):
        if not self.hminus1:
            return X
        return X - (self.w @ X) / self.w.sum()

    def project(self, X):
        """Project search directions onto the constrained subspace."""
        X = self._zero_mean(X)
        if self.constraints is not None:
            X = X - self.constraints @ self.dot(self.b_constraints, X)
        return X

    def project_residual(self, R):
        R = self._zero_mean(R)
        if self.constraints is not None:
            R = R - self.b_constraints @ self.dot(self.constraints, R)
        return R

    def residual_norms(self, R):
        if not self.hminus1:
            return np.sqrt(np.maximum(np.sum(self.w[:, None] * R * R, axis=0), 0.0))
        shape = self.grid.shape
        return np.array([math.sqrt(max(gradient_sq_integral(self.grid, r.reshape(shape)), 0.0)) for r in R.T])

    def set_constraints(self, Y: np.ndarray) -> None:
        Y = self._zero_mean(Y)
        Y, BY = _b_orthonormalize(self, Y)
        self.constraints, self.b_constraints = Y, BY


def _b_orthonormalize(pencil: _Pencil, X: np.ndarray, drop: float = 1e-13):
    """Orthonormalise columns in the B inner product, dropping dependent ones."""
    for _ in range(2):
        BX = pencil.apply_b(X)
        G = pencil.dot(X, BX)
        G = 0.5 * (G + G.T)
        d, U = np.linalg.eigh(G)
        keep = d > drop * max(d.max(initial=0.0), 1e-300)
        if not np.any(keep):
            return X[:, :0], X[:, :0]
        X = X @ (U[:, keep] / np.sqrt(d[keep]))
    BX = pencil.apply_b(X)
    return X, BX


def _lobpcg(pencil: _Pencil, X0: np.ndarray, nwant: int, tol: float, maxiter: int):
    X = pencil.project(X0)
    X, BX = _b_orthonormalize(pencil, X)
    b = X.shape[1]
    if b < nwant:
        raise EigenSolverError("initial block is rank deficient", np.inf)
    AX = pencil.apply_a(X)
    GA = pencil.dot(X, AX)
    theta, C = sla.eigh(0.5 * (GA + GA.T), pencil.dot(X, BX))
    X, AX, BX = X @ C, AX @ C, BX @ C
    lam = theta
    P = np.zeros((X.shape[0], 0))
    res = np.full(b, np.inf)
    for it in range(1, maxiter + 1):
        R = pencil.project_residual(AX - BX * lam)
        res = pencil.residual_norms(R)
        if np.all(res[:nwant] <= tol):
            return lam, X, res, it - 1
        active = res > 1e-3 * tol
        Z = pencil.project(pencil.precond(R[:, active]))
        Q = np.hstack([Z, P])
        for _ in range(2):
            Q = Q - X @ pencil.dot(BX, Q)
            Q = pencil.project(Q)
        Q, BQ = _b_orthonormalize(pencil, Q)
        AQ = pencil.apply_a(Q)
        S = np.hstack([X, Q])
        AS = np.hstack([AX, AQ])
        BS = np.hstack([BX, BQ])
        GA = pencil.dot(S, AS)
        GB = pencil.dot(S, BS)
        try:
            theta, C = sla.eigh(0.5 * (GA + GA.T), 0.5 * (GB + GB.T))
        except np.linalg.LinAlgError:
            # lost B-orthogonality: restart from the current block
            P = np.zeros((X.shape[0], 0))
            continue
        Cx = C[:, :b]
        X, AX, BX = S @ Cx, AS @ Cx, BS @ Cx
        P = Q @ Cx[b:]
        lam = theta[:b]
        if it % 25 == 0:
            X, BX = _b_orthonormalize(pencil, X)
            AX = pencil.apply_a(X)
            GA = pencil.dot(X, AX)
            theta, C = sla.eigh(0.5 * (GA + GA.T), pencil.dot(X, BX))
            X, AX, BX, lam = X @ C, AX @ C, BX @ C, theta
            P = np.zeros((X.shape[0], 0))
    raise EigenSolverError(f"LOBPCG did not converge in {maxiter} iterations", float(res[:nwant].max()))


def default_block(grid: Grid, metric: str, size: int, guess: np.ndarray | None = None) -> np.ndarray:
    """Deterministic starting block: ``guess`` (if any), then low modes."""
    cols = []
    if guess is not None:
        cols.append(np.asarray(guess, dtype=float).ravel())
    if grid.dim == 1:
        (x,) = grid.coords
        L = grid.extent[0]
        t = x / L
        if grid.periodic:
            cols.append(np.sin(2 * np.pi * t))
            if metric == "l2":
                cols.append(np.ones_like(t))
            cols.append(np.exp(np.cos(2 * np.pi * (t - 0.3)) + 0.5 * np.sin(4 * np.pi * (t - 0.1))))
            for k in range(1, size + 2):
                cols += [np.cos(2 * np.pi * k * t), np.sin(2 * np.pi * (k + 1) * t)]
        else:
            cols.append(np.cos(np.pi * t))
            if metric == "l2":
                cols.append(np.ones_like(t))
            cols.append(np.exp(t + 0.7 * t * t) * (1.0 + 0.3 * np.cos(3 * np.pi * t)))
            for k in range(2, size + 3):
                cols.append(np.cos(k * np.pi * t))
    else:
        X, Y = grid.coords
        tx, ty = X / grid.extent[0], Y / grid.extent[1]
        cols.append(np.exp(np.cos(2 * np.pi * (tx - 0.3)) + 0.5 * np.sin(2 * np.pi * (ty - 0.1)) + 0.3 * np.cos(2 * np.pi * (tx + ty))).ravel())
        for kx, ky in [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (2, 1), (1, 2)]:
            cols.append(np.cos(2 * np.pi * (kx * tx + ky * ty)).ravel())
            cols.append(np.sin(2 * np.pi * (kx * tx + ky * ty)).ravel())
    return np.column_stack([c.ravel() for c in cols[:size]])


def translation_modes(grid: Grid, u: np.ndarray, metric: Metric) -> list[np.ndarray]:
    """Normalised discrete ``d u / d x_a`` for each periodic axis (zero ones skipped)."""
    if not grid.periodic:
        return []
    modes = []
    scale = max(float(np.max(np.abs(u))), 1e-300)
    for ax in range(grid.dim):
        t = centered_derivative(grid, u, ax)
        if float(np.max(np.abs(t))) <= 1e-10 * scale / min(grid.h):
            continue
        if metric.conserving:
            t = t - np.sum(grid.weights * t) / grid.volume
        nrm = metric.norm(t)
        if nrm > 0:
            modes.append(t / nrm)
    return modes


def deflate_translation(
    metric: Metric, v: np.ndarray, u: np.ndarray, threshold_deg: float = 10.0
) -> np.ndarray | None:
    """Return ``v`` if it is not a translation mode of ``u``, else ``None`` (retry).

    The angle is measured in ``metric`` against each normalised ``d u/d x_a``;
    within ``threshold_deg`` of 0 or 180 degrees triggers the retry signal.
    Constant states have no translation direction and never trigger.
    """
    modes = translation_modes(metric.grid, u, metric)
    if not modes:
        return v
    nv = metric.norm(v)
    cos_thr = math.cos(math.radians(threshold_deg))
    for t in modes:
        if abs(metric.inner(v, t)) / nv >= cos_thr:
            return None
    return v


def _solve(pencil: _Pencil, X0: np.ndarray, nwant: int, opts: EigOptions):
    lam, X, res, its = _lobpcg(pencil, X0, nwant, opts.tolerance, opts.max_iterations)
    order = np.argsort(lam)
    return lam[order], X[:, order], res[order], its


def _normalize(metric: Metric, v: np.ndarray) -> np.ndarray:
    v = v / metric.norm(v)
    # deterministic sign: largest-magnitude entry positive
    i = int(np.argmax(np.abs(v)))
    return v if v.flat[i] >= 0 else -v


def min_mode(
    model: Model, grid: Grid, u: np.ndarray, opts: EigOptions = EigOptions(), guess: np.ndarray | None = None
) -> EigPair:
    """Smallest eigenpair of the metric Hessian at ``u`` (after translation deflation)."""
    model.check_grid(grid)
    u = grid.check(u)
    metric = Metric(opts.metric, grid)
    pencil = _Pencil(model, grid, u, opts.metric)
    b = max(opts.block_size, 1)
    X0 = default_block(grid, opts.metric, b + 1, guess)[:, :b]
    lam, X, res, its = _solve(pencil, X0, 1, opts)
    v = _normalize(metric, X[:, 0].reshape(grid.shape))
    pair = EigPair(float(lam[0]), v, float(res[0]), its)
    if not (opts.deflate_translation and grid.periodic):
        return pair
    if deflate_translation(metric, v, u, opts.deflation_angle_threshold_deg) is not None:
        return pair
    modes = translation_modes(grid, u, metric)
    pencil.set_constraints(np.column_stack([t.ravel() for t in modes]))
    X0 = np.column_stack([X[:, 1:], default_block(grid, opts.metric, b + 1)[:, -1:]])
    lam, X, res, its2 = _solve(pencil, X0, 1, opts)
    v = _normalize(metric, X[:, 0].reshape(grid.shape))
    return EigPair(float(lam[0]), v, float(res[0]), its + its2, deflated=True)


def dense_spectrum(model: Model, grid: Grid, u: np.ndarray, metric: str = "l2", exclude=()) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs by dense assembly (1-D grids of modest size).

    ``exclude`` lists extra fields whose metric-orthogonal complement the
    problem is restricted to.  Eigenvectors are returned as columns in
    physical (unscaled) coordinates.
    """
    if grid.size > DENSE_LIMIT * DENSE_LIMIT // 64 and grid.dim != 1:
        raise ValueError("dense spectrum is only for small grids")
    w = grid.weights.ravel()
    s = np.sqrt(w)
    H = dense_hessian(model, grid, u)
    Hs = s[:, None] * H / s[None, :]
    Hs = 0.5 * (Hs + Hs.T)
    cons = []
    if metric == "hminus1":
        cons.append(s)  # mass functional in scaled coordinates
        n = grid.size
        K = np.empty((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            K[:, i] = _inv_neg_laplacian(grid, e.reshape(grid.shape)).ravel()
            e[i] = 0.0
        Ks = s[:, None] * K / s[None, :]
        Ks = 0.5 * (Ks + Ks.T)
    else:
        Ks = np.eye(grid.size)
    for t in exclude:
        # orthogonality in the metric: t^T W B x = 0 -> (Ks s t)^T y = 0 in scaled coords
        cons.append(Ks @ (s * np.asarray(t).ravel()))
    if cons:
        Q = sla.null_space(np.vstack(cons))
        A = Q.T @ Hs @ Q
        B = Q.T @ Ks @ Q
        lam, Y = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
        V = (Q @ Y) / s[:, None]
    else:
        lam, Y = sla.eigh(Hs)
        V = Y / s[:, None]
    return lam, V


def spectrum_head(
    model: Model, grid: Grid, u: np.ndarray, k: int = 3, metric: str = "l2", tolerance: float = 1e-9, max_iterations: int = 2000
) -> np.ndarray:
    """The ``k`` smallest eigenvalues (mass-constrained in H^-1, no deflation)."""
    if k > 10:
        raise ValueError("spectrum_head supports k <= 10")
    model.check_grid(grid)
    u = grid.check(u)
    if grid.dim == 1 and grid.size <= DENSE_LIMIT:
        lam, _ = dense_spectrum(model, grid, u, metric)
        return lam[:k]
    pencil = _Pencil(model, grid, u, metric)
    X0 = default_block(grid, metric, k + 3)
    if grid.periodic:
        X0 = np.column_stack([np.column_stack([centered_derivative(grid, u, a).ravel() for a in range(grid.dim)]), X0])
    lam, _, _, _ = _solve(pencil, X0[:, : k + 3], k, EigOptions(metric=metric, tolerance=tolerance, max_iterations=max_iterations))
    return lam[:k]


def metric_residual(model: Model, grid: Grid, u: np.ndarray, pair: EigPair, metric: str) -> float:
    """``||H_metric v - lambda v||_metric`` evaluated from scratch."""
    hv = model.hessian_apply(grid, u, pair.vector)
    if metric == "l2":
        r = hv - pair.value * pair.vector
        return float(np.sqrt(np.sum(grid.weights * r * r)))
    r = -laplacian(grid, hv) - pair.value * pair.vector
    # ||r||_{H^-1}^2 = <(-Delta)^-1 r, r>
    return float(np.sqrt(max(np.sum(grid.weights * _inv_neg_laplacian(grid, r) * r), 0.0)))
