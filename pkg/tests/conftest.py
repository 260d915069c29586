"""Shared dense-matrix oracles and the acceptance summary hook.

The oracles are assembled entry by entry from the stencil definitions and
never call the transform solvers under test.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def neg_laplacian_1d(n_nodes: int, h: float, periodic: bool) -> np.ndarray:
    A = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        if periodic:
            left, right = (i - 1) % n_nodes, (i + 1) % n_nodes
        else:
            # mirror ghost nodes
            left = 1 if i == 0 else i - 1
            right = n_nodes - 2 if i == n_nodes - 1 else i + 1
        A[i, i] += 2.0
        A[i, left] -= 1.0
        A[i, right] -= 1.0
    return A / h**2


def dense_neg_laplacian(grid) -> np.ndarray:
    if grid.dim == 1:
        return neg_laplacian_1d(grid.shape[0], grid.h[0], grid.periodic)
    ax = [neg_laplacian_1d(s, h, True) for s, h in zip(grid.shape, grid.h)]
    return np.kron(ax[0], np.eye(grid.shape[1])) + np.kron(np.eye(grid.shape[0]), ax[1])


def dense_inv_neg_laplacian(grid) -> np.ndarray:
    """``K`` with ``A K x = x - mean(x)`` and ``K x`` of zero weighted mean."""
    A = dense_neg_laplacian(grid)
    w = grid.weights.ravel()
    n = grid.size
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = 1.0
    aug[n, :n] = w
    rhs = np.zeros((n + 1, n))
    rhs[:n] = np.eye(n) - np.outer(np.ones(n), w) / w.sum()
    return np.linalg.solve(aug, rhs)[:n]


def gl_dense_hessian(grid, kappa: float, u: np.ndarray) -> np.ndarray:
    return kappa**2 * dense_neg_laplacian(grid) + np.diag(3.0 * u.ravel() ** 2 - 1.0)


def lb_dense_hessian(grid, model, u: np.ndarray) -> np.ndarray:
    A = dense_neg_laplacian(grid)
    M = np.eye(grid.size) - A
    x = u.ravel()
    local = model.tau - model.gamma * x + 0.5 * x * x
    return model.xi**2 * M @ M + np.diag(local)


def lowest_l2(grid, H: np.ndarray, exclude=()) -> np.ndarray:
    """Eigenvalues of ``H`` self-adjoint in the weighted inner product, ascending."""
    W = np.diag(grid.weights.ravel())
    S = W @ H
    S = 0.5 * (S + S.T)
    if not exclude:
        return sla.eigh(S, W, eigvals_only=True)
    C = np.vstack([W @ np.ravel(t) for t in exclude])
    Q = sla.null_space(C)
    A = Q.T @ S @ Q
    return sla.eigh(0.5 * (A + A.T), Q.T @ W @ Q, eigvals_only=True)


def lowest_hm1(grid, H: np.ndarray, exclude=()) -> np.ndarray:
    """Eigenvalues of ``-Delta H`` on zero-mass fields, optionally H^-1-orthogonal to ``exclude``."""
    W = np.diag(grid.weights.ravel())
    K = dense_inv_neg_laplacian(grid)
    rows = [grid.weights.ravel()]
    rows += [np.ravel(t) @ K.T @ W for t in exclude]
    Q = sla.null_space(np.vstack(rows))
    A = Q.T @ W @ H @ Q
    B = Q.T @ W @ K @ Q
    return sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# one (label, passed, detail) entry per acceptance criterion, filled by test_acceptance
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
