"""Grids, discrete differential operators and the L2 / H^-1 inner products.

Fields are plain ``numpy`` arrays whose shape matches ``Grid.shape``; the grid
is passed alongside.  Periodic axes store ``n`` nodes, a Neumann axis stores
``n + 1`` nodes (both end points).  All constant-coefficient operators are
diagonal in the discrete Fourier (periodic) or DCT-I (Neumann) basis, which is
what the transform helpers below expose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

NEUMANN = "neumann"
PERIODIC = "periodic"
ZERO_MEAN_RTOL = 1e-10


class ZeroMeanError(ValueError):
    """Raised when an H^-1 operation receives a field with nonzero mass."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[0, extent_0] x ...``.

    ``n`` counts intervals per axis, so ``h = extent / n``.
    """

    n: tuple[int, ...]
    extent: tuple[float, ...]
    bc: str = PERIODIC

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "extent", extent)
        if len(n) not in (1, 2) or len(extent) != len(n):
            raise ValueError(f"grid must be 1-D or 2-D with one extent per axis, got n={n}, extent={extent}")
        if min(n) < 2 or min(extent) <= 0:
            raise ValueError(f"need n >= 2 and positive extent, got n={n}, extent={extent}")
        if self.bc not in (NEUMANN, PERIODIC):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.bc == NEUMANN and len(n) == 2:
            raise ValueError("2-D grids are periodic-only")

    @classmethod
    def line(cls, n: int, extent: float = 1.0, bc: str = PERIODIC) -> "Grid":
        return cls((n,), (extent,), bc)

    @classmethod
    def rect(cls, nx: int, ny: int, lx: float, ly: float) -> "Grid":
        return cls((nx, ny), (lx, ly), PERIODIC)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(k if self.periodic else k + 1 for k in self.n)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / k for e, k in zip(self.extent, self.n))

    @property
    def volume(self) -> float:
        return math.prod(self.extent)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, broadcastable (``indexing='ij'``)."""
        axes = [np.arange(s) * h for s, h in zip(self.shape, self.h)]
        return tuple(np.meshgrid(*axes, indexing="ij")) if self.dim == 2 else (axes[0],)

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: rectangle rule (periodic), trapezoid (Neumann)."""
        w = np.full(self.shape, math.prod(self.h))
        if not self.periodic:
            w[0] *= 0.5
            w[-1] *= 0.5
        w.setflags(write=False)
        return w

    # -- transform basis -------------------------------------------------
    @cached_property
    def neg_laplacian_symbol(self) -> np.ndarray:
        """Eigenvalues of the discrete ``-Delta`` in the transform basis (>= 0)."""
        if not self.periodic:
            (n,), (h,) = self.n, self.h
            j = np.arange(n + 1)
            return (4.0 / h**2) * np.sin(np.pi * j / (2 * n)) ** 2
        parts = []
        for ax, (n, h) in enumerate(zip(self.n, self.h)):
            last = ax == self.dim - 1
            j = sfft.rfftfreq(n) * n if last else sfft.fftfreq(n) * n
            s = (4.0 / h**2) * np.sin(np.pi * j / n) ** 2
            parts.append(s.reshape([-1 if a == ax else 1 for a in range(self.dim)]))
        return sum(parts[1:], parts[0]) if self.dim > 1 else parts[0]

    def forward(self, u: np.ndarray) -> np.ndarray:
        if not self.periodic:
            return sfft.dct(u, type=1)
        return sfft.rfftn(u)

    def backward(self, uh: np.ndarray) -> np.ndarray:
        if not self.periodic:
            return sfft.idct(uh, type=1)
        return sfft.irfftn(uh, s=self.shape)

    def apply_symbol(self, symbol: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Apply a diagonal-in-transform-basis operator given its multipliers."""
        return self.backward(symbol * self.forward(u))

    def check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"field shape {u.shape} does not match grid shape {self.shape}")
        return u


def laplacian(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Second-order 3-point / 5-point Laplacian.

    Neumann ends use mirror ghosts (``u[-1] = u[1]``), periodic axes wrap.
    """
    u = grid.check(u)
    out = np.zeros_like(u)
    for ax, h in enumerate(grid.h):
        if grid.periodic:
            out += (np.roll(u, 1, ax) - 2.0 * u + np.roll(u, -1, ax)) / h**2
        else:
            up = np.pad(u, 1, mode="reflect")
            out += (up[:-2] - 2.0 * u + up[2:]) / h**2
    return out


def helmholtz_sq(grid: Grid, u: np.ndarray) -> np.ndarray:
    """``(Delta + 1)^2 u`` on a periodic grid."""
    if not grid.periodic:
        raise ValueError("helmholtz_sq is only defined on periodic grids")
    once = laplacian(grid, u) + u
    return laplacian(grid, once) + once


def gradient_sq_integral(grid: Grid, u: np.ndarray) -> float:
    """Integral of ``|grad u|^2`` with differences on cell midpoints.

    Equals ``-<u, laplacian(u)>`` exactly (summation by parts) for both
    boundary conditions.
    """
    u = grid.check(u)
    total = 0.0
    cell = math.prod(grid.h)
    for ax, h in enumerate(grid.h):
        d = np.roll(u, -1, ax) - u if grid.periodic else np.diff(u, axis=ax)
        total += cell * np.sum(d * d) / h**2
    return float(total)


def mass(grid: Grid, u: np.ndarray) -> float:
    return float(np.sum(grid.weights * u))


def mean(grid: Grid, u: np.ndarray) -> float:
    return mass(grid, u) / grid.volume


def project_zero_mean(grid: Grid, u: np.ndarray) -> np.ndarray:
    u = grid.check(u)
    return u - mean(grid, u)


def l2_inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    return float(np.sum(grid.weights * (f * g)))


def l2_norm(grid: Grid, f: np.ndarray) -> float:
    return math.sqrt(max(l2_inner(grid, f, f), 0.0))


def check_zero_mean(grid: Grid, u: np.ndarray, what: str = "field") -> None:
    m = mean(grid, u)
    scale = l2_norm(grid, u) / math.sqrt(grid.volume)
    if abs(m) > ZERO_MEAN_RTOL * scale:
        raise ZeroMeanError(f"{what} must have zero mean, measured mean {m:.3e}")


def inv_neg_laplacian_zero_mean(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Solve ``-Delta_h w = u`` with ``mass(w) = 0`` for zero-mean ``u``."""
    u = grid.check(u)
    check_zero_mean(grid, u)
    return _inv_neg_laplacian(grid, u)


def _inv_neg_laplacian(grid: Grid, u: np.ndarray) -> np.ndarray:
    # no mean check; the zero mode is dropped
    uh = grid.forward(u)
    mu = grid.neg_laplacian_symbol
    inv = np.zeros_like(mu)
    np.divide(1.0, mu, out=inv, where=mu > 0)
    inv.flat[0] = 0.0
    return grid.backward(uh * inv)


def centered_derivative(grid: Grid, u: np.ndarray, axis: int = 0) -> np.ndarray:
    """Centered first difference along ``axis`` (periodic wrap, Neumann mirror)."""
    u = grid.check(u)
    h = grid.h[axis]
    if grid.periodic:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2.0 * h)
    up = np.pad(u, 1, mode="reflect")
    return (up[2:] - up[:-2]) / (2.0 * h)


@dataclass(frozen=True)
class Metric:
    """Inner-product context for gradient flows: ``"l2"`` or ``"hminus1"``."""

    kind: str
    grid: Grid

    def __post_init__(self):
        if self.kind not in ("l2", "hminus1"):
            raise ValueError(f"unknown metric {self.kind!r}")

    @property
    def conserving(self) -> bool:
        return self.kind == "hminus1"

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        if self.kind == "l2":
            return l2_inner(self.grid, f, g)
        check_zero_mean(self.grid, g, "second argument")
        return l2_inner(self.grid, inv_neg_laplacian_zero_mean(self.grid, f), g)

    def norm(self, f: np.ndarray) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def representer(self, v: np.ndarray) -> np.ndarray:
        """L2 representer of ``<v, .>`` in this metric (``v`` or ``(-Delta)^-1 v``)."""
        if self.kind == "l2":
            return np.array(v, dtype=float)
        return inv_neg_laplacian_zero_mean(self.grid, v)

    def riesz(self, g: np.ndarray) -> np.ndarray:
        """Map an L2 gradient to the gradient in this metric."""
        if self.kind == "l2":
            return g
        return -laplacian(self.grid, g)

    def gradient_norm(self, g: np.ndarray) -> float:
        """Norm of the metric gradient built from the L2 gradient ``g``.

        For H^-1 this is ``||-Delta g||_{H^-1} = sqrt(<g, -Delta g>)``, which
        never needs the inverse Laplacian.
        """
        if self.kind == "l2":
            return l2_norm(self.grid, g)
        return math.sqrt(max(gradient_sq_integral(self.grid, g), 0.0))


def inner(metric: Metric, f: np.ndarray, g: np.ndarray) -> float:
    return metric.inner(f, g)


# -- persistence -------------------------------------------------------------


@dataclass
class Field:
    """A field together with the grid it lives on (used for file I/O)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = self.grid.check(self.values)


def save_field(path: str | Path, grid: Grid, values: np.ndarray) -> None:
    values = grid.check(values)
    header = (
        f"# field dim={grid.dim} n={','.join(map(str, grid.n))} "
        f"extent={','.join(repr(e) for e in grid.extent)} bc={grid.bc}"
    )
    body = "\n".join(format(x, ".17g") for x in values.ravel(order="C"))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(header + "\n" + body + "\n")
    tmp.replace(path)


def load_field(path: str | Path) -> Field:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# field"):
        raise ValueError(f"{path}: missing '# field' header")
    meta = dict(tok.split("=", 1) for tok in lines[0][len("# field"):].split())
    try:
        n = tuple(int(k) for k in meta["n"].split(","))
        extent = tuple(float(e) for e in meta["extent"].split(","))
        dim = int(meta["dim"])
        bc = meta["bc"]
    except KeyError as exc:
        raise ValueError(f"{path}: header lacks {exc.args[0]!r}") from None
    if dim != len(n):
        raise ValueError(f"{path}: dim={dim} but n has {len(n)} entries")
    grid = Grid(n, extent, bc)
    values = np.array([float(s) for s in lines[1:] if s.strip()])
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {values.size}")
    return Field(grid, values.reshape(grid.shape))
