"""Initial conditions for saddle searches and relaxations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Grid, load_field, mean

KINDS = (
    "cos_pi_x",
    "cos_2pi_x",
    "sin_2pi_x",
    "constant",
    "tanh_layer",
    "lamellar",
    "cylinder_seed",
    "file",
)
ONE_D = ("cos_pi_x", "cos_2pi_x", "sin_2pi_x", "tanh_layer")
TWO_D = ("lamellar", "cylinder_seed")


@dataclass(frozen=True)
class InitialCondition:
    """Descriptor for an initial field.

    ``tanh_layer`` is ``amplitude * tanh((x - center) / width)`` when
    ``half_length`` is unset, and a slab of half length ``half_length``
    centred at ``center`` otherwise.  ``mass``, when set, shifts the field so
    its mean equals ``mass``.  ``wavevector`` holds the integer mode indices
    ``(a, b)`` of a lamellar seed ``amplitude * cos(2 pi (a x / Lx + b y / Ly))``.
    """

    kind: str
    mass: float | None = None
    amplitude: float | None = None
    width: float = 0.1
    center: float = 0.0
    half_length: float | None = None
    wavevector: tuple[int, int] = (0, 4)
    path: str | None = None
    perturbation: float = 0.0
    seed: int | None = None
    smoothing: float = 0.05

    def problems(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            out.append(f"unknown init kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        if self.kind == "constant" and self.mass is None:
            out.append("init=constant needs init_mass")
        if self.kind == "file" and not self.path:
            out.append("init=file needs init_path")
        if self.kind == "tanh_layer" and self.width <= 0:
            out.append(f"init_width must be positive, got {self.width}")
        if self.perturbation < 0:
            out.append(f"perturbation must be non-negative, got {self.perturbation}")
        if self.perturbation > 0 and self.seed is None:
            out.append("perturbation > 0 needs a seed")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            out.append(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        return out


def smooth_noise(grid: Grid, seed: int, length: float) -> np.ndarray:
    """Deterministic smooth random field with max-abs 1 and zero mean."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(grid.shape)
    scale = length * length * grid.neg_laplacian_symbol
    out = grid.apply_symbol(1.0 / (1.0 + scale) ** 2, noise)
    out = out - mean(grid, out)
    return out / np.max(np.abs(out))


def _pin_mass(grid: Grid, u: np.ndarray, m: float) -> np.ndarray:
    return u + (m - mean(grid, u))


def make_initial(ic: InitialCondition, grid: Grid) -> np.ndarray:
    """Build the field described by ``ic`` on ``grid``.

    A perturbation is added after construction; the mean is restored so
    mass-conserving runs keep the unperturbed mass.
    """
    bad = ic.problems()
    if bad:
        raise ValueError("; ".join(bad))
    if ic.kind in ONE_D and grid.dim != 1:
        raise ValueError(f"init {ic.kind} needs a 1-D grid")
    if ic.kind in TWO_D and grid.dim != 2:
        raise ValueError(f"init {ic.kind} needs a 2-D grid")

    k = ic.kind
    if k == "file":
        fld = load_field(ic.path)
        if fld.grid != grid:
            raise ValueError(f"field in {ic.path} lives on {fld.grid}, expected {grid}")
        u = fld.values.copy()
    elif k == "constant":
        u = np.full(grid.shape, float(ic.mass))
    elif k in ("cos_pi_x", "cos_2pi_x", "sin_2pi_x"):
        x = grid.coords[0] / grid.extent[0]
        amp = 1.0 if ic.amplitude is None else ic.amplitude
        u = amp * {"cos_pi_x": np.cos(np.pi * x), "cos_2pi_x": np.cos(2 * np.pi * x), "sin_2pi_x": np.sin(2 * np.pi * x)}[k]
    elif k == "tanh_layer":
        x = grid.coords[0]
        amp = 1.0 if ic.amplitude is None else ic.amplitude
        if ic.half_length is None:
            u = amp * np.tanh((x - ic.center) / ic.width)
        else:
            a = ic.half_length
            u = 0.5 * amp * (np.tanh((x - ic.center + a) / ic.width) - np.tanh((x - ic.center - a) / ic.width))
    elif k == "lamellar":
        X, Y = grid.coords
        (lx, ly), (a, b) = grid.extent, ic.wavevector
        amp = 0.5 if ic.amplitude is None else ic.amplitude
        u = amp * np.cos(2 * np.pi * (a * X / lx + b * Y / ly))
    else:  # cylinder_seed
        X, Y = grid.coords
        amp = 0.5 if ic.amplitude is None else ic.amplitude
        s = math.sqrt(3.0) / 2.0
        u = amp * (np.cos(Y) + np.cos(s * X + Y / 2) + np.cos(s * X - Y / 2))

    if ic.mass is not None and k != "constant":
        u = _pin_mass(grid, u, ic.mass)
    elif k in TWO_D:
        u = _pin_mass(grid, u, 0.0)
    if ic.perturbation > 0:
        m0 = mean(grid, u)
        u = _pin_mass(grid, u + ic.perturbation * smooth_noise(grid, ic.seed, ic.smoothing * max(grid.extent)), m0)
    return u


__all__ = ["InitialCondition", "KINDS", "make_initial", "smooth_noise"]
