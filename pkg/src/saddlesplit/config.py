"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment.  Numbers may be written
as simple arithmetic over ``pi`` and ``sqrt`` (``lx = 16*pi/sqrt(3)``).
Every problem in a file is collected and reported together with its line
number; unknown keys are errors.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, replace
from pathlib import Path

from .energy import GinzburgLandau1D, LandauBrazovskii2D
from .fields import NEUMANN, PERIODIC, Grid
from .imf import IMFOptions, InnerStop
from .initial import InitialCondition

LB_LX = 16 * math.pi / math.sqrt(3)
LB_LY = 8 * math.pi


class ConfigError(ValueError):
    """One or more configuration problems; ``problems`` lists them all."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt}


def eval_number(text: str) -> float:
    """Evaluate a restricted arithmetic expression."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and len(node.args) == 1:
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"not a number: {text!r}")

    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None
    return ev(tree)


def _int(text: str) -> int:
    v = eval_number(text)
    if float(v) != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _pair(text: str) -> tuple[int, int]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return _int(parts[0]), _int(parts[1])


def _str(text: str) -> str:
    return text.strip()


# key -> parser; defaults live on ExperimentSpec
KEYS = {
    "name": _str,
    "mode": _str,
    "model": _str,
    "kappa": eval_number,
    "c": eval_number,
    "tau": eval_number,
    "xi": eval_number,
    "gamma": eval_number,
    "n": _int,
    "nx": _int,
    "ny": _int,
    "extent": eval_number,
    "lx": eval_number,
    "ly": eval_number,
    "bc": _str,
    "metric": _str,
    "init": _str,
    "init_mass": eval_number,
    "init_amplitude": eval_number,
    "init_width": eval_number,
    "init_center": eval_number,
    "init_half_length": eval_number,
    "init_wavevector": _pair,
    "init_path": _str,
    "perturbation": eval_number,
    "seed": _int,
    "scheme": _str,
    "dt": eval_number,
    "inner_tolerance": eval_number,
    "inner_cap": _int,
    "max_inner_iterations": _int,
    "outer_tolerance": eval_number,
    "max_cycles": _int,
    "alpha": eval_number,
    "beta": eval_number,
    "eig_tolerance": eval_number,
    "deflate_translation": _bool,
    "guard_cap": _int,
    "relax_tolerance": eval_number,
    "out": _str,
}

REQUIRED = ("model", "init", "scheme", "dt")
MODES = ("imf", "relax")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to run one saddle search or relaxation.

    Defaults: 1-D grids have ``n = 200`` intervals on ``[0, 1]``; 2-D grids
    are 100 x 100 on ``[0, 16 pi / sqrt 3] x [0, 8 pi]``.  The metric
    defaults to L2 for ``gl1d`` and H^-1 for ``lb2d``; ``bc`` defaults to
    Neumann in 1-D.  Without ``inner_cap`` or ``inner_tolerance`` the inner
    flow runs to ``1e-8``.
    """

    model: str
    init: InitialCondition
    scheme: str
    dt: float
    name: str = "run"
    mode: str = "imf"
    params: dict = field(default_factory=dict)
    n: tuple[int, ...] | None = None
    extent: tuple[float, ...] | None = None
    bc: str | None = None
    metric: str | None = None
    inner_tolerance: float | None = None
    inner_cap: int | None = None
    max_inner_iterations: int = 200_000
    outer_tolerance: float = 1e-8
    max_cycles: int = 500
    alpha: float = 0.0
    beta: float = 2.0
    eig_tolerance: float = 1e-9
    deflate_translation: bool = True
    guard_cap: int = 50
    relax_tolerance: float = 1e-8
    out: str | None = None

    @property
    def seed(self) -> int | None:
        return self.init.seed

    def build_model(self):
        if self.model == "gl1d":
            return GinzburgLandau1D(**self.params)
        return LandauBrazovskii2D(**self.params)

    def build_grid(self) -> Grid:
        if self.model == "lb2d":
            n = self.n or (100, 100)
            extent = self.extent or (LB_LX, LB_LY)
            return Grid(n, extent, self.bc or PERIODIC)
        return Grid(self.n or (200,), self.extent or (1.0,), self.bc or NEUMANN)

    @property
    def metric_kind(self) -> str:
        return self.metric or ("hminus1" if self.model == "lb2d" else "l2")

    def inner_stop(self) -> InnerStop:
        tol = self.inner_tolerance
        if tol is None and self.inner_cap is None:
            tol = 1e-8
        return InnerStop(tolerance=tol, cap=self.inner_cap, max_iterations=self.max_inner_iterations)

    def imf_options(self) -> IMFOptions:
        return IMFOptions(
            metric=self.metric_kind,
            scheme=self.scheme,
            dt=self.dt,
            stop=self.inner_stop(),
            outer_tolerance=self.outer_tolerance,
            max_cycles=self.max_cycles,
            alpha=self.alpha,
            beta=self.beta,
            eig_tolerance=self.eig_tolerance,
            deflate_translation=self.deflate_translation,
            guard_cap=self.guard_cap,
        )

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, init=replace(self.init, seed=seed))

    def problems(self) -> list[str]:
        out = []
        if self.model not in ("gl1d", "lb2d"):
            out.append(f"model must be gl1d or lb2d, got {self.model!r}")
        if self.mode not in MODES:
            out.append(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.scheme not in ("cs", "ncs"):
            out.append(f"scheme must be cs or ncs, got {self.scheme!r}")
        if not self.dt > 0:
            out.append(f"dt must be positive, got {self.dt}")
        if self.bc is not None and self.bc not in (NEUMANN, PERIODIC):
            out.append(f"bc must be neumann or periodic, got {self.bc!r}")
        if self.model == "lb2d" and self.bc == NEUMANN:
            out.append("model lb2d is periodic-only; bc=neumann is not allowed")
        if self.metric is not None and self.metric not in ("l2", "hminus1"):
            out.append(f"metric must be l2 or hminus1, got {self.metric!r}")
        if self.model == "lb2d" and self.metric == "l2":
            out.append("model lb2d runs in the hminus1 metric only")
        if self.model == "lb2d" and self.n is not None and len(self.n) != 2:
            out.append("model lb2d needs nx and ny")
        if self.model == "gl1d" and self.n is not None and len(self.n) != 1:
            out.append("model gl1d needs n, not nx/ny")
        if self.inner_cap is not None and self.inner_cap < 0:
            out.append("inner_cap must be non-negative")
        if self.inner_tolerance is not None and not self.inner_tolerance > 0:
            out.append("inner_tolerance must be positive")
        if not self.outer_tolerance > 0:
            out.append("outer_tolerance must be positive")
        if self.alpha != 0.0:
            out.append(f"alpha must be 0 (the linear steppers implement alpha = 0 only), got {self.alpha}")
        if self.max_cycles < 0:
            out.append("max_cycles must be non-negative")
        allowed = {"gl1d": {"kappa", "c"}, "lb2d": {"tau", "xi", "gamma", "c"}}.get(self.model, set())
        for key in sorted(set(self.params) - allowed):
            out.append(f"parameter {key} does not apply to model {self.model}")
        out.extend(self.init.problems())
        return out

    def validate(self) -> "ExperimentSpec":
        bad = self.problems()
        if bad:
            raise ConfigError(bad)
        return self


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    """Parse config text; raise :class:`ConfigError` listing every problem."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    problems: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"{source}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
            continue
        seen.add(key)
        lines[key] = lineno
        try:
            values[key] = KEYS[key](value)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            problems.append(f"{source}:{lineno}: {key}: {exc}")
    for key in REQUIRED:
        if key not in seen:
            problems.append(f"{source}: missing required key {key!r}")

    spec = None
    if all(key in values for key in REQUIRED):
        spec = spec_from_values(values)
        problems.extend(f"{source}: {b}" for b in spec.problems())
    if problems:
        raise ConfigError(problems)
    return spec


def spec_from_values(values: dict) -> ExperimentSpec:
    v = dict(values)
    params = {k: v.pop(k) for k in ("kappa", "c", "tau", "xi", "gamma") if k in v}
    init = InitialCondition(
        kind=v.pop("init"),
        mass=v.pop("init_mass", None),
        amplitude=v.pop("init_amplitude", None),
        width=v.pop("init_width", 0.1),
        center=v.pop("init_center", 0.0),
        half_length=v.pop("init_half_length", None),
        wavevector=v.pop("init_wavevector", (0, 4)),
        path=v.pop("init_path", None),
        perturbation=v.pop("perturbation", 0.0),
        seed=v.pop("seed", None),
    )
    n = extent = None
    if "n" in v:
        n = (v.pop("n"),)
    if "nx" in v or "ny" in v:
        n = (v.pop("nx", 100), v.pop("ny", 100))
    if "extent" in v:
        extent = (v.pop("extent"),)
    if "lx" in v or "ly" in v:
        extent = (v.pop("lx", LB_LX), v.pop("ly", LB_LY))
    return ExperimentSpec(params=params, init=init, n=n, extent=extent, **v)


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


__all__ = ["ConfigError", "ExperimentSpec", "KEYS", "eval_number", "load_config", "parse_config"]
