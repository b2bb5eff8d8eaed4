"""Fuzzy Laplace transform method for partial Volterra integro-differential equations.

The equation is held in one-sided form::

    sum_i a_i(x) d^i u/dx^i + sum_i b_i(x) d^i u/dt^i + c(x) u + f(x, t)
        = sign * int_0^t k(t - s) u(x, s) ds

Each fuzzy datum (forcing, initial and boundary values) is a fuzzy pair
``(lower, upper)`` in r multiplied by an optional crisp factor, and every
branch of the solution satisfies the crisp equation built from the same
branch of the data.  Transforming in t turns each branch into a linear
ODE in x per (r, p); these are solved numerically and the solution is
recovered by Gaver-Stehfest inversion.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .fuzzy import FuzzyField, MembershipGrid, NoHukuharaDifference, validate_arrays
from .laplace import (LN2, ExprTransform, TransformError, TransformSettings,
                      check_stehfest_order, stehfest_nodes, stehfest_weights)

log = logging.getLogger(__name__)

BRANCHES = ("lower", "upper")
BLOWUP = 1e12
# forward march is trusted while homogeneous growth stays below this factor
MAX_FORWARD_GROWTH = 10.0
# decay (in e-folds) of the start-value error in the backward march
EXTENSION_EFOLDS = 40.0
# below this decay the backward march is not trusted
MIN_EFOLDS = 30.0

COEF_VARS = frozenset({"x"})
KERNEL_VARS = frozenset({"t"})
FORCING_VARS = frozenset({"x", "t", "r"})
INITIAL_VARS = frozenset({"x", "r"})
BOUNDARY_VARS = frozenset({"t", "r"})


class ProblemError(ValueError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


class SolverError(ArithmeticError):
    pass


class OdeBlowUpError(SolverError):
    pass


class ShootingError(SolverError):
    pass


class FuzzyValidityWarning(UserWarning):
    pass


class HukuharaWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FuzzyDatum:
    """Fuzzy pair in r times a crisp factor; branch ``b`` is ``b * factor``."""

    lower: ex.Node
    upper: ex.Node
    factor: ex.Node = ex.Num(1.0)

    def branch(self, which: str) -> ex.Node:
        return ex.mul(self.lower if which == "lower" else self.upper, self.factor)

    @classmethod
    def parse(cls, lower: str, upper: str, factor: str | None, pair_vars, factor_vars) -> "FuzzyDatum":
        f = ex.parse(factor, factor_vars) if factor is not None else ex.Num(1.0)
        return cls(ex.parse(lower, pair_vars), ex.parse(upper, pair_vars), f)

    @classmethod
    def crisp(cls, node: ex.Node) -> "FuzzyDatum":
        return cls(node, node)


@dataclass(frozen=True)
class BoundaryCondition:
    location: str          # "x0" or "x1"
    order: int             # 0: value, 1: first x-derivative
    data: FuzzyDatum


@dataclass(frozen=True)
class ProblemSpec:
    m: int
    n: int
    a: tuple[ex.Node, ...]
    b: tuple[ex.Node, ...]
    c: ex.Node
    kernel: ex.Node
    kernel_sign: int
    forcing: FuzzyDatum
    initial: tuple[FuzzyDatum, ...]
    boundary: tuple[BoundaryCondition, ...]
    x0: float
    x1: float
    T: float

    def location(self, name: str) -> float:
        return self.x0 if name == "x0" else self.x1

    def is_crisp(self) -> bool:
        data = [self.forcing, *self.initial, *(bc.data for bc in self.boundary)]
        return all(d.lower == d.upper for d in data)

    def check(self, n_samples: int = 41, r_levels: int = 11) -> None:
        """Raise ProblemError listing every violated ingestion rule."""
        problems = _structure_problems(self)
        if problems:
            raise ProblemError(problems)
        xs = np.linspace(self.x0, self.x1, n_samples)
        ts = np.linspace(0.0, self.T, n_samples)
        rs = np.linspace(0.0, 1.0, r_levels)
        try:
            problems += _sign_problems(self, xs, ts)
            problems += _ordering_problems(self, xs, ts, rs)
        except ex.ExprError as e:
            problems.append(f"expression cannot be evaluated on the domain: {e}")
        if problems:
            raise ProblemError(problems)


def _structure_problems(spec: ProblemSpec) -> list[str]:
    out = []
    if spec.m not in (1, 2):
        out.append(f"x-derivative order m={spec.m} must be 1 or 2")
    if spec.n not in (0, 1, 2):
        out.append(f"t-derivative order n={spec.n} must be 0, 1 or 2")
    if len(spec.a) != spec.m + 1:
        out.append(f"expected {spec.m + 1} coefficients a0..a{spec.m}, got {len(spec.a)}")
    if len(spec.b) != spec.n + 1:
        out.append(f"expected {spec.n + 1} coefficients b0..b{spec.n}, got {len(spec.b)}")
    if len(spec.initial) != spec.n:
        out.append(f"expected {spec.n} initial conditions, got {len(spec.initial)}")
    if len(spec.boundary) != spec.m:
        out.append(f"expected {spec.m} boundary conditions, got {len(spec.boundary)}")
    if spec.kernel_sign not in (1, -1):
        out.append("kernel_sign must be +1 or -1")
    if not spec.x0 < spec.x1:
        out.append(f"domain needs x0 < x1, got [{spec.x0}, {spec.x1}]")
    if not spec.T > 0:
        out.append("T must be positive")
    seen = set()
    for bc in spec.boundary:
        if bc.location not in ("x0", "x1"):
            out.append(f"boundary location {bc.location!r} must be x0 or x1")
        if bc.order not in (0, 1):
            out.append(f"boundary derivative order {bc.order} not supported for m={spec.m}")
        if (bc.location, bc.order) in seen:
            out.append(f"duplicate boundary condition of order {bc.order} at {bc.location}")
        seen.add((bc.location, bc.order))
    scopes = [(spec.a + spec.b + (spec.c,), COEF_VARS, "coefficient"), ((spec.kernel,), KERNEL_VARS, "kernel")]
    scopes += [((spec.forcing.lower, spec.forcing.upper), FORCING_VARS, "forcing"),
               ((spec.forcing.factor,), FORCING_VARS - {"r"}, "forcing factor")]
    for d in spec.initial:
        scopes += [((d.lower, d.upper), INITIAL_VARS, "initial condition"),
                   ((d.factor,), INITIAL_VARS - {"r"}, "initial factor")]
    for bc in spec.boundary:
        scopes += [((bc.data.lower, bc.data.upper), BOUNDARY_VARS, "boundary condition"),
                   ((bc.data.factor,), BOUNDARY_VARS - {"r"}, "boundary factor")]
    for nodes, allowed, what in scopes:
        for node in nodes:
            extra = ex.free_vars(node) - allowed
            if extra:
                out.append(f"{what} '{ex.to_string(node)}' uses {sorted(extra)}, allowed {sorted(allowed)}")
    return out


def _sample(node: ex.Node, shape, **env):
    return np.broadcast_to(np.asarray(ex.evaluate(node, env), dtype=float), shape)


def _has_both_signs(v, tol=1e-12) -> bool:
    return bool(np.any(v > tol) and np.any(v < -tol))


def _sign_problems(spec: ProblemSpec, xs, ts) -> list[str]:
    out = []
    named = [(f"a{i}", a) for i, a in enumerate(spec.a)] + [(f"b{i}", b) for i, b in enumerate(spec.b)]
    for name, node in named + [("c", spec.c)]:
        if _has_both_signs(_sample(node, xs.shape, x=xs)):
            out.append(f"coefficient {name} = '{ex.to_string(node)}' changes sign on [{spec.x0}, {spec.x1}]; "
                       "the lower and upper branches would not decouple")
    am = _sample(spec.a[spec.m], xs.shape, x=xs)
    if np.any(am == 0):
        out.append(f"leading coefficient a{spec.m} vanishes on the domain")
    if _has_both_signs(_sample(spec.kernel, ts.shape, t=ts)):
        out.append(f"kernel '{ex.to_string(spec.kernel)}' changes sign on [0, {spec.T}]")
    return out


def _ordering_problems(spec: ProblemSpec, xs, ts, rs) -> list[str]:
    out = []
    tol = 1e-12
    X, Tt, R = np.meshgrid(xs, ts, rs, indexing="ij")
    lo = _sample(spec.forcing.lower, X.shape, x=X, t=Tt, r=R)
    up = _sample(spec.forcing.upper, X.shape, x=X, t=Tt, r=R)
    if np.any(lo - up > tol):
        i = np.argwhere(lo - up > tol)[0]
        out.append(f"forcing lower > upper at x={xs[i[0]]:g}, t={ts[i[1]]:g}, r={rs[i[2]]:g}")
    X2, R2 = np.meshgrid(xs, rs, indexing="ij")
    for j, d in enumerate(spec.initial):
        lo = _sample(d.lower, X2.shape, x=X2, r=R2)
        up = _sample(d.upper, X2.shape, x=X2, r=R2)
        if np.any(lo - up > tol):
            i = np.argwhere(lo - up > tol)[0]
            out.append(f"initial condition u{j} lower > upper at x={xs[i[0]]:g}, r={rs[i[1]]:g}")
    T2, R3 = np.meshgrid(ts, rs, indexing="ij")
    for k, bc in enumerate(spec.boundary, 1):
        lo = _sample(bc.data.lower, T2.shape, t=T2, r=R3)
        up = _sample(bc.data.upper, T2.shape, t=T2, r=R3)
        if np.any(lo - up > tol):
            i = np.argwhere(lo - up > tol)[0]
            out.append(f"boundary condition {k} lower > upper at t={ts[i[0]]:g}, r={rs[i[1]]:g}")
    return out


# -- transformed problem ------------------------------------------------------

@dataclass(frozen=True)
class TransformedOde:
    """Linear ODE ``sum_i alpha_i U^(i) + beta U = source`` in x, one column per (p, r, branch).

    ``alpha[i]`` maps an x array to an array of the same shape; ``beta`` and
    ``source`` map x of length N to (N, ncols) arrays.
    """

    p: np.ndarray
    r: np.ndarray
    branch: tuple[str, ...]
    m: int
    alpha: tuple[Callable, ...]
    beta: Callable
    source: Callable

    @property
    def ncols(self) -> int:
        return len(self.branch)


@dataclass(frozen=True)
class BoundaryValue:
    x: float
    order: int
    value: np.ndarray      # one entry per column


def _columns(r, branch, p):
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if isinstance(branch, str):
        branch = (branch,) * len(r)
    branch = tuple(branch)
    if len(branch) != len(r):
        raise ValueError("need one branch label per r value")
    bad = set(branch) - set(BRANCHES)
    if bad:
        raise ValueError(f"unknown branch {sorted(bad)}")
    p = np.broadcast_to(np.asarray(p, dtype=float), r.shape).copy()
    if not np.all(p > 0):
        raise ValueError("Laplace parameter p must be positive")
    return r, branch, p


def _branch_index(branch, which):
    return np.array([k for k, b in enumerate(branch) if b == which], dtype=int)


def _transform_columns(tf: ExprTransform, p, env, shape):
    """Transform values with one p per trailing-axis column of ``shape``."""
    if tf.is_closed:
        return np.broadcast_to(tf.closed.evaluate(p, env), shape)
    out = np.empty(shape)
    for pu in np.unique(p):
        idx = np.flatnonzero(p == pu)
        sub = {k: (v[..., idx] if np.ndim(v) and np.shape(v)[-1] == len(p) else v) for k, v in env.items()}
        out[..., idx] = np.broadcast_to(tf(pu, sub), shape[:-1] + (len(idx),))
    return out


class _Transforms:
    """Transforms in t of the kernel, forcing and boundary data, built once per problem."""

    def __init__(self, spec: ProblemSpec, settings: TransformSettings):
        self.spec = spec
        self.kernel = ExprTransform(spec.kernel, settings)
        self.forcing = {br: ExprTransform(spec.forcing.branch(br), settings) for br in BRANCHES}
        self.boundary = [{br: ExprTransform(bc.data.branch(br), settings) for br in BRANCHES}
                         for bc in spec.boundary]

    def K(self, p: np.ndarray) -> np.ndarray:
        return _transform_columns(self.kernel, p, {}, np.shape(p))


def _eval_columns(nodes: dict, x, r, branch) -> np.ndarray:
    """Evaluate per-branch expressions at x for each (r, branch) column."""
    x = np.asarray(x, dtype=float)
    out = np.empty((len(x), len(branch)))
    for br in BRANCHES:
        idx = _branch_index(branch, br)
        if len(idx):
            val = ex.evaluate(nodes[br], {"x": x[:, None], "r": r[idx][None, :]})
            out[:, idx] = np.broadcast_to(np.asarray(val, dtype=float), (len(x), len(idx)))
    return out


def _coef_func(node):
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(ex.evaluate(node, {"x": x}), dtype=float), x.shape)
    return f


def transform_problem(spec: ProblemSpec, r, p, branch="lower",
                      settings: TransformSettings | None = None, _tr: _Transforms | None = None) -> TransformedOde:
    """Transformed branch ODE(s) in x at Laplace parameter ``p``.

    ``r``, ``branch`` and ``p`` broadcast to one ODE column each; columns
    share ``alpha``.
    """
    r, branch, p = _columns(r, branch, p)
    tr = _tr or _Transforms(spec, settings or TransformSettings())
    K = tr.K(p)
    sign = spec.kernel_sign
    b_funcs = [_coef_func(bn) for bn in spec.b]
    c_func = _coef_func(spec.c)

    def beta(x):
        total = c_func(x)[:, None] - sign * K[None, :]
        for i, bi in enumerate(b_funcs):
            total = total + bi(x)[:, None] * p[None, :] ** i
        return total

    ic_nodes = [{br: d.branch(br) for br in BRANCHES} for d in spec.initial]

    def source(x):
        x = np.asarray(x, dtype=float)
        s = np.empty((len(x), len(r)))
        for br in BRANCHES:
            idx = _branch_index(branch, br)
            if len(idx):
                env = {"x": x[:, None], "r": r[idx][None, :]}
                s[:, idx] = -_transform_columns(tr.forcing[br], p[idx], env, (len(x), len(idx)))
        ics = [_eval_columns(nodes, x, r, branch) for nodes in ic_nodes]
        for i in range(1, spec.n + 1):
            inner = sum(p ** (j - 1) * ics[i - j] for j in range(1, i + 1))
            s = s + b_funcs[i](x)[:, None] * inner
        return s

    return TransformedOde(p=p, r=r, branch=branch, m=spec.m,
                          alpha=tuple(_coef_func(a) for a in spec.a), beta=beta, source=source)


def transform_boundary(spec: ProblemSpec, r, p, branch="lower",
                       settings: TransformSettings | None = None,
                       _tr: _Transforms | None = None) -> list[BoundaryValue]:
    r, branch, p = _columns(r, branch, p)
    tr = _tr or _Transforms(spec, settings or TransformSettings())
    out = []
    for bc, transforms in zip(spec.boundary, tr.boundary):
        val = np.empty(len(r))
        for br in BRANCHES:
            idx = _branch_index(branch, br)
            if len(idx):
                val[idx] = _transform_columns(transforms[br], p[idx], {"r": r[idx]}, (len(idx),))
        out.append(BoundaryValue(spec.location(bc.location), bc.order, val))
    return out


# -- ODE solution -------------------------------------------------------------

def _half_grid(start: float, h: float, steps: int) -> np.ndarray:
    return start + 0.5 * h * np.arange(2 * steps + 1)


class _Coefficients:
    """ODE coefficients sampled at the nodes and midpoints of a march.

    ``a[i]`` has shape (N, 1); ``zeroth`` (the total U coefficient) and
    ``src`` have shape (N, ncols).
    """

    def __init__(self, a, zeroth, src):
        self.a, self.zeroth, self.src = a, zeroth, src

    @classmethod
    def sample(cls, ode: TransformedOde, xs: np.ndarray, cols=None) -> "_Coefficients":
        a = [np.asarray(f(xs), dtype=float)[:, None] for f in ode.alpha]
        zeroth = a[0] + np.asarray(ode.beta(xs), dtype=float)
        src = np.asarray(ode.source(xs), dtype=float)
        if cols is not None:
            zeroth, src = zeroth[:, cols], src[:, cols]
        lead = a[ode.m]
        if np.any(lead == 0) or not np.all(np.isfinite(lead)):
            raise SolverError("leading ODE coefficient vanishes or is not finite on the march grid")
        if not (np.all(np.isfinite(zeroth)) and np.all(np.isfinite(src))):
            raise SolverError("non-finite transformed ODE coefficients")
        return cls(a, zeroth, src)

    def rows(self, sl: slice) -> "_Coefficients":
        return _Coefficients([a[sl] for a in self.a], self.zeroth[sl], self.src[sl])

    def cols(self, idx) -> "_Coefficients":
        return _Coefficients(self.a, self.zeroth[:, idx], self.src[:, idx])


def _rk4(co: _Coefficients, m: int, h: float, y0: np.ndarray, steps: int) -> np.ndarray:
    """Classic RK4 march; returns states at every node, shape (steps+1, m, ncols)."""
    a, z, s = co.a, co.zeroth, co.src

    if m == 1:
        def f(k, y):
            return ((s[k] - z[k] * y[0]) / a[1][k])[None]
    else:
        def f(k, y):
            return np.stack([y[1], (s[k] - z[k] * y[0] - a[1][k] * y[1]) / a[2][k]])

    out = np.empty((steps + 1,) + y0.shape)
    y = out[0] = y0
    comp = np.zeros_like(y0)     # compensated summation of the increments
    for i in range(steps):
        k = 2 * i
        k1 = f(k, y)
        k2 = f(k + 1, y + 0.5 * h * k1)
        k3 = f(k + 1, y + 0.5 * h * k2)
        k4 = f(k + 2, y + h * k3)
        inc = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp
        y_new = y + inc
        comp = (y_new - y) - inc
        y = y_new
        if not np.all(np.abs(y[0]) <= BLOWUP):
            raise OdeBlowUpError(
                f"|U| exceeded {BLOWUP:g} after {i + 1} of {steps} march steps; "
                "a growing homogeneous mode dominates")
        out[i + 1] = y
    return out


def _march(co: _Coefficients, m: int, h: float, y0: np.ndarray, steps: int):
    """RK4 at steps h and 2h combined by Richardson extrapolation.

    ``steps`` must be even.  Returns the extrapolated states at every
    second node, shape (steps/2 + 1, m, ncols), and the error estimate of
    the fine march at those nodes.
    """
    fine = _rk4(co, m, h, y0, steps)[::2]
    coarse = _rk4(co.rows(slice(None, None, 2)), m, 2 * h, y0, steps // 2)
    diff = (fine - coarse) / 15.0
    return fine + diff, np.abs(diff)


def _output_spacing(x_grid):
    x = np.asarray(x_grid, dtype=float)
    if len(x) < 2:
        raise ValueError("x grid needs at least two points")
    d = np.diff(x)
    if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("x grid must be uniform and increasing")
    return x, d[0]


def _p_range(p) -> str:
    lo, hi = float(np.min(p)), float(np.max(p))
    return f"p={lo:g}" if lo == hi else f"p in [{lo:g}, {hi:g}]"


def solve_ode(ode: TransformedOde, bcs: Sequence[BoundaryValue], x_grid, steps: int = 400,
              report: list | None = None) -> np.ndarray:
    """Solve the transformed ODE on ``x_grid``; returns an array (len(x_grid), ncols).

    First order: RK4 from the boundary point while the homogeneous mode
    grows by at most ``MAX_FORWARD_GROWTH`` along the march.  Otherwise the
    solution is assembled from a stable backward march started beyond the
    far end plus the homogeneous correction fixed by the boundary value.

    Second order: an initial-value march from the end holding both
    conditions, or secant shooting on the missing initial component when
    the conditions are split.
    """
    x, _ = _output_spacing(x_grid)
    if len(bcs) != ode.m:
        raise ValueError(f"an order-{ode.m} ODE needs {ode.m} boundary conditions, got {len(bcs)}")
    for bc in bcs:
        if not (math.isclose(bc.x, x[0], abs_tol=1e-12 * (1 + abs(x[0])))
                or math.isclose(bc.x, x[-1], abs_tol=1e-12 * (1 + abs(x[-1])))):
            raise ValueError(f"boundary point x={bc.x:g} is not an end of the grid")
    sub = max(2, math.ceil(steps / (len(x) - 1)))
    sub += sub % 2
    if ode.m == 1:
        return _solve_first(ode, bcs[0], x, sub, report)
    return _solve_second(ode, bcs, x, sub)


def _at_start(bc: BoundaryValue, x) -> bool:
    return abs(bc.x - x[0]) <= abs(bc.x - x[-1])


def _cumulative(lam, h):
    """Running integral of lam (sampled on a half grid) at the nodes, Simpson per step."""
    per_step = (h / 6.0) * (lam[0:-1:2] + 4.0 * lam[1::2] + lam[2::2])
    return np.concatenate([np.zeros((1,) + lam.shape[1:]), np.cumsum(per_step, axis=0)])


def _first_order_start(co: _Coefficients, order: int, value, k: int):
    """Boundary value for U; a derivative condition is converted through the ODE."""
    if order == 0:
        return np.asarray(value, dtype=float)
    z = co.zeroth[k]
    if np.any(z == 0):
        raise SolverError("derivative boundary condition cannot fix a first-order ODE where the U coefficient is 0")
    return (co.src[k] - co.a[1][k] * value) / z


def _steps_for(lam_max, length, n_int, sub, hl=0.1):
    """Even substeps per output interval so that h * lam_max <= hl."""
    k = max(sub, math.ceil(lam_max * length / (hl * n_int)))
    return k + k % 2


def _solve_first(ode, bc, x, sub, report):
    forward = _at_start(bc, x)
    near, far = (x[0], x[-1]) if forward else (x[-1], x[0])
    direction = 1.0 if forward else -1.0
    length = x[-1] - x[0]
    n_int = len(x) - 1
    h = (far - near) / (n_int * sub)
    co = _Coefficients.sample(ode, _half_grid(near, h, n_int * sub))
    lam = -co.zeroth / co.a[1]
    growth = np.max(_cumulative(lam, h), axis=0)
    decay_dist, decay = _extension(ode, far, direction, length)
    # the backward march needs its start value to be forgotten; when it cannot be,
    # moderate growth is still better handled by a refined forward march
    backward = (growth > math.log(MAX_FORWARD_GROWTH)) & ((decay >= MIN_EFOLDS) | (growth > 25.0))
    U = np.empty((len(x), ode.ncols))

    idx = np.flatnonzero(~backward)
    if len(idx):
        refine = min(8, math.ceil(math.exp(max(float(np.max(growth[idx])), 0.0) / 4.0)))
        sub_f = _steps_for(float(np.max(np.abs(lam[:, idx]))), length, n_int, sub * refine)
        h_f = (far - near) / (n_int * sub_f)
        co_f = co.cols(idx) if sub_f == sub else _Coefficients.sample(ode, _half_grid(near, h_f, n_int * sub_f), idx)
        start = _first_order_start(co_f, bc.order, bc.value[idx], 0)
        nodes = _march(co_f, 1, h_f, start[None], n_int * sub_f)[0][::sub_f // 2, 0]
        U[:, idx] = nodes if forward else nodes[::-1]

    idx = np.flatnonzero(backward)
    if len(idx):
        if report is not None and np.any(decay[idx] < MIN_EFOLDS):
            report.append(f"{_p_range(ode.p[idx])}: backward start value decays only by "
                          f"e^{float(np.min(decay[idx])):.3g}")
        lam_max = max(float(np.max(np.abs(lam[:, idx]))), _extension_rate(ode, far, direction, decay_dist, idx))
        U[:, idx] = _backward(ode, bc, idx, near, far, n_int, _steps_for(lam_max, length, n_int, sub),
                              float(np.max(decay_dist[idx])), forward, report)
    return U


def _backward(ode, bc, idx, near, far, n_int, sub, dist, forward, report):
    """Backward march from beyond ``far`` plus the boundary-fixed homogeneous mode."""
    steps = n_int * sub
    h = (far - near) / steps
    n_ext = math.ceil(dist / abs(h))
    n_ext += n_ext % 2
    total = steps + n_ext
    co_all = _Coefficients.sample(ode, _half_grid(far + n_ext * h, -h, total), idx)
    main = co_all.rows(slice(2 * n_ext, None)).rows(slice(None, None, -1))
    start = _first_order_start(main, bc.order, bc.value[idx], 0)
    growth = _cumulative(-main.zeroth / main.a[1], h)

    # start on the slow manifold U = source / zeroth
    z = co_all.zeroth[0]
    tail = np.where(z != 0, co_all.src[0] / np.where(z != 0, z, 1.0), 0.0)
    back, err = _march(co_all, 1, -h, tail[None], total)
    back = back[n_ext // 2:, 0][::-1]
    march_err = err[-1, 0]
    growth = growth[::2]

    C = start - back[0]
    scale = 1.0 + np.max(np.abs(back), axis=0)
    # a mismatch within the march error is not a growing-mode excitation
    dropped = np.abs(C) <= 10.0 * march_err + 1e-12 * scale
    shift = np.max(growth, axis=0)
    if report is not None and np.any(dropped & (C != 0)):
        report.append(f"{_p_range(ode.p[idx])}: growing mode up to e^{float(np.max(shift)):.3g} suppressed, "
                      f"boundary mismatch {float(np.max(np.abs(C[dropped]))):.2e}")
    with np.errstate(over="ignore", invalid="ignore"):
        corr = np.where(dropped, 0.0, C * np.exp(np.minimum(shift, 700.0)))
        U = back + np.exp(growth - shift) * corr
    if not np.all(np.abs(U) <= BLOWUP):
        raise OdeBlowUpError(
            f"{_p_range(ode.p[idx])}: homogeneous mode grows by up to e^{float(np.max(shift)):.3g} across the "
            f"domain and the boundary data excite it (coefficient {float(np.max(np.abs(C))):.3g})")
    U = U[::sub // 2]
    return U if forward else U[::-1]


def _probe(far, direction, length):
    return far + direction * length * np.linspace(0.0, 50.0, 10001)


def _probe_rates(ode, probe, idx=None):
    """Growth rates along the march direction at the probe points, NaN where not evaluable."""
    try:
        a1 = np.asarray(ode.alpha[1](probe), float)[:, None]
        zeroth = np.asarray(ode.alpha[0](probe), float)[:, None] + np.asarray(ode.beta(probe), float)
        with np.errstate(all="ignore"):
            lam = -zeroth / a1
    except ex.ExprError:
        lam = np.full((len(probe), ode.ncols), np.nan)
    lam = lam if idx is None else lam[:, idx]
    # cut at the first point where any column is not evaluable
    bad = np.flatnonzero(~np.all(np.isfinite(lam), axis=1))
    return lam[: bad[0] if len(bad) else len(probe)]


def _extension(ode, far, direction, length):
    """Per column: distance beyond ``far`` after which a backward march has forgotten
    its start value, and the decay (in e-folds) achieved there."""
    probe = _probe(far, direction, length)
    lam = direction * _probe_rates(ode, probe)
    if len(lam) < 2:
        return np.zeros(ode.ncols), np.zeros(ode.ncols)
    seg = np.abs(np.diff(probe[:len(lam)]))[:, None]
    integ = np.concatenate([np.zeros((1, ode.ncols)), np.cumsum(0.5 * (lam[1:] + lam[:-1]) * seg, axis=0)])
    reached = integ >= EXTENSION_EFOLDS
    end = np.where(np.any(reached, axis=0), np.argmax(reached, axis=0), len(lam) - 1)
    cols = np.arange(ode.ncols)
    return np.abs(probe[end] - far), integ[end, cols]


def _extension_rate(ode, far, direction, dist, idx):
    span = far + direction * np.linspace(0.0, float(np.max(dist[idx])), 2001)
    lam = _probe_rates(ode, span, idx)
    return float(np.max(np.abs(lam))) if len(lam) else 0.0


def _solve_second(ode, bcs, x, sub):
    n_int = len(x) - 1
    steps = n_int * sub
    at0 = [bc for bc in bcs if _at_start(bc, x)]
    at1 = [bc for bc in bcs if not _at_start(bc, x)]
    if len(at0) == 2 or len(at1) == 2:
        forward = len(at0) == 2
        near, far = (x[0], x[-1]) if forward else (x[-1], x[0])
        h = (far - near) / steps
        co = _Coefficients.sample(ode, _half_grid(near, h, steps))
        pair = at0 if forward else at1
        if {bc.order for bc in pair} != {0, 1}:
            raise ValueError("two conditions at one end must fix U and dU/dx")
        y0 = np.stack([next(bc.value for bc in pair if bc.order == o) for o in (0, 1)]).astype(float)
        nodes = _march(co, 2, h, y0, steps)[0][::sub // 2, 0]
        return nodes if forward else nodes[::-1]

    # split conditions: shoot from x0 on the missing component
    left, right = at0[0], at1[0]
    h = (x[-1] - x[0]) / steps
    co = _Coefficients.sample(ode, _half_grid(x[0], h, steps))
    known = np.asarray(left.value, dtype=float)

    def shoot(s):
        y0 = np.stack([known, s] if left.order == 0 else [s, known])
        return _march(co, 2, h, y0, steps)[0]

    def residual(traj):
        return traj[-1, right.order] - right.value

    s0 = np.zeros(ode.ncols)
    s1 = np.ones(ode.ncols)
    r0 = residual(shoot(s0))
    t1 = shoot(s1)
    r1 = residual(t1)
    tol = 1e-10 * (1.0 + np.abs(right.value))
    for _ in range(50):
        if np.all(np.abs(r1) <= tol):
            return t1[::sub // 2, 0]
        denom = r1 - r0
        step = np.where(denom != 0, r1 * (s1 - s0) / np.where(denom != 0, denom, 1.0), 0.0)
        s0, r0 = s1, r1
        s1 = s1 - step
        t1 = shoot(s1)
        r1 = residual(t1)
    if np.all(np.abs(r1) <= tol):
        return t1[::sub // 2, 0]
    raise ShootingError(f"shooting did not converge in 50 secant steps at {_p_range(ode.p)}; "
                        f"residual {np.max(np.abs(r1)):.3g}")


# -- full solve ---------------------------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    stehfest_n: int = 12
    n_quad: int = 2048
    ode_steps: int = 400
    strict_hukuhara: bool = False

    def __post_init__(self):
        check_stehfest_order(self.stehfest_n)
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be positive")

    @property
    def transform(self) -> TransformSettings:
        return TransformSettings(None, self.n_quad, self.stehfest_n)


class SolutionTable(FuzzyField):
    """Lower/upper solution values indexed ``[x, t, r]`` with provenance."""

    def __init__(self, x_grid, t_grid, grid: MembershipGrid, lower, upper,
                 method: str = "", settings: dict | None = None, diagnostics: list | None = None):
        super().__init__(x_grid, t_grid, grid, lower, upper)
        self.method = method
        self.settings = dict(settings or {})
        self.diagnostics = list(diagnostics or [])

    def max_abs_error(self, lower_fn, upper_fn) -> float:
        X, T, R = np.meshgrid(self.x, self.t, self.r, indexing="ij")
        return float(max(np.max(np.abs(self.lower - lower_fn(X, T, R))),
                         np.max(np.abs(self.upper - upper_fn(X, T, R)))))

    def rows(self):
        """(x, t, r, lower, upper) in lexicographic (x, t, r) order."""
        for i, x in enumerate(self.x):
            for j, t in enumerate(self.t):
                for k, r in enumerate(self.r):
                    yield x, t, r, self.lower[i, j, k], self.upper[i, j, k]


def _as_membership(r_grid) -> MembershipGrid:
    if isinstance(r_grid, MembershipGrid):
        return r_grid
    if isinstance(r_grid, int):
        return MembershipGrid.uniform(r_grid)
    return MembershipGrid(tuple(r_grid))


class _FltmSolver:
    """Transformed solutions for a set of Laplace nodes, batched over (p, r, branch) columns."""

    def __init__(self, spec: ProblemSpec, x_grid, grid: MembershipGrid, settings: SolverSettings):
        self.spec = spec
        self.x = np.asarray(x_grid, dtype=float)
        self.grid = grid
        self.settings = settings
        self.tr = _Transforms(spec, settings.transform)
        nr = len(grid)
        self.r_cols = np.concatenate([grid.r, grid.r])
        self.branch_cols = ("lower",) * nr + ("upper",) * nr
        self.cache: dict[float, np.ndarray] = {}
        self.diagnostics: list[str] = []
        self.hukuhara_failures = 0
        self.ic_cols = [_eval_columns({br: d.branch(br) for br in BRANCHES}, self.x, self.r_cols, self.branch_cols)
                        for d in spec.initial]

    @staticmethod
    def key(p: float) -> float:
        return round(float(p), 12)

    def solve(self, nodes, chunk_cols: int = 264):
        pending = {self.key(p): float(p) for p in nodes}
        todo = sorted(v for k, v in pending.items() if k not in self.cache)
        width = len(self.r_cols)
        per_chunk = max(1, chunk_cols // width)
        for start in range(0, len(todo), per_chunk):
            ps = np.array(todo[start:start + per_chunk])
            p_cols = np.repeat(ps, width)
            r_cols = np.tile(self.r_cols, len(ps))
            branch = self.branch_cols * len(ps)
            try:
                ode = transform_problem(self.spec, r_cols, p_cols, branch, _tr=self.tr)
                bcs = transform_boundary(self.spec, r_cols, p_cols, branch, _tr=self.tr)
                U = solve_ode(ode, bcs, self.x, self.settings.ode_steps, report=self.diagnostics)
            except (SolverError, TransformError, ex.ExprError) as e:
                raise SolverError(f"{e} [Laplace nodes {_p_range(ps)}]") from e
            for k, p in enumerate(ps):
                Uk = U[:, k * width:(k + 1) * width]
                self._check_hukuhara(Uk, p)
                self.cache[self.key(p)] = Uk

    def transformed(self, p: float) -> np.ndarray:
        if self.key(p) not in self.cache:
            self.solve([p])
        return self.cache[self.key(p)]

    def _check_hukuhara(self, U, p):
        """The transform-domain H-differences p^i U (-) ... (-) u^(i-1)(x, 0) must exist."""
        nr = len(self.grid)
        for i in range(1, self.spec.n + 1):
            if ex.is_constant(self.spec.b[i]) and ex.evaluate(self.spec.b[i]) == 0:
                continue
            z = p ** i * U
            for j in range(i, 0, -1):
                z = z - p ** (j - 1) * self.ic_cols[i - j]
                tol = 1e-8 * (1.0 + np.max(np.abs(z)))
                masks = validate_arrays(z[:, :nr], z[:, nr:], tol)
                bad = masks["lower_monotone"] | masks["upper_monotone"] | masks["ordering"]
                if np.any(bad):
                    self.hukuhara_failures += 1
                    msg = (f"p={p:g}: Hukuhara difference in the transform of d^{i}u/dt^{i} does not exist "
                           f"at {int(np.sum(bad))} of {len(bad)} x points")
                    if self.settings.strict_hukuhara:
                        raise NoHukuharaDifference([msg])
                    self.diagnostics.append(msg)
                    return


def fltm_solve(spec: ProblemSpec, x_grid, t_grid, r_grid=11, settings: SolverSettings | None = None) -> SolutionTable:
    """Fuzzy solution on the (x, t, r) grid.

    Each t > 0 column is the Gaver-Stehfest combination of transformed
    solutions at ``p_k = k ln2 / t``; the t = 0 column is the initial value.
    Points where the result is not a fuzzy number are reported as
    diagnostics and a FuzzyValidityWarning, not as errors.
    """
    settings = settings or SolverSettings()
    spec.check()
    grid = _as_membership(r_grid)
    x, _ = _output_spacing(x_grid)
    if not (math.isclose(x[0], spec.x0, abs_tol=1e-12) and math.isclose(x[-1], spec.x1, abs_tol=1e-12)):
        raise ValueError(f"x grid must span the domain [{spec.x0}, {spec.x1}]")
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t < 0):
        raise ValueError("t grid values must be non-negative")
    if spec.n == 0 and np.any(t == 0):
        raise ValueError("t = 0 needs an initial condition; the problem has none")
    solver = _FltmSolver(spec, x, grid, settings)
    n = settings.stehfest_n
    solver.solve(np.concatenate([stehfest_nodes(tj, n) for tj in t if tj > 0] or [np.empty(0)]))
    nr = len(grid)
    weights = stehfest_weights(n)
    values = np.empty((len(x), len(t), 2 * nr))
    for j, tj in enumerate(t):
        if tj == 0:
            values[:, j, :] = solver.ic_cols[0]
            continue
        acc = np.zeros((len(x), 2 * nr))
        for w, p in zip(weights, stehfest_nodes(tj, n)):
            acc += w * solver.transformed(p)
        values[:, j, :] = (LN2 / tj) * acc
    table = SolutionTable(x, t, grid, values[:, :, :nr], values[:, :, nr:], method="fltm",
                          settings={"stehfest_n": n, "n_quad": settings.n_quad, "ode_steps": settings.ode_steps},
                          diagnostics=solver.diagnostics)
    if solver.hukuhara_failures:
        warnings.warn(f"{solver.hukuhara_failures} transformed solutions have no Hukuhara difference for "
                      "the t-derivative transform; the differentiability assumption of the method does not hold",
                      HukuharaWarning, stacklevel=2)
    bad = table.violations(1e-6)
    if bad:
        table.diagnostics.append(f"{len(bad)} (x, t) points are not fuzzy numbers, e.g. {bad[0]}")
        warnings.warn(f"solution is not a fuzzy number at {len(bad)} (x, t) points, e.g. {bad[0]}",
                      FuzzyValidityWarning, stacklevel=2)
    for d in table.diagnostics:
        log.info(d)
    return table


def crisp_version(spec: ProblemSpec, r: float) -> ProblemSpec:
    """Spec with every fuzzy pair frozen at level ``r`` (lower and upper separately kept)."""
    def freeze(d: FuzzyDatum) -> FuzzyDatum:
        return FuzzyDatum(_subst_r(d.lower, r), _subst_r(d.upper, r), d.factor)
    return replace(spec, forcing=freeze(spec.forcing), initial=tuple(freeze(d) for d in spec.initial),
                   boundary=tuple(replace(bc, data=freeze(bc.data)) for bc in spec.boundary))


def _subst_r(node: ex.Node, r: float) -> ex.Node:
    if isinstance(node, ex.Var):
        return ex.Num(float(r)) if node.name == "r" else node
    if isinstance(node, ex.Neg):
        return ex.Neg(_subst_r(node.operand, r))
    if isinstance(node, ex.Call):
        return ex.Call(node.func, _subst_r(node.arg, r))
    if isinstance(node, ex.BinOp):
        return ex.BinOp(node.op, _subst_r(node.left, r), _subst_r(node.right, r))
    return node
