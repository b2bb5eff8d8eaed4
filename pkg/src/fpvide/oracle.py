"""Direct time-stepping solver used to cross-check the transform method.

Each (r, branch) column is the crisp equation built from that branch of
the data.  Space uses second-order finite differences (central inside,
one-sided at the ends), time uses explicit Euler for first-order-in-t
problems and symplectic Euler for second-order ones, and the memory
integral is the trapezoid rule over the stored history.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .fltm import BRANCHES, ProblemSpec, SolutionTable, _as_membership
from .fuzzy import GridMismatchError, MembershipGrid

# explicit steps are accepted when the homogeneous update grows no faster than
# exp(MAX_GROWTH_RATE * t); genuine instabilities scale like 1/dx^2 and exceed it
MAX_GROWTH_RATE = 200.0
GROWTH_LIMIT = 1e6

# Extrapolation weights for an end with no boundary condition: quartic
# (zero fifth difference) for first order in x, quadratic for second order,
# where a wider closure couples with the one-sided second-derivative rows
# and makes the step grow.
_FREE_END_WEIGHTS = {
    1: np.array([5.0, -10.0, 10.0, -5.0, 1.0]),
    2: np.array([3.0, -3.0, 1.0]),
}


class InstabilityError(ArithmeticError):
    pass


class MemoryResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DirectSettings:
    dx: float
    dt: float
    memory_rule: str = "trapezoid"
    check_memory: bool = False

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("dx and dt must be positive")
        if self.memory_rule != "trapezoid":
            raise ValueError(f"unsupported memory rule {self.memory_rule!r}")


def _lattice_count(length: float, step: float, what: str) -> int:
    k = round(length / step)
    if k < 1 or abs(k * step - length) > 1e-9 * max(1.0, length):
        raise GridMismatchError(f"{what} step {step:g} does not divide the interval length {length:g}")
    return k


def _derivative_matrices(n: int, dx: float):
    """First and second derivative matrices, second order everywhere."""
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    i = np.arange(1, n - 1)
    D1[i, i - 1], D1[i, i + 1] = -0.5 / dx, 0.5 / dx
    D2[i, i - 1], D2[i, i], D2[i, i + 1] = 1 / dx**2, -2 / dx**2, 1 / dx**2
    D1[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * dx)
    D1[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * dx)
    if n >= 4:
        D2[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / dx**2
        D2[-1, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / dx**2
    else:
        D2[0, :3] = D2[-1, -3:] = np.array([1.0, -2.0, 1.0]) / dx**2
    return D1, D2


class _Discretization:
    def __init__(self, spec: ProblemSpec, settings: DirectSettings, grid: MembershipGrid):
        if spec.n not in (1, 2):
            raise ValueError(f"direct solver needs n in {{1, 2}}, got n={spec.n}")
        self.spec = spec
        self.nx = _lattice_count(spec.x1 - spec.x0, settings.dx, "x") + 1
        if self.nx < 6:
            raise ValueError("direct solver needs at least 6 x nodes")
        self.x = spec.x0 + settings.dx * np.arange(self.nx)
        self.dx = settings.dx
        nr = len(grid)
        self.r = np.concatenate([grid.r, grid.r])
        self.branch = ("lower",) * nr + ("upper",) * nr
        D1, D2 = _derivative_matrices(self.nx, self.dx)
        coef = [self._coef(a) for a in spec.a]
        # spatial operator sum_i a_i D_i acting on a column
        L = np.diag(coef[0]) + coef[1][:, None] * D1
        if spec.m == 2:
            L = L + coef[2][:, None] * D2
        self.L = L + np.diag(self._coef(spec.c))
        self.b = [self._coef(bi) for bi in spec.b]
        if np.any(self.b[spec.n] == 0):
            raise ValueError(f"b{spec.n} vanishes on the grid; the highest t-derivative cannot be isolated")
        self.dirichlet = {}
        self.neumann = {}
        for bc in spec.boundary:
            target = self.dirichlet if bc.order == 0 else self.neumann
            target[bc.location] = bc.data

    def _coef(self, node):
        return np.broadcast_to(np.asarray(ex.evaluate(node, {"x": self.x}), dtype=float), self.x.shape).copy()

    def columns(self, datum, env):
        out = np.empty(np.broadcast_shapes(*(np.shape(v) for v in env.values()), (len(self.r),))
                       if env else (len(self.r),))
        for br in BRANCHES:
            idx = [k for k, b in enumerate(self.branch) if b == br]
            val = ex.evaluate(datum.branch(br), {**env, "r": self.r[idx]})
            out[..., idx] = np.broadcast_to(np.asarray(val, dtype=float), out[..., idx].shape)
        return out

    def forcing(self, t: float):
        return self.columns(self.spec.forcing, {"x": self.x[:, None], "t": t})

    def initial(self, j: int):
        return self.columns(self.spec.initial[j], {"x": self.x[:, None]})

    def boundary_value(self, datum, t: float):
        return self.columns(datum, {"t": np.float64(t)})

    def apply_boundary(self, u, t, v=None, t_prev=None):
        """Impose the conditions at time t; Dirichlet wins where an end has both."""
        ends = {"x0": 0, "x1": -1}
        for loc, datum in self.dirichlet.items():
            g = self.boundary_value(datum, t)
            u[ends[loc]] = g
            if v is not None and t_prev is not None:
                v[ends[loc]] = (g - self.boundary_value(datum, t_prev)) / (t - t_prev)
        for loc, datum in self.neumann.items():
            if loc in self.dirichlet:
                continue
            g = self.boundary_value(datum, t)
            if loc == "x0":
                u[0] = (4 * u[1] - u[2] - 2 * self.dx * g) / 3
            else:
                u[-1] = (4 * u[-2] - u[-3] + 2 * self.dx * g) / 3
        self._extrapolate_free(u, v)

    def _free_ends(self):
        held = set(self.dirichlet) | set(self.neumann)
        return [loc for loc in ("x0", "x1") if loc not in held]

    def _extrapolate_free(self, u, v=None):
        # an end without a condition takes a polynomial extrapolation of its neighbours
        c = _FREE_END_WEIGHTS[self.spec.m]
        k = len(c)
        for loc in self._free_ends():
            for w in (u, v) if v is not None else (u,):
                if loc == "x0":
                    w[0] = c @ w[1:k + 1]
                else:
                    w[-1] = c @ w[-2:-k - 2:-1]

    def rhs(self, u, v, forcing, memory):
        """Highest t-derivative from the equation solved for it."""
        s = self.spec
        acc = s.kernel_sign * memory - forcing - self.L @ u
        if s.n == 2:
            acc = acc - self.b[1][:, None] * v - self.b[0][:, None] * u
        else:
            acc = acc - self.b[0][:, None] * u
        return acc / self.b[s.n][:, None]

    def homogeneous_step(self, u, v, dt, k0):
        """One step with zero data and only the current-time memory weight."""
        u = u.copy()
        mem = 0.5 * dt * k0 * u
        if self.spec.n == 1:
            u = u + dt * self.rhs(u, None, 0.0, mem)
            self._zero_boundary(u)
            return u, None
        v = v + dt * self.rhs(u, v, 0.0, mem)
        u = u + dt * v
        self._zero_boundary(u, v)
        return u, v

    def _zero_boundary(self, u, v=None):
        for loc in self.dirichlet:
            i = 0 if loc == "x0" else -1
            u[i] = 0.0
            if v is not None:
                v[i] = 0.0
        for loc in self.neumann:
            if loc not in self.dirichlet:
                if loc == "x0":
                    u[0] = (4 * u[1] - u[2]) / 3
                else:
                    u[-1] = (4 * u[-2] - u[-3]) / 3
        self._extrapolate_free(u, v)


def estimate_step_growth(disc: _Discretization, dt: float, k0: float, iterations: int = 200, seed: int = 0) -> float:
    """Average per-step growth factor of the homogeneous update (power iteration)."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((disc.nx, 1))
    v = rng.standard_normal((disc.nx, 1)) if disc.spec.n == 2 else None
    log_growth = 0.0
    for _ in range(iterations):
        norm = math.sqrt(float(np.sum(u * u) + (np.sum(v * v) if v is not None else 0.0)))
        if norm == 0:
            return 0.0
        u = u / norm
        v = v / norm if v is not None else None
        u, v = disc.homogeneous_step(u, v, dt, k0)
        log_growth += math.log(max(math.sqrt(float(np.sum(u * u) + (np.sum(v * v) if v is not None else 0.0))),
                                   1e-300))
    return math.exp(log_growth / iterations)


def _time_indices(t_out, dt, T):
    idx = []
    for t in t_out:
        k = round(t / dt)
        if t < 0 or t > T + 1e-12 or abs(k * dt - t) > 1e-9 * max(1.0, t):
            raise GridMismatchError(f"output time {t:g} is not on the time lattice of step {dt:g} within [0, {T:g}]")
        idx.append(k)
    return np.array(idx, dtype=int)


def _space_indices(x_out, disc):
    idx = []
    for x in x_out:
        k = round((x - disc.x[0]) / disc.dx)
        if not 0 <= k < disc.nx or abs(disc.x[k] - x) > 1e-9 * max(1.0, abs(x)):
            raise GridMismatchError(f"output point x={x:g} is not a node of the x lattice of step {disc.dx:g}")
        idx.append(k)
    return np.array(idx, dtype=int)


def _march(disc: _Discretization, dt: float, steps: int, keep: np.ndarray):
    spec = disc.spec
    kv = np.asarray(np.broadcast_to(ex.evaluate(spec.kernel, {"t": dt * np.arange(steps + 1)}), (steps + 1,)),
                    dtype=float)
    u = disc.initial(0)
    v = disc.initial(1) if spec.n == 2 else None
    disc.apply_boundary(u, 0.0)
    history = np.empty((steps + 1,) + u.shape)
    history[0] = u
    flat = history.reshape(steps + 1, -1)
    scale = max(float(np.max(np.abs(u))), 1.0)
    out = {}
    if 0 in keep:
        out[0] = u.copy()
    for k in range(steps):
        t = k * dt
        if k == 0:
            memory = np.zeros_like(u)
        else:
            w = kv[k::-1].copy()
            w[0] *= 0.5
            w[-1] *= 0.5
            memory = (dt * (w @ flat[:k + 1])).reshape(u.shape)
        acc = disc.rhs(u, v, disc.forcing(t), memory)
        if spec.n == 1:
            u = u + dt * acc
        else:
            # leapfrog: v holds the velocity at half steps, so the first kick is a half kick
            v = v + (0.5 * dt if k == 0 else dt) * acc
            u = u + dt * v
        disc.apply_boundary(u, t + dt, v, t)
        if not np.all(np.abs(u) <= GROWTH_LIMIT * scale):
            raise InstabilityError(f"solution norm exceeded {GROWTH_LIMIT:g} x its initial size at t={t + dt:g}; "
                                   "reduce dt or dx")
        history[k + 1] = u
        if k + 1 in keep:
            out[k + 1] = u.copy()
    return out


def direct_solve(spec: ProblemSpec, settings: DirectSettings, r_grid=11, x_out=None, t_out=None,
                 T: float | None = None) -> SolutionTable:
    """Time-step the branch equations on the (dx, dt) lattice up to ``T`` (default spec.T).

    ``x_out`` and ``t_out`` default to the whole x lattice and 11 equally
    spaced times; both must lie on the lattice.
    """
    spec.check()
    grid = _as_membership(r_grid)
    T = spec.T if T is None else float(T)
    disc = _Discretization(spec, settings, grid)
    steps = _lattice_count(T, settings.dt, "t")
    x_out = disc.x if x_out is None else np.asarray(x_out, dtype=float)
    t_out = np.linspace(0.0, T, 11) if t_out is None else np.asarray(t_out, dtype=float)
    xi = _space_indices(x_out, disc)
    ti = _time_indices(t_out, settings.dt, T)

    k0 = float(ex.evaluate(spec.kernel, {"t": 0.0}))
    growth = estimate_step_growth(disc, settings.dt, k0)
    rate = math.log(max(growth, 1e-300)) / settings.dt
    if rate > MAX_GROWTH_RATE:
        raise InstabilityError(f"explicit step is unstable: estimated growth {growth:.8g} per step "
                               f"(rate {rate:.3g} per unit time, limit {MAX_GROWTH_RATE:g}); reduce dt")
    snaps = _march(disc, settings.dt, steps, set(ti.tolist()))
    values = np.stack([snaps[k][xi] for k in ti], axis=1)     # (x, t, cols)
    nr = len(grid)
    diagnostics = [f"per-step growth estimate {growth:.8g}"]
    if settings.check_memory:
        half = _march(disc, settings.dt / 2, 2 * steps, set((2 * ti).tolist()))
        fine = np.stack([half[2 * k][xi] for k in ti], axis=1)
        change = float(np.max(np.abs(fine - values)))
        diagnostics.append(f"halving dt changes the result by {change:.3g}")
        if change > 1e-2:
            warnings.warn(f"memory integral under-resolved: halving dt changes the result by {change:.3g}",
                          MemoryResolutionWarning, stacklevel=2)
    return SolutionTable(x_out, t_out, grid, values[:, :, :nr], values[:, :, nr:], method="direct",
                         settings={"dx": settings.dx, "dt": settings.dt, "memory_rule": settings.memory_rule},
                         diagnostics=diagnostics)


@dataclass(frozen=True)
class Metrics:
    max_abs: float
    rms: float
    lower_max_abs: float
    lower_rms: float
    upper_max_abs: float
    upper_rms: float
    where: tuple   # (x, t, r, branch) of the largest difference

    def table(self) -> str:
        rows = [("overall", self.max_abs, self.rms), ("lower", self.lower_max_abs, self.lower_rms),
                ("upper", self.upper_max_abs, self.upper_rms)]
        lines = [f"{'branch':<8} {'max_abs':>14} {'rms':>14}"]
        lines += [f"{name:<8} {mx:>14.6e} {rms:>14.6e}" for name, mx, rms in rows]
        x, t, r, br = self.where
        lines.append(f"largest difference at x={x:g}, t={t:g}, r={r:g} ({br})")
        return "\n".join(lines)


def compare(a: SolutionTable, b: SolutionTable) -> Metrics:
    for name, u, v in (("x", a.x, b.x), ("t", a.t, b.t), ("r", a.r, b.r)):
        if u.shape != v.shape or not np.allclose(u, v, rtol=0, atol=1e-9):
            raise GridMismatchError(f"tables have different {name} grids")
    dl = np.abs(a.lower - b.lower)
    du = np.abs(a.upper - b.upper)
    both = np.stack([dl, du])
    k = np.unravel_index(int(np.argmax(both)), both.shape)
    where = (float(a.x[k[1]]), float(a.t[k[2]]), float(a.r[k[3]]), BRANCHES[k[0]])

    def rms(d):
        return float(np.sqrt(np.mean(d ** 2)))

    return Metrics(max_abs=float(np.max(both)), rms=rms(both), lower_max_abs=float(np.max(dl)), lower_rms=rms(dl),
                   upper_max_abs=float(np.max(du)), upper_rms=rms(du), where=where)
