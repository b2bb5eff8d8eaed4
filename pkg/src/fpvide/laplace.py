"""Forward and inverse Laplace transforms in t, plus the convolution integral.

Two forward routes are provided.  ``laplace_forward`` is plain quadrature
of the defining integral truncated at ``t_max``.  ``ClosedForm`` recognises
expressions built from ``t**m * exp(a*t) * sin/cos(b*t)`` products and
evaluates their transform exactly; this also gives the analytic
continuation below the abscissa of convergence, which the Gaver-Stehfest
nodes ``k*ln2/t`` routinely sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from . import expr as ex
from .fuzzy import FuzzyScalar, MembershipGrid

LN2 = math.log(2.0)
TAIL_RTOL = 1e-10


class TransformError(ArithmeticError):
    pass


class TransformConvergenceError(TransformError):
    pass


@dataclass(frozen=True)
class TransformSettings:
    """Quadrature and inversion parameters.

    ``t_max=None`` picks ``40/p`` per evaluation so the truncated tail is
    below e**-40 of the integrand scale.
    """

    t_max: float | None = None
    n_quad: int = 2048
    stehfest_n: int = 12

    def __post_init__(self):
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.n_quad < 16 or self.n_quad % 2:
            raise ValueError("n_quad must be an even panel count >= 16")
        check_stehfest_order(self.stehfest_n)

    def horizon(self, p: float) -> float:
        return self.t_max if self.t_max is not None else 40.0 / p


def check_stehfest_order(n: int):
    if n % 2 or not 4 <= n <= 20:
        raise ValueError(f"Stehfest order must be even and within 4..20, got {n}")


def simpson_weights(n_panels: int, h: float) -> np.ndarray:
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def laplace_forward(f: Callable, p: float, settings: TransformSettings | None = None) -> float:
    """Composite-Simpson approximation of the transform of ``f`` at ``p``.

    ``f`` must accept a numpy array of times.  Raises
    TransformConvergenceError when ``exp(-p*t_max) * max|f|`` is not below
    1e-10 of the result.
    """
    settings = settings or TransformSettings()
    if not p > 0:
        raise ValueError("forward transform needs p > 0")
    t_max = settings.horizon(p)
    t = np.linspace(0.0, t_max, settings.n_quad + 1)
    ft = np.broadcast_to(np.asarray(f(t), dtype=float), t.shape)
    value = float(simpson_weights(settings.n_quad, t_max / settings.n_quad) @ (np.exp(-p * t) * ft))
    tail = math.exp(-p * t_max) * float(np.max(np.abs(ft)))
    if not np.isfinite(value) or tail > TAIL_RTOL * abs(value) and tail > 0:
        raise TransformConvergenceError(
            f"transform at p={p:g} not converged: tail bound {tail:.3g} vs result {value:.3g}")
    return value


def fuzzy_laplace_forward(f: Callable, grid: MembershipGrid, p: float,
                          settings: TransformSettings | None = None) -> FuzzyScalar:
    """Transform each branch of a fuzzy function of t.

    ``f(t, r)`` returns the ``(lower, upper)`` pair at level ``r``.
    """
    lo, up = [], []
    for r in grid.levels:
        lo.append(laplace_forward(lambda t, r=r: f(t, r)[0], p, settings))
        up.append(laplace_forward(lambda t, r=r: f(t, r)[1], p, settings))
    return FuzzyScalar(grid, lo, up)


@lru_cache(maxsize=None)
def _stehfest_exact(n: int) -> tuple[Fraction, ...]:
    half = n // 2
    out = []
    for k in range(1, n + 1):
        acc = Fraction(0)
        for j in range((k + 1) // 2, min(k, half) + 1):
            acc += Fraction(j ** half * math.factorial(2 * j),
                            math.factorial(half - j) * math.factorial(j) * math.factorial(j - 1)
                            * math.factorial(k - j) * math.factorial(2 * j - k))
        out.append((-1) ** (k + half) * acc)
    return tuple(out)


def stehfest_weights(n: int) -> np.ndarray:
    if n % 2 or n < 2:
        raise ValueError(f"Stehfest order must be a positive even integer, got {n}")
    return np.array([float(v) for v in _stehfest_exact(n)])


def stehfest_nodes(t: float, n: int) -> np.ndarray:
    if not t > 0:
        raise ValueError("inversion needs t > 0")
    return np.arange(1, n + 1) * (LN2 / t)


def stehfest_invert(U: Callable[[float], float], t: float, n: int = 12) -> float:
    """Gaver-Stehfest estimate of the original of ``U`` at time ``t``."""
    check_stehfest_order(n)
    nodes = stehfest_nodes(t, n)
    values = [float(U(p)) for p in nodes]
    if not all(map(math.isfinite, values)):
        raise TransformError(f"transform is not finite at a Stehfest node for t={t:g}")
    # the weights reach 1e12 and alternate in sign; summing the products
    # exactly leaves only the rounding of the samples themselves
    total = sum(v * Fraction(u) for v, u in zip(_stehfest_exact(n), values))
    return LN2 / t * float(total)


def convolve(f: Callable, g: Callable, t: float, n_panels: int = 1000) -> float:
    """Trapezoid approximation of the integral of f(s) g(t - s) over [0, t]."""
    if t < 0:
        raise ValueError("convolution needs t >= 0")
    if t == 0:
        return 0.0
    s = np.linspace(0.0, t, n_panels + 1)
    vals = np.broadcast_to(np.asarray(f(s) * g(t - s), dtype=float), s.shape)
    h = t / n_panels
    return float(h * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def convolution(f: Callable, g: Callable, n_panels: int = 1000) -> Callable:
    """The function t -> (f * g)(t) by the trapezoid rule, vectorised over t."""
    u = np.linspace(0.0, 1.0, n_panels + 1)
    w = np.full(n_panels + 1, 1.0 / n_panels)
    w[[0, -1]] *= 0.5

    def h(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("convolution needs t >= 0")
        s = t[..., None] * u
        vals = np.broadcast_to(np.asarray(f(s) * g(t[..., None] - s), dtype=float), s.shape)
        return t * (vals @ w)
    return h


# -- closed forms -----------------------------------------------------------

class NotClosedForm(ValueError):
    pass


@dataclass(frozen=True)
class _Term:
    coef: ex.Node       # free of t
    weight: complex     # numeric multiplier
    power: int          # t**power
    rate: complex       # exp(rate * t)


def _const_value(node: ex.Node) -> float:
    if not ex.is_constant(node):
        raise NotClosedForm(f"'{ex.to_string(node)}' must be a numeric constant here")
    return float(ex.evaluate(node))


def _product(a: list[_Term], b: list[_Term]) -> list[_Term]:
    return [_Term(ex.mul(p.coef, q.coef), p.weight * q.weight, p.power + q.power, p.rate + q.rate)
            for p in a for q in b]


def _decompose(node: ex.Node, var: str) -> list[_Term]:
    if var not in ex.free_vars(node):
        return [_Term(node, 1.0, 0, 0j)]
    if isinstance(node, ex.Var):
        return [_Term(ex.Num(1.0), 1.0, 1, 0j)]
    if isinstance(node, ex.Neg):
        return [_Term(q.coef, -q.weight, q.power, q.rate) for q in _decompose(node.operand, var)]
    if isinstance(node, ex.BinOp):
        op = node.op
        if op in "+-":
            right = _decompose(node.right, var)
            if op == "-":
                right = [_Term(q.coef, -q.weight, q.power, q.rate) for q in right]
            return _decompose(node.left, var) + right
        if op == "*":
            return _product(_decompose(node.left, var), _decompose(node.right, var))
        if op == "/":
            if var in ex.free_vars(node.right):
                raise NotClosedForm("t in a denominator")
            return [_Term(ex.BinOp("/", q.coef, node.right), q.weight, q.power, q.rate)
                    for q in _decompose(node.left, var)]
        expo = _const_value(node.right)
        if expo != int(expo) or not 0 <= expo <= 32:
            raise NotClosedForm("only small non-negative integer powers of t-dependent factors")
        base = _decompose(node.left, var)
        out = [_Term(ex.Num(1.0), 1.0, 0, 0j)]
        for _ in range(int(expo)):
            out = _product(out, base)
        return out
    if isinstance(node, ex.Call) and node.func in ("exp", "sin", "cos"):
        slope, offset = _linear_in(node.arg, var)
        if node.func == "exp":
            return [_Term(ex.Call("exp", offset) if offset is not None else ex.Num(1.0), 1.0, 0, complex(slope))]
        # sin(a t + c) = sin(at) cos(c) + cos(at) sin(c)
        i_rate = 1j * slope
        sin_at = [(1 / 2j, i_rate), (-1 / 2j, -i_rate)]
        cos_at = [(0.5, i_rate), (0.5, -i_rate)]
        if offset is None:
            parts = [(ex.Num(1.0), sin_at if node.func == "sin" else cos_at)]
        elif node.func == "sin":
            parts = [(ex.Call("cos", offset), sin_at), (ex.Call("sin", offset), cos_at)]
        else:
            parts = [(ex.Call("cos", offset), cos_at), (ex.Neg(ex.Call("sin", offset)), sin_at)]
        return [_Term(c, w, 0, z) for c, pieces in parts for w, z in pieces]
    raise NotClosedForm(f"no closed form for '{ex.to_string(node)}'")


def _linear_in(node: ex.Node, var: str) -> tuple[float, ex.Node | None]:
    slope = 0.0
    offset: list[ex.Node] = []
    for q in _decompose(node, var):
        if q.rate != 0 or q.power > 1 or q.weight.imag:
            raise NotClosedForm(f"'{ex.to_string(node)}' is not linear in {var}")
        if q.power == 1:
            slope += q.weight.real * _const_value(q.coef)
        else:
            c = q.coef if q.weight.real == 1 else ex.mul(ex.Num(abs(q.weight.real)), q.coef)
            offset.append(ex.Neg(c) if q.weight.real < 0 else c)
    off = None
    for c in offset:
        off = c if off is None else ex.BinOp("+", off, c)
    return slope, off


class ClosedForm:
    """Exact transform in ``var`` of an exponential-polynomial expression.

    ``evaluate(p, bindings)`` broadcasts over array bindings of the
    remaining variables and over an array of ``p`` (trailing axis).
    """

    def __init__(self, node: ex.Node, var: str = "t"):
        self.node = node
        self.var = var
        self.terms = [q for q in _decompose(node, var) if q.weight != 0]

    @classmethod
    def try_build(cls, node: ex.Node, var: str = "t") -> "ClosedForm | None":
        try:
            return cls(node, var)
        except NotClosedForm:
            return None

    def evaluate(self, p: float, bindings: Mapping | None = None):
        p = np.asarray(p, dtype=float)
        total = 0.0
        for q in self.terms:
            den = p - q.rate
            if np.any(den == 0):
                raise TransformError(f"p={q.rate.real:g} is a pole of the transform of '{ex.to_string(self.node)}'")
            factor = (q.weight * math.factorial(q.power) / den ** (q.power + 1)).real
            if np.any(factor != 0.0):
                total = total + factor * ex.evaluate(q.coef, bindings)
        return float(total) if np.ndim(total) == 0 else total

    def abscissa(self) -> float:
        """Real part of the right-most pole (convergence abscissa of the integral)."""
        return max((q.rate.real for q in self.terms), default=-math.inf)


class ExprTransform:
    """Transform of a parsed expression in t, closed form when recognised.

    Falls back to Simpson quadrature of the truncated integral, vectorised
    over array bindings of the other variables.
    """

    def __init__(self, node: ex.Node, settings: TransformSettings | None = None, var: str = "t"):
        self.node = node
        self.var = var
        self.settings = settings or TransformSettings()
        self.closed = ClosedForm.try_build(node, var)

    @property
    def is_closed(self) -> bool:
        return self.closed is not None

    def __call__(self, p: float, bindings: Mapping | None = None):
        if self.closed is not None:
            return self.closed.evaluate(p, bindings)
        return self._numeric(p, dict(bindings or {}))

    def _numeric(self, p: float, bindings):
        if not p > 0:
            raise TransformError("numeric transform needs p > 0")
        s = self.settings
        t_max = s.horizon(p)
        t = np.linspace(0.0, t_max, s.n_quad + 1)
        arrays = {k: np.asarray(v, dtype=float) for k, v in bindings.items()}
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        env = {k: np.broadcast_to(a, shape)[..., None] for k, a in arrays.items()}
        env[self.var] = t
        vals = np.broadcast_to(np.asarray(ex.evaluate(self.node, env), dtype=float), shape + t.shape)
        w = simpson_weights(s.n_quad, t_max / s.n_quad) * np.exp(-p * t)
        result = vals @ w
        tail = math.exp(-p * t_max) * np.max(np.abs(vals), axis=-1)
        if not np.all(np.isfinite(result)) or np.any((tail > TAIL_RTOL * np.abs(result)) & (tail > 0)):
            raise TransformConvergenceError(
                f"transform of '{ex.to_string(self.node)}' at p={p:g} not converged over t<={t_max:g}")
        return float(result) if np.ndim(result) == 0 else result
