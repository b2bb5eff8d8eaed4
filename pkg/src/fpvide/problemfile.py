"""Plain-text problem files: ``[section]`` headers and ``key = value`` lines.

Values are numbers, words, or expressions in the language of :mod:`expr`.
Blank lines and lines starting with ``#`` are ignored.  Boundary
conditions use dotted keys ``bc1.location``, ``bc1.order``, ``bc1.lower``,
``bc1.upper`` and optionally ``bc1.factor``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as ex
from .fltm import (BOUNDARY_VARS, COEF_VARS, FORCING_VARS, INITIAL_VARS, KERNEL_VARS, BoundaryCondition,
                   FuzzyDatum, ProblemError, ProblemSpec, SolverSettings)

SECTIONS = ("equation", "forcing", "initial", "boundary", "domain", "grids", "settings")
REQUIRED = ("equation", "forcing", "boundary", "domain")


class ProblemFileError(ValueError):
    pass


@dataclass(frozen=True)
class Grids:
    nx: int = 21
    nt: int = 16
    t0: float | None = None
    r_levels: int = 11

    def x_grid(self, spec: ProblemSpec) -> np.ndarray:
        return np.linspace(spec.x0, spec.x1, self.nx)

    def t_grid(self, spec: ProblemSpec) -> np.ndarray:
        t0 = self.t0 if self.t0 is not None else spec.T / self.nt
        return np.linspace(t0, spec.T, self.nt)


@dataclass(frozen=True)
class Settings:
    stehfest_n: int = 12
    quad: int = 2048
    ode_steps: int = 400
    oracle_dx: float | None = None
    oracle_dt: float | None = None
    oracle_T: float | None = None

    def solver(self, **overrides) -> SolverSettings:
        kw = {"stehfest_n": self.stehfest_n, "n_quad": self.quad, "ode_steps": self.ode_steps}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SolverSettings(**kw)


@dataclass(frozen=True)
class ProblemFile:
    spec: ProblemSpec
    grids: Grids = field(default_factory=Grids)
    settings: Settings = field(default_factory=Settings)
    source: str = "<string>"


_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z_0-9.]*)\s*=\s*(.*)$")


def _split(text: str, source: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).lower()
            if current not in SECTIONS:
                raise ProblemFileError(f"{source}:{lineno}: unknown section [{current}]")
            if current in sections:
                raise ProblemFileError(f"{source}:{lineno}: section [{current}] appears twice")
            sections[current] = {}
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ProblemFileError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ProblemFileError(f"{source}:{lineno}: key outside any section")
        key, value = m.group(1), m.group(2).strip()
        if not value:
            raise ProblemFileError(f"{source}:{lineno}: empty value for '{key}'")
        if key in sections[current]:
            raise ProblemFileError(f"{source}:{lineno}: duplicate key '{key}' in [{current}]")
        sections[current][key] = (value, lineno)
    return sections


class _Reader:
    """Typed access to one section, tracking which keys were consumed."""

    def __init__(self, name: str, entries: dict, source: str):
        self.name = name
        self.entries = entries
        self.source = source
        self.used: set[str] = set()

    def where(self, key: str) -> str:
        line = self.entries[key][1] if key in self.entries else None
        return f"{self.source}:{line}" if line else self.source

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str, default=None) -> str | None:
        if key not in self.entries:
            if default is None:
                raise ProblemFileError(f"{self.source}: [{self.name}] is missing key '{key}'")
            return default
        self.used.add(key)
        return self.entries[key][0]

    def number(self, key: str, default=None, kind=float):
        text = self.raw(key, None if default is None else str(default))
        try:
            value = float(text)
        except ValueError:
            raise ProblemFileError(f"{self.where(key)}: '{key}' must be a number, got {text!r}") from None
        if kind is int:
            if value != int(value):
                raise ProblemFileError(f"{self.where(key)}: '{key}' must be an integer, got {text!r}")
            return int(value)
        return value

    def optional_number(self, key: str, kind=float):
        return self.number(key, kind=kind) if self.has(key) else None

    def expression(self, key: str, allowed, default: str | None = None) -> ex.Node:
        text = self.raw(key, default)
        try:
            return ex.parse(text, allowed)
        except ex.ExprSyntaxError as e:
            raise ProblemFileError(f"{self.where(key)}: '{key}': {e} "
                                   f"(allowed variables: {', '.join(sorted(allowed)) or 'none'})") from None

    def datum(self, prefix: str, pair_vars, factor_vars, sep: str = "_") -> FuzzyDatum:
        lower = self.expression(f"{prefix}{sep}lower", pair_vars)
        upper = self.expression(f"{prefix}{sep}upper", pair_vars)
        fkey = f"{prefix}{sep}factor"
        factor = self.expression(fkey, factor_vars) if self.has(fkey) else ex.Num(1.0)
        return FuzzyDatum(lower, upper, factor)

    def finish(self):
        extra = sorted(set(self.entries) - self.used)
        if extra:
            raise ProblemFileError(f"{self.where(extra[0])}: unknown key '{extra[0]}' in [{self.name}]")


def parse_problem(text: str, source: str = "<string>", check: bool = True) -> ProblemFile:
    sections = _split(text, source)
    for name in REQUIRED:
        if name not in sections:
            raise ProblemFileError(f"{source}: missing section [{name}]")
    rd = {name: _Reader(name, sections.get(name, {}), source) for name in SECTIONS}

    eq = rd["equation"]
    m = eq.number("m", kind=int)
    n = eq.number("n", kind=int)
    if m not in (1, 2) or n not in (0, 1, 2):
        raise ProblemFileError(f"{eq.where('m')}: need m in {{1, 2}} and n in {{0, 1, 2}}, got m={m}, n={n}")
    a = tuple(eq.expression(f"a{i}", COEF_VARS, "0" if i < m else None) for i in range(m + 1))
    b = tuple(eq.expression(f"b{i}", COEF_VARS, "0" if i < n else None) for i in range(n + 1))
    c = eq.expression("c", COEF_VARS, "1")
    kernel = eq.expression("kernel", KERNEL_VARS)
    sign = eq.number("kernel_sign", default=1, kind=int)

    fo = rd["forcing"]
    forcing = FuzzyDatum(fo.expression("lower", FORCING_VARS), fo.expression("upper", FORCING_VARS),
                         fo.expression("factor", FORCING_VARS - {"r"}) if fo.has("factor") else ex.Num(1.0))

    if n and "initial" not in sections:
        raise ProblemFileError(f"{source}: missing section [initial] (n={n} needs {n} initial conditions)")
    ini = rd["initial"]
    initial = tuple(ini.datum(f"u{j}", INITIAL_VARS, INITIAL_VARS - {"r"}) for j in range(n))

    bd = rd["boundary"]
    labels = sorted({k.split(".")[0] for k in bd.entries}, key=_natural)
    if len(labels) != m:
        raise ProblemFileError(f"{source}: [boundary] defines {len(labels)} conditions, m={m} needs {m}")
    dom = rd["domain"]
    x0, x1, T = dom.number("x0"), dom.number("x1"), dom.number("T")
    boundary = []
    for label in labels:
        loc = bd.raw(f"{label}.location")
        where = bd.where(f"{label}.location")
        if loc not in ("x0", "x1"):
            try:
                value = float(loc)
            except ValueError:
                raise ProblemFileError(f"{where}: location must be x0, x1 or a domain end, got {loc!r}") from None
            if value == x0:
                loc = "x0"
            elif value == x1:
                loc = "x1"
            else:
                raise ProblemFileError(f"{where}: boundary location {value:g} is not an end of [{x0:g}, {x1:g}]")
        order = bd.number(f"{label}.order", kind=int)
        data = bd.datum(label, BOUNDARY_VARS, BOUNDARY_VARS - {"r"}, sep=".")
        boundary.append(BoundaryCondition(loc, order, data))

    gr = rd["grids"]
    grids = Grids(nx=gr.number("nx", default=21, kind=int), nt=gr.number("nt", default=16, kind=int),
                  t0=gr.optional_number("t0"), r_levels=gr.number("r_levels", default=11, kind=int))
    if grids.nx < 2 or grids.nt < 1 or grids.r_levels < 2:
        raise ProblemFileError(f"{source}: [grids] needs nx >= 2, nt >= 1, r_levels >= 2")
    st = rd["settings"]
    settings = Settings(stehfest_n=st.number("stehfest_n", default=12, kind=int),
                        quad=st.number("quad", default=2048, kind=int),
                        ode_steps=st.number("ode_steps", default=400, kind=int),
                        oracle_dx=st.optional_number("oracle_dx"), oracle_dt=st.optional_number("oracle_dt"),
                        oracle_T=st.optional_number("oracle_T"))
    for r in rd.values():
        r.finish()

    spec = ProblemSpec(m=m, n=n, a=a, b=b, c=c, kernel=kernel, kernel_sign=sign, forcing=forcing,
                       initial=initial, boundary=tuple(boundary), x0=x0, x1=x1, T=T)
    if check:
        try:
            spec.check()
        except ProblemError as e:
            raise ProblemFileError(f"{source}: invalid problem: " + "; ".join(e.problems)) from None
    return ProblemFile(spec, grids, settings, source)


def _natural(label: str):
    digits = re.sub(r"\D", "", label)
    return (int(digits) if digits else 0, label)


def load_problem_file(path) -> ProblemFile:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ProblemFileError(f"{path}: file not found") from None
    except OSError as e:
        raise ProblemFileError(f"{path}: cannot read file: {e.strerror}") from None
    return parse_problem(text, str(path))


def load_problem(path) -> ProblemSpec:
    return load_problem_file(path).spec


def bundled_path(name: str) -> Path:
    """Path of a bundled problem file, e.g. ``bundled_path("example1")``."""
    path = Path(str(resources.files("fpvide") / "problems" / f"{name}.problem"))
    if not path.exists():
        raise ProblemFileError(f"{path}: file not found")
    return path


def _num(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def _expr(node: ex.Node) -> str:
    # printing needs a non-negative literal; wrap negative ones
    return ex.to_string(_positive_literals(node))


def _positive_literals(node: ex.Node) -> ex.Node:
    if isinstance(node, ex.Num):
        return ex.Neg(ex.Num(-node.value)) if node.value < 0 else node
    if isinstance(node, ex.Neg):
        return ex.Neg(_positive_literals(node.operand))
    if isinstance(node, ex.Call):
        return ex.Call(node.func, _positive_literals(node.arg))
    if isinstance(node, ex.BinOp):
        return ex.BinOp(node.op, _positive_literals(node.left), _positive_literals(node.right))
    return node


def dump_problem(pf: ProblemFile) -> str:
    """Text that :func:`parse_problem` reads back into an equivalent ProblemFile."""
    s = pf.spec
    out = ["[equation]", f"m = {s.m}", f"n = {s.n}"]
    out += [f"a{i} = {_expr(a)}" for i, a in enumerate(s.a)]
    out += [f"b{i} = {_expr(b)}" for i, b in enumerate(s.b)]
    out += [f"c = {_expr(s.c)}", f"kernel = {_expr(s.kernel)}", f"kernel_sign = {s.kernel_sign}", ""]

    def datum(prefix, d: FuzzyDatum, sep):
        lines = [f"{prefix}{sep}lower = {_expr(d.lower)}", f"{prefix}{sep}upper = {_expr(d.upper)}"]
        if d.factor != ex.Num(1.0):
            lines.append(f"{prefix}{sep}factor = {_expr(d.factor)}")
        return lines

    out += ["[forcing]"] + [line.split(".", 1)[1] for line in datum("f", s.forcing, ".")] + [""]
    if s.initial:
        out.append("[initial]")
        for j, d in enumerate(s.initial):
            out += datum(f"u{j}", d, "_")
        out.append("")
    out.append("[boundary]")
    for k, bc in enumerate(s.boundary, 1):
        out += [f"bc{k}.location = {bc.location}", f"bc{k}.order = {bc.order}"] + datum(f"bc{k}", bc.data, ".")
    out += ["", "[domain]", f"x0 = {_num(s.x0)}", f"x1 = {_num(s.x1)}", f"T = {_num(s.T)}", ""]
    g = pf.grids
    out += ["[grids]", f"nx = {g.nx}", f"nt = {g.nt}"]
    if g.t0 is not None:
        out.append(f"t0 = {_num(g.t0)}")
    out += [f"r_levels = {g.r_levels}", ""]
    st = pf.settings
    out += ["[settings]", f"stehfest_n = {st.stehfest_n}", f"quad = {st.quad}", f"ode_steps = {st.ode_steps}"]
    if st.oracle_dx is not None:
        out.append(f"oracle_dx = {_num(st.oracle_dx)}")
    if st.oracle_dt is not None:
        out.append(f"oracle_dt = {_num(st.oracle_dt)}")
    if st.oracle_T is not None:
        out.append(f"oracle_T = {_num(st.oracle_T)}")
    return "\n".join(out) + "\n"
