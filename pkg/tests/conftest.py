import textwrap

import pytest

from fpvide.problemfile import bundled_path, load_problem, parse_problem


def problem_text(equation, forcing="lower = 0\nupper = 0", initial="", boundary="", domain="x0 = 0\nx1 = 1\nT = 1"):
    parts = ["[equation]", textwrap.dedent(equation).strip(), "[forcing]", textwrap.dedent(forcing).strip()]
    if initial:
        parts += ["[initial]", textwrap.dedent(initial).strip()]
    parts += ["[boundary]", textwrap.dedent(boundary).strip(), "[domain]", textwrap.dedent(domain).strip()]
    return "\n".join(parts) + "\n"


def make_spec(*args, check=True, **kw):
    spec = parse_problem(problem_text(*args, **kw), check=False).spec
    if check:
        spec.check()
    return spec


@pytest.fixture(scope="session")
def examples():
    return {k: load_problem(bundled_path(f"example{k}")) for k in (1, 2, 3)}
