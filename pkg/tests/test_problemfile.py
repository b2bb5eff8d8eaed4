import numpy as np
import pytest

from conftest import problem_text
from fpvide import expr as ex
from fpvide.problemfile import (ProblemFileError, bundled_path, dump_problem, load_problem, load_problem_file,
                                parse_problem)

TRANSPORT = dict(equation="m = 1\nn = 1\na1 = 1\nb1 = 1\nc = 0\nkernel = exp(-t)",
                 initial="u0_lower = r\nu0_upper = 2 - r",
                 boundary="bc1.location = x0\nbc1.order = 0\nbc1.lower = r\nbc1.upper = 2 - r")


def test_bundled_first_example():
    spec = load_problem(bundled_path("example1"))
    assert (spec.m, spec.n) == (1, 2)
    assert ex.to_string(spec.kernel) == "sin(t)"
    assert spec.boundary[0].location == "x0" and spec.location("x0") == 1.0


def test_bundled_grids_and_settings():
    pf = load_problem_file(bundled_path("example2"))
    assert (pf.grids.nx, pf.grids.nt, pf.grids.r_levels) == (21, 16, 11)
    np.testing.assert_allclose(pf.grids.t_grid(pf.spec), np.linspace(0.5, 2.0, 16))
    assert pf.settings.stehfest_n == 12 and pf.settings.oracle_dt == 1e-4


@pytest.mark.parametrize("k", [1, 2, 3])
def test_round_trip(k):
    pf = load_problem_file(bundled_path(f"example{k}"))
    again = parse_problem(dump_problem(pf), pf.source)
    assert again == pf


def test_missing_section_named():
    text = problem_text(**TRANSPORT).replace("[domain]\nx0 = 0\nx1 = 1\nT = 1\n", "")
    with pytest.raises(ProblemFileError, match=r"missing section \[domain\]"):
        parse_problem(text)


def test_missing_key_named():
    text = problem_text(**{**TRANSPORT, "equation": "m = 1\nn = 1\nb1 = 1\nkernel = 1"})
    with pytest.raises(ProblemFileError, match="missing key 'a1'"):
        parse_problem(text)


def test_parse_error_has_line_number():
    text = problem_text(**TRANSPORT, forcing="lower = (r-1)*q\nupper = 0")
    line = text.splitlines().index("lower = (r-1)*q") + 1
    with pytest.raises(ProblemFileError, match=rf"<string>:{line}: 'lower'.*'q'"):
        parse_problem(text)


def test_reversed_forcing_reported():
    with pytest.raises(ProblemFileError, match="forcing lower > upper at x=.*r=0"):
        parse_problem(problem_text(**TRANSPORT, forcing="lower = (1-r)*x\nupper = (r-1)*x"))


def test_sign_violation_explained():
    eq = TRANSPORT["equation"].replace("c = 0", "c = x - 0.5")
    with pytest.raises(ProblemFileError, match="coefficient c .* changes sign"):
        parse_problem(problem_text(**{**TRANSPORT, "equation": eq}))


def test_unknown_key_and_section():
    with pytest.raises(ProblemFileError, match="unknown key 'a7'"):
        parse_problem(problem_text(**{**TRANSPORT, "equation": TRANSPORT["equation"] + "\na7 = 1"}))
    with pytest.raises(ProblemFileError, match="unknown section"):
        parse_problem(problem_text(**TRANSPORT) + "[plot]\nx = 1\n")


def test_duplicate_key():
    with pytest.raises(ProblemFileError, match="duplicate key"):
        parse_problem(problem_text(**{**TRANSPORT, "equation": TRANSPORT["equation"] + "\nc = 1"}))


def test_numeric_boundary_location():
    bc = TRANSPORT["boundary"].replace("x0", "1")
    spec = parse_problem(problem_text(**{**TRANSPORT, "boundary": bc})).spec
    assert spec.boundary[0].location == "x1"
    with pytest.raises(ProblemFileError, match="not an end"):
        parse_problem(problem_text(**{**TRANSPORT, "boundary": TRANSPORT["boundary"].replace("x0", "0.5")}))


def test_defaults():
    spec = parse_problem(problem_text(**{**TRANSPORT, "equation": "m = 1\nn = 1\na1 = 1\nb1 = 1\nkernel = 1"})).spec
    assert spec.c == ex.Num(1.0) and spec.a[0] == ex.Num(0.0) and spec.kernel_sign == 1


def test_initial_conditions_required_for_time_derivatives():
    text = problem_text(**{**TRANSPORT, "initial": ""})
    with pytest.raises(ProblemFileError, match=r"missing section \[initial\]"):
        parse_problem(text)


def test_file_not_found(tmp_path):
    with pytest.raises(ProblemFileError, match="file not found"):
        load_problem(tmp_path / "nonexistent.problem")
