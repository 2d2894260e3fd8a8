import csv
import io
import json
import subprocess
import sys

import pytest

from tsvar.cli import ProblemFileError, main, parse_problem_text

from conftest import PROBLEMS, SQRT2

BASE = """[timescale]
segments = [0,1]
resolution = 10

[objective]
outer = {outer}
delta = {delta}

[boundary]
a = fixed 0
b = fixed {b}
"""


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def write(tmp_path, text, name="p.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_unknown_outer_variable(tmp_path):
    code, _, err = run("eval", write(tmp_path, BASE.format(outer="F3", delta="v^2", b=1)))
    assert code == 2
    assert "line 6, column 9: unknown variable F3" in err


def test_syntax_error_has_position(tmp_path):
    code, _, err = run("eval", write(tmp_path, BASE.format(outer="F1", delta="v^2 +* 2", b=1)))
    assert code == 2 and "line 7" in err


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[timescale]\nsegments = [0,1]\nbogus = 1\n", "unknown key 'bogus'"),
        (BASE.format(outer="F1", delta="v", b=1).replace("[0,1]", "[1,0]"), "line 2, column 12"),
        ("[nonsense]\n", "unknown section"),
        (BASE.format(outer="F1", delta="v", b=1) + "[boundary]\na = free\n", "duplicate"),
        (BASE.format(outer="F1", delta="v", b="sometimes"), "line 11"),
    ],
)
def test_input_errors(tmp_path, text, fragment):
    code, _, err = run("eval", write(tmp_path, text))
    assert code == 2 and fragment in err


def test_parse_error_type():
    with pytest.raises(ProblemFileError) as info:
        parse_problem_text("[timescale]\nsegments = {0},{1}\n[objective]\nnabla = v\ndelta = v\n")
    assert info.value.line == 5


def test_missing_file():
    code, _, err = run("eval", PROBLEMS / "does_not_exist.txt")
    assert code == 2 and "cannot read" in err


def test_domain_error(tmp_path):
    code, _, err = run("eval", write(tmp_path, BASE.format(outer="F1", delta="log(v)", b=-1)))
    assert code == 3 and "domain error" in err and "t=0.0" in err


def test_not_converged_exit_code(tmp_path):
    text = BASE.format(outer="F1/F2", delta="t*v", b=1) + "nabla = v^2\n[solver]\nmax_iterations = 2\n"
    text = text.replace("delta = t*v\n\n[boundary]", "delta = t*v\nnabla = v^2\n\n[boundary]").replace("nabla = v^2\n[solver]", "[solver]")
    code, out, _ = run("solve", write(tmp_path, text))
    assert code == 4 and "converged: no" in out


def test_residual_requires_trajectory(tmp_path):
    code, _, err = run("residual", write(tmp_path, BASE.format(outer="F1", delta="v^2", b=1)))
    assert code == 2 and "[trajectory]" in err


def test_residual_verdicts(tmp_path):
    code, out, _ = run("residual", PROBLEMS / "quotient_discrete.txt")
    assert code == 0 and "verdict: EXTREMAL" in out
    text = (PROBLEMS / "quotient_discrete.txt").read_text()
    perturbed = write(tmp_path, text.replace("1 + sqrt(2)/2", "1.1 + sqrt(2)/2"))
    code, out, _ = run("residual", perturbed, "--json")
    doc = json.loads(out)
    assert code == 0 and doc["residual"]["verdict"] == "NOT extremal"
    assert doc["residual"]["el"]["relative_deviation_nabla"] > 1e-2


def test_solve_json_and_outputs(tmp_path):
    traj, trace = tmp_path / "x.csv", tmp_path / "trace.csv"
    code, out, _ = run("solve", PROBLEMS / "quotient_discrete.txt", "--json", "--out", traj, "--trace", trace)
    doc = json.loads(out)
    assert code == 0 and doc["schema_version"] == 1 and doc["command"] == "solve"
    assert doc["result"]["converged"]
    assert doc["result"]["x"]["values"][1] == pytest.approx(1 + SQRT2 / 2, abs=1e-8)
    assert doc["result"]["lambda_estimate"] is None
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["t", "x", "x_delta", "x_nabla", "xi", "chi", "residual_nabla", "residual_delta"]
    assert len(rows) == 4
    assert len(list(csv.reader(traj.open()))) >= 3


def test_iso_trace_has_u_w(tmp_path):
    trace = tmp_path / "trace.csv"
    code, out, _ = run("residual", PROBLEMS / "iso_discrete.txt", "--trace", trace)
    assert code == 0 and "6.000000" in out
    assert next(csv.reader(trace.open()))[-2:] == ["u", "w"]


def test_verify(tmp_path):
    code, out, _ = run("verify", PROBLEMS / "quotient_interval.txt")
    assert code == 0 and "identities: PASS" in out and "regular: forms coincide" in out
    code, out, _ = run("verify", PROBLEMS / "irregular_junctions.txt", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["result"]["passed"]


def test_resolution_override():
    _, out, _ = run("eval", PROBLEMS / "autonomous_interval.txt", "--resolution", "7", "--json")
    assert json.loads(out)["problem"]["nodes"] == 15
    code, _, err = run("eval", PROBLEMS / "autonomous_interval.txt", "--resolution", "0")
    assert code == 2


def _strip_timings(text):
    doc = json.loads(text)
    doc.pop("timings")
    return doc


def test_json_deterministic():
    args = ("solve", PROBLEMS / "quotient_interval.txt", "--json", "--resolution", "50", "--seed", "3")
    first, second = run(*args), run(*args)
    assert first[0] == second[0] == 0
    assert _strip_timings(first[1]) == _strip_timings(second[1])


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tsvar", "eval", str(PROBLEMS / "autonomous_discrete.txt")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and "L = 0.666667" in proc.stdout
