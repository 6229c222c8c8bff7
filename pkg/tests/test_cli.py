"""Harness tests: potential parsing, experiment tables, exit codes, determinism."""

import json
import random
from fractions import Fraction

import pytest

from cmlimit.cli import (
    ConfigError,
    PotentialExpression,
    PotentialSyntaxError,
    build_config,
    main,
    parse_potential,
    render_potential,
)
from cmlimit.dynamics import PolynomialPotential


# ---------------------------------------------------------------------------
# Potential expressions
# ---------------------------------------------------------------------------


def test_parse_simple_quadratic():
    assert parse_potential("0.5*x^2").coeffs == {2: Fraction(1, 2)}


def test_parse_polynomial_against_point_evaluation():
    u = parse_potential("x^4 - 2*x^2 + 1")
    assert u.coeffs == {4: 1, 2: -2, 0: 1}
    for x in (-2, -1, 0, 1, 2):
        assert u.evaluate(x) == x**4 - 2 * x**2 + 1


def test_parse_rational_and_sign_forms():
    assert parse_potential("3/2*x").coeffs == {1: Fraction(3, 2)}
    assert parse_potential("-x").coeffs == {1: -1}
    assert parse_potential("+x^3").coeffs == {3: 1}
    assert parse_potential("2").coeffs == {0: 2}
    assert parse_potential("x").coeffs == {1: 1}
    assert parse_potential("0").coeffs == {}
    assert parse_potential(" x ^ 2 - x ").coeffs == {2: 1, 1: -1}
    assert parse_potential("x + x").coeffs == {1: 2}
    assert parse_potential("x - x").coeffs == {}


def test_parse_errors_with_position():
    with pytest.raises(PotentialSyntaxError) as err:
        parse_potential("x^-1")
    assert err.value.position == 2
    with pytest.raises(PotentialSyntaxError):
        parse_potential("")
    with pytest.raises(PotentialSyntaxError):
        parse_potential("2x")
    with pytest.raises(PotentialSyntaxError):
        parse_potential("x^2.5")
    with pytest.raises(PotentialSyntaxError):
        parse_potential("1/0")
    with pytest.raises(PotentialSyntaxError):
        parse_potential("x + ")
    with pytest.raises(PotentialSyntaxError) as err:
        parse_potential("x^2 + y")
    assert err.value.position == 6
    with pytest.raises(PotentialSyntaxError):
        parse_potential("x x")


def test_render_parse_roundtrip_random():
    rng = random.Random(71)
    for _ in range(100):
        coeffs = {}
        for _ in range(rng.randint(0, 5)):
            degree = rng.randint(0, 8)
            if rng.random() < 0.5:
                coeffs[degree] = Fraction(rng.randint(-20, 20), rng.randint(1, 12))
            else:
                coeffs[degree] = Fraction(rng.randint(-20, 20))
        p = PolynomialPotential.from_coeffs(coeffs)
        assert parse_potential(render_potential(p)) == p


def test_potential_expression_keeps_source():
    expr = PotentialExpression.parse("0.5*x^2")
    assert expr.source == "0.5*x^2"
    assert expr.potential.coeffs == {2: Fraction(1, 2)}


# ---------------------------------------------------------------------------
# Experiment tables through main()
# ---------------------------------------------------------------------------


def run_cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_scaling_values(capsys):
    code, out = run_cli(capsys, "scaling", "--N", "1,3")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "N,mbar,eps,comm_magnitude,uncertainty_bound"
    assert lines[1] == "1,1,1,1,0.5"
    assert lines[2].startswith("3,1,0.333333333333,0.333333333333,")


def test_scaling_explicit_masses(capsys):
    code, out = run_cli(capsys, "scaling", "--masses", "1,2,3,1,2,3")
    assert code == 0
    row = out.strip().split("\n")[1].split(",")
    assert row[0] == "6"
    assert row[3] == "0.0833333333333"  # hbar / 12


def test_scaling_invalid_masses(capsys):
    code = main(["scaling", "--masses", "1,-2"])
    assert code == 1


def test_residuals_rows(capsys):
    code, out = run_cli(capsys, "residuals", "--max-degree", "5", "--samples", "5")
    assert code == 0
    rows = {tuple(line.split(",")[:2]): line.split(",")[2:]
            for line in out.strip().split("\n")[1:]}
    assert rows[("power", "n=2;m=2")] == ["2", "2"]
    assert rows[("power", "n=1;m=5")] == ["inf", "0"]
    for (case, params), (valuation, _) in rows.items():
        assert valuation == "inf" or int(valuation) >= 2


def test_residuals_degree_guard(capsys):
    assert main(["residuals", "--max-degree", "9"]) == 1


def test_uncertainty_saturation(capsys):
    code, out = run_cli(capsys, "uncertainty", "--N", "2,4", "--dim", "8")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "N,d,product,bound,ratio,comm_expectation_im,trunc_weight,flag"
    assert lines[1] == "2,8,0.25,0.25,1,0.5,0,ok"
    assert lines[2] == "4,8,0.125,0.125,1,0.25,0,ok"


def test_uncertainty_flagged_row_exit_code(capsys):
    code, out = run_cli(capsys, "uncertainty", "--N", "2", "--dim", "8", "--x0", "100")
    assert code == 2
    row = out.strip().split("\n")[1]
    assert row.endswith("truncation")
    assert "nan" in row


def test_evolve_free_final_position(capsys):
    code, out = run_cli(capsys, "evolve", "--potential", "0", "--N", "2",
                        "--x0", "1", "--p0", "1", "--t", "1", "--dt", "0.25")
    assert code == 0
    sections = out.strip().split("# ")
    quantum = next(s for s in sections if s.startswith("quantum"))
    last_row = quantum.strip().split("\n")[-1].split(",")
    assert last_row[0] == "1"
    assert last_row[1] == "1.5"
    deviation = next(s for s in sections if s.startswith("deviation"))
    assert "max_x_deviation" in deviation


def test_evolve_harmonic_sanity_row(capsys):
    code, out = run_cli(capsys, "evolve", "--potential", "0.5*x^2",
                        "--t", "1", "--dt", "0.05")
    assert code == 0
    assert "quadratic_deviation_lt_1e-06,PASS" in out


def test_evolve_full_model_matches_effective(capsys):
    code_e, out_e = run_cli(capsys, "evolve", "--potential", "1.5*x^2", "--N", "3",
                            "--model", "effective", "--dim", "32",
                            "--x0", "0.5", "--t", "1", "--dt", "0.1")
    code_f, out_f = run_cli(capsys, "evolve", "--potential", "1.5*x^2", "--N", "3",
                            "--model", "full", "--dim", "8",
                            "--x0", "0.5", "--t", "1", "--dt", "0.1")
    assert code_e == 0 and code_f == 0

    def final_x(text):
        quantum = next(s for s in text.strip().split("# ") if s.startswith("quantum"))
        return float(quantum.strip().split("\n")[-1].split(",")[1])

    assert final_x(out_e) == pytest.approx(final_x(out_f), abs=1e-6)


def test_evolve_json_format(capsys):
    code, out = run_cli(capsys, "evolve", "--potential", "0", "--t", "0.5",
                        "--dt", "0.25", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["experiment"] == "evolve"
    names = [t["name"] for t in payload["tables"]]
    assert names == ["quantum", "classical", "deviation", "sanity"]
    assert payload["failed"] is None


def test_evolve_truncation_failure(capsys):
    # spreading free packet at a tiny basis: gate violation mid-run
    code, out = run_cli(capsys, "evolve", "--potential", "0", "--dim", "8",
                        "--x0", "1", "--t", "2", "--dt", "0.25")
    assert code == 2
    assert "# FAILED ExcessiveTruncationError" in out


def test_evolve_parse_error_exit_code(capsys):
    assert main(["evolve", "--potential", "x^-1"]) == 1


def test_evolve_bad_grid_exit_code(capsys):
    assert main(["evolve", "--potential", "0", "--t", "1", "--dt", "0.3"]) == 1


def test_evolve_nonpositive_dt_exit_code(capsys):
    assert main(["evolve", "--potential", "0", "--dt", "0"]) == 1


# ---------------------------------------------------------------------------
# Config handling and determinism
# ---------------------------------------------------------------------------


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("N = 1,2\nmbar = 2\n# comment line\n\n", encoding="utf-8")
    code, out = run_cli(capsys, "scaling", "--config", str(cfg), "--N", "4")
    assert code == 0
    lines = out.strip().split("\n")
    assert len(lines) == 2  # flag overrode the config's N list
    assert lines[1].split(",")[0] == "4"
    assert lines[1].split(",")[1] == "2"  # config mbar survived


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n", encoding="utf-8")
    assert main(["scaling", "--config", str(cfg)]) == 1


def test_config_missing_file():
    assert main(["scaling", "--config", "/nonexistent/path.cfg"]) == 1


def test_config_malformed_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("just some words\n", encoding="utf-8")
    assert main(["scaling", "--config", str(cfg)]) == 1


def test_unknown_flag_is_config_error():
    assert main(["scaling", "--frequency", "2"]) == 1


def test_byte_identical_reruns(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    argv = ["residuals", "--max-degree", "3", "--samples", "8", "--seed", "42"]
    assert main(argv + ["--out", str(out1)]) == 0
    assert main(argv + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    # a different seed changes the random section
    out3 = tmp_path / "c.csv"
    assert main(argv[:-1] + ["7", "--out", str(out3)]) == 0
    assert out1.read_bytes() != out3.read_bytes()


def test_output_file_uses_lf_endings(tmp_path):
    out = tmp_path / "scaling.csv"
    assert main(["scaling", "--N", "1,2", "--out", str(out)]) == 0
    data = out.read_bytes()
    assert b"\r" not in data
    assert data.endswith(b"\n")


def test_build_config_defaults():
    cfg = build_config(["evolve"])
    assert cfg["potential"] == "0"
    assert cfg["model"] == "effective"
    assert cfg["dt"] == 0.01
    with pytest.raises(ConfigError):
        build_config(["evolve", "--model", "both"])
