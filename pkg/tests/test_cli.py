from __future__ import annotations

import json
import math

import pytest

from robust_barriers.cli import RunConfig, UsageError, build_parser, main, render_report, version_string

UNIFORM = ["--law", "uniform", "--support", "0", "200", "--spot", "100"]


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestBoundsCommand:
    """End-to-end golden case."""

    def test_uniform_golden(self, capsys):
        code, out, _ = _run(capsys, ["bounds", *UNIFORM, "--barriers", "83", "117"])
        assert code == 0
        doc = json.loads(out)
        assert doc["upper"]["case"] == "IV"
        assert doc["upper"]["value"] == pytest.approx(0.66, abs=1e-6)
        assert doc["lower"]["case"] == "I"
        assert doc["lower"]["value"] == pytest.approx(0.2944, abs=5e-4)

    def test_artifact_embeds_config_and_version(self, capsys, tmp_path):
        target = tmp_path / "b.json"
        code, out, _ = _run(capsys, ["bounds", *UNIFORM, "--barriers", "117", "83", "--no-check",
                                     "--dump-geometry", "--out", str(target)])
        assert code == 0
        doc = json.loads(target.read_text())
        assert doc == json.loads(out)
        assert doc["version"] == version_string()
        assert doc["config"]["command"] == "bounds"
        assert doc["config"]["barriers"] == [[83.0, 117.0]]
        assert doc["geometry"]["rho_minus_0"] == pytest.approx(166.0)
        assert doc["geometry"]["kappa_S0"] == pytest.approx(100.0)

    def test_infinite_values_are_strings(self, capsys):
        code, out, _ = _run(capsys, ["bounds", *UNIFORM, "--barriers", "40", "160", "--no-check"])
        assert code == 0
        json.loads(out)  # strict JSON, no bare Infinity
        assert "Infinity" not in out


class TestErrors:
    """Exit codes and machine-readable errors."""

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["bounds", *UNIFORM, "--barriers", "83", "117", "--frobnicate"])
        assert info.value.code == 2
        err = capsys.readouterr().err
        assert json.loads(err.strip().splitlines()[-1])["error"] == "usage_error"

    def test_seed_required(self, capsys):
        code, _, err = _run(capsys, ["verify-embedding", *UNIFORM, "--barriers", "83", "117", "--paths", "10"])
        assert code == 2
        assert json.loads(err.strip().splitlines()[-1])["error"] == "usage_error"

    def test_module_error_exit_one(self, capsys):
        code, _, err = _run(capsys, ["bounds", *UNIFORM, "--barriers", "120", "150"])
        assert code == 1
        assert json.loads(err.strip().splitlines()[-1])["error"] == "domain_error"

    def test_run_config_validation(self):
        with pytest.raises(UsageError):
            RunConfig("simulate", {}, [], None, {}, None, 1).validate()

    def test_every_flag_has_help(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            for action in p._actions:
                if action.option_strings and action.dest != "help":
                    assert action.help, f"{name} {action.option_strings} lacks help"


class TestStochasticCommands:
    """Seeded commands."""

    def test_verify_embedding(self, capsys):
        code, out, _ = _run(capsys, ["verify-embedding", *UNIFORM, "--barriers", "83", "117", "--side", "upper",
                                     "--paths", "20000", "--seed", "4"])
        assert code == 0
        res = json.loads(out)["upper"]
        assert res["pass"] and res["case"] == "IV"

    def test_simulate_determinism(self, capsys, tmp_path):
        argv = ["simulate", "--barriers", "83", "117", "--hedge", "superhedge", "--paths", "300", "--seed", "7",
                "--heston", "steps_per_year=60", "--bootstrap", "100"]
        outputs = []
        for name in ("a", "b"):
            d = tmp_path / name
            code, out, err = _run(capsys, [*argv, "--out-dir", str(d)])
            assert code == 0
            assert "pref" in err
            doc = json.loads(out)
            doc["config"].pop("output_dir")
            outputs.append((doc, (d / "errors_short_superhedge.csv").read_text(), (d / "utilities.json").exists()))
        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]
        assert outputs[0][2]


class TestGridCommands:
    """Type maps, plans and envelopes."""

    def test_typemap_csv(self, capsys, tmp_path):
        csv_path = tmp_path / "tm.csv"
        code, _, _ = _run(capsys, ["typemap", *UNIFORM, "--lb-range", "20", "90", "2", "--ub-range", "110", "180",
                                   "2", "--csv", str(csv_path)])
        assert code == 0
        rows = csv_path.read_text().splitlines()
        assert rows[0] == "lb,ub,upper_case,lower_case"
        assert "20.0,110.0,I,III" in rows

    def test_hedge_plan(self, capsys):
        code, out, _ = _run(capsys, ["hedge-plan", *UNIFORM, "--barriers", "83", "117", "--side", "upper"])
        assert code == 0
        doc = json.loads(out)
        assert doc["superhedge"]["cost"] == pytest.approx(0.66, abs=1e-6)
        legs = doc["superhedge"]["legs"]
        assert {leg["kind"] for leg in legs} == {"call", "put", "forward", "cash"}

    def test_envelope(self, capsys):
        code, out, _ = _run(capsys, ["envelope", *UNIFORM, "--n-quotes", "5", "--quote-range", "0", "200",
                                     "--strikes", "100"])
        assert code == 0
        doc = json.loads(out)
        # quotes at 40, 80, ..., 200: chord of C(80) = 36 and C(120) = 16
        assert doc["upper"] == pytest.approx([26.0])
        assert doc["lower"][0] <= 25.0


class TestRenderReport:
    """Fixed-width utility table."""

    ROW = {"label": "short superhedge", "utility": -0.04, "ci_low": -0.05, "ci_high": -0.03, "mean_error": -0.01,
           "n_paths": 5000, "preferred": True}

    def test_empty(self):
        text = render_report([])
        assert len(text.splitlines()) == 2
        assert text.startswith("hedge")

    def test_preferred_marker(self):
        other = dict(self.ROW, label="short delta/vega", utility=-0.1, preferred=False)
        lines = render_report([self.ROW, other]).splitlines()
        assert lines[2].rstrip().endswith("*")
        assert not lines[3].rstrip().endswith("*")
        assert len({len(l.rstrip(" *")) for l in lines[2:]}) == 1

    def test_nan_guard(self):
        bad = dict(self.ROW, utility=math.nan)
        with pytest.warns(RuntimeWarning):
            text = render_report([bad])
        assert "n/a" in text
