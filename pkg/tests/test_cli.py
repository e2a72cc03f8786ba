import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from spikedlab import artifacts, cli
from spikedlab.noise import QuadratureError


def run(tmp_path, *argv, name="out.txt"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def csv_rows(path):
    import csv
    lines = path.read_text().splitlines()
    header = json.loads(lines[0][2:])
    return header, list(csv.DictReader(lines[1:]))


def jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestSpectrum:
    def test_gwig_semicircle(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--model", "gwig", "--lambda", "0", "--n", "300", "--seed", "1")
        assert code == 0
        meta, rows = csv_rows(out)
        assert meta["artifact"] == "spectrum" and meta["config"]["n"] == 300
        bins = [r for r in rows if r["kind"] == "bin"]
        assert float(bins[0]["lo"]) > -2.1 and float(bins[-1]["hi"]) < 2.1
        assert sum(int(float(r["value"])) for r in bins) == 300
        assert artifacts.validate_file(out) == "spectrum"

    def test_wishart_support(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--model", "wish", "--beta", "0", "--gamma", "0.25", "--n", "400")
        assert code == 0
        meta, rows = csv_rows(out)
        bins = [r for r in rows if r["kind"] == "bin"]
        assert float(bins[0]["lo"]) > 0.25 - 0.1 and float(bins[-1]["hi"]) < 2.25 + 0.1

    def test_bimodal_after_stage(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--model", "wig", "--noise", "bimodal", "--prior", "rademacher",
                        "--lambda", "0.9", "--n", "600", "--seed", "2")
        assert code == 0
        meta, rows = csv_rows(out)
        s = meta["summary"]
        assert {r["stage"] for r in rows} == {"before", "after"}
        # the transformed top eigenvalue clears its bulk edge by more than three bin widths
        assert s["lambda_max_after"] - s["edge_after"] > 3 * s["bin_width_after"]
        assert s["lambda_max_before"] < s["edge"] + 0.15

    def test_gnuplot(self, tmp_path):
        script = tmp_path / "plot.gp"
        code, out = run(tmp_path, "spectrum", "--lambda", "1", "--n", "50", "--gnuplot", str(script))
        assert code == 0 and str(out) in script.read_text()


class TestDetect:
    def test_pca_power(self, tmp_path):
        code, out = run(tmp_path, "detect", "--model", "gwig", "--lambda", "1.5", "--n", "800",
                        "--trials", "20", "--seed", "3")
        assert code == 0
        recs = jsonl(out)
        assert recs[0]["record"] == "config" and recs[-1]["record"] == "summary"
        assert recs[-1]["type2"]["rate"] <= 0.05
        assert len([r for r in recs if r.get("record") == "trial"]) == 40
        assert artifacts.validate_file(out) == "detect"

    def test_wall_ms_null_by_default(self, tmp_path):
        _, out = run(tmp_path, "detect", "--lambda", "1.5", "--n", "40", "--trials", "2")
        assert all(r["wall_ms"] is None for r in jsonl(out) if r.get("record") == "trial")
        _, out = run(tmp_path, "detect", "--lambda", "1.5", "--n", "40", "--trials", "2", "--timing")
        assert all(r["wall_ms"] >= 0 for r in jsonl(out) if r.get("record") == "trial")

    def test_byte_identical_rerun(self, tmp_path):
        argv = ("detect", "--lambda", "1.2", "--n", "60", "--trials", "6", "--seed", "9", "--workers", "2")
        _, a = run(tmp_path, *argv, name="a.jsonl")
        _, b = run(tmp_path, *argv, name="b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_seed_layout(self, tmp_path):
        _, out = run(tmp_path, "detect", "--lambda", "1", "--n", "20", "--trials", "3", "--seed", "5", "--workers", "2")
        trials = [r for r in jsonl(out) if r.get("record") == "trial"]
        assert [r["seed"] for r in trials] == [[5, 0, 0], [5, 0, 1], [5, 0, 2], [5, 1, 0], [5, 1, 1], [5, 1, 2]]
        assert jsonl(out)[0]["config"]["partition"] == [[0, 3], [3, 6]]

    def test_transform_vs_plain(self, tmp_path):
        common = ("--model", "wig", "--noise", "bimodal", "--prior", "rademacher", "--lambda", "0.9",
                  "--n", "500", "--trials", "10", "--seed", "4")
        _, t = run(tmp_path, "detect", "--detector", "transform-pca", *common, name="t.jsonl")
        _, p = run(tmp_path, "detect", "--detector", "pca", *common, name="p.jsonl")
        assert jsonl(t)[-1]["total_error"] <= 0.1
        assert jsonl(p)[-1]["total_error"] >= 0.4

    def test_point_mass(self, tmp_path):
        code, out = run(tmp_path, "detect", "--detector", "point-mass", "--model", "wig", "--prior", "rademacher",
                        "--noise", "discrete:-1@0.5,1@0.5", "--lambda", "0.2", "--n", "100", "--trials", "5")
        assert code == 0 and jsonl(out)[-1]["total_error"] == 0

    def test_mle_small(self, tmp_path):
        code, out = run(tmp_path, "detect", "--detector", "mle", "--model", "wish", "--prior", "rademacher",
                        "--beta", "-0.9", "--gamma", "0.95", "--n", "12", "--trials", "3")
        assert code == 0
        cfg = jsonl(out)[0]["config"]
        lo, hi = cfg["derived_epsilon_interval"]
        assert cfg["derived_epsilon"] == pytest.approx(0.5 * (lo + hi))

    def test_wilson_interval(self):
        res = cli.wilson(3, 40)
        p, n, z = 3 / 40, 40, norm.ppf(0.975)
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
        np.testing.assert_allclose([res["ci_low"], res["ci_high"]], [centre - half, centre + half], rtol=1e-9)


class TestPhaseMomentThresholds:
    def test_phase_rademacher(self, tmp_path):
        code, out = run(tmp_path, "phase", "--prior", "rademacher", "--beta-min", "-0.95", "--beta-max", "0.5",
                        "--beta-step", "0.05", "--gamma", "0.5", "--grid", "4000")
        assert code == 0
        meta, rows = csv_rows(out)
        assert abs(meta["summary"]["mle_pca_crossing"] + 0.84) < 0.01
        assert abs(meta["summary"]["lower_departure"] + 0.70) < 0.02
        for r in rows:
            assert float(r["gamma_pca"]) == pytest.approx(float(r["beta"]) ** 2)
        assert artifacts.validate_file(out) == "phase"

    def test_phase_sparse_mle_above_parabola(self, tmp_path):
        code, out = run(tmp_path, "phase", "--prior", "sparse:0.03", "--beta-min", "0.1", "--beta-max", "2",
                        "--beta-step", "0.1", "--grid", "2000", "--tol", "1e-3")
        assert code == 0
        meta, rows = csv_rows(out)
        assert any(float(r["gamma_mle"]) > float(r["gamma_pca"]) for r in rows)
        assert "transfer" in meta["summary"]["rate_note"]

    def test_phase_general_atoms_need_rate(self, tmp_path):
        atoms = "atoms:0@0.5,1.4142135623730951@0.25,-1.4142135623730951@0.25"
        code, _ = run(tmp_path, "phase", "--prior", atoms, "--beta-min", "0.5", "--beta-max", "0.6")
        assert code == 2
        code, out = run(tmp_path, "phase", "--prior", atoms, "--rate", "largebeta",
                        "--beta-min", "0.5", "--beta-max", "0.6", "--beta-step", "0.1", "--grid", "500")
        assert code == 0
        assert "large beta" in csv_rows(out)[0]["summary"]["rate_note"]

    def test_phase_nonpositive_rate_rejected(self, tmp_path):
        # this skewed law has t^2 - log M(t) < 0 near t = 1, so it is no rate function there
        code, _ = run(tmp_path, "phase", "--prior", "atoms:-2@0.2,0.5@0.8", "--rate", "largebeta",
                      "--beta-min", "0.5", "--beta-max", "0.6", "--beta-step", "0.1", "--grid", "500")
        assert code == 2

    def test_moment_spherical_reference(self, tmp_path):
        code, out = run(tmp_path, "moment", "--model", "gwig", "--prior", "spherical", "--lambda", "0.3,0.5",
                        "--n", "30", "--trials", "50000", "--seed", "7")
        assert code == 0
        _, rows = csv_rows(out)
        for r in rows:
            assert r["reference_kind"] == "exact_1F1"
            assert abs(float(r["estimate"]) - float(r["reference"])) < 3 * float(r["std_error"])
        assert artifacts.validate_file(out) == "moment"

    def test_moment_growth_above_threshold(self, tmp_path):
        # the exact reference grows with n above threshold; Monte Carlo only sees the truncated bulk
        with pytest.warns(Warning):
            code, out = run(tmp_path, "moment", "--model", "gwig", "--prior", "spherical", "--lambda", "1.05",
                            "--n-list", "100,400,1200", "--trials", "20000")
        assert code == 0
        _, rows = csv_rows(out)
        ref = [float(r["reference"]) for r in rows]
        assert ref[0] < ref[1] < ref[2] and ref[2] > 50
        for r in rows:
            assert float(r["estimate"]) <= float(r["reference"]) + 3 * float(r["std_error"])

    def test_moment_wishart(self, tmp_path):
        code, out = run(tmp_path, "moment", "--model", "wish", "--beta", "0.3", "--gamma", "0.36",
                        "--n", "500", "--trials", "20000", "--workers", "2")
        assert code == 0
        _, rows = csv_rows(out)
        assert rows[0]["reference_kind"] == "small_deviation_limit"

    def test_thresholds(self, tmp_path):
        code, out = run(tmp_path, "thresholds", "--prior", "sparse:0.2", "--noise", "bimodal", "--beta", "0.3")
        assert code == 0
        res = json.loads(out.read_text())["results"]
        assert res["sigma_star"] > 1 and res["lambda_bar"] <= 1 + 1e-6
        np.testing.assert_allclose(res["subgaussian_gamma"], 0.09 * res["sigma_star"] ** 2)
        np.testing.assert_allclose(res["fisher"], 3.9430967650734114, rtol=1e-9)
        assert artifacts.validate_file(out) == "thresholds"


class TestExitCodes:
    def test_missing_parameter(self, tmp_path):
        assert run(tmp_path, "detect", "--model", "gwig")[0] == 2

    def test_bad_prior(self, tmp_path):
        assert run(tmp_path, "spectrum", "--lambda", "1", "--prior", "gauss")[0] == 2

    def test_bad_format(self, tmp_path):
        assert run(tmp_path, "spectrum", "--lambda", "1", "--format", "xml")[0] == 2

    def test_mle_support_cap(self, tmp_path):
        code, _ = run(tmp_path, "detect", "--detector", "mle", "--model", "wish", "--prior", "rademacher",
                      "--beta", "-0.9", "--gamma", "0.95", "--n", "30", "--trials", "1")
        assert code == 2

    def test_numeric_failure(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise QuadratureError("forced")

        monkeypatch.setattr(cli, "fisher_information", boom)
        assert run(tmp_path, "thresholds", "--noise", "bimodal")[0] == 3

    def test_validate_rejects_tampered(self, tmp_path, capsys):
        _, out = run(tmp_path, "spectrum", "--lambda", "1", "--n", "20")
        text = out.read_text().replace("before", "during", 1)
        bad = tmp_path / "bad.csv"
        bad.write_text(text.replace("\nbefore", "\nduring", 1))
        assert cli.main(["validate", str(bad)]) == 2
        assert cli.main(["validate", str(out)]) == 0
        assert "valid spectrum" in capsys.readouterr().out
