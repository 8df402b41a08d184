import csv
import io
import math

import numpy as np
import pytest

from coherit import cli
from coherit import simulation as sim
from coherit.core import NoConvergenceError, RegressionSample, RngStream, sample_gaussian_ar1
from coherit.functionals import FDEConfig, TraitModel, pairwise_estimates

SMALL_CFG = "p = 30\nn1 = 40\nn2 = 40\ns = 3\ns1 = 6\ns2 = 5  # support of gamma\nreps = 2\n"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(rows):
            w.writerow([format(v, ".17g") for v in row])
    return str(path)


def read_report(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return str(path)


@pytest.fixture
def pair_files(tmp_path):
    rs = RngStream(3)
    n, p = 60, 12
    X = sample_gaussian_ar1(n, p, 0.5, rs.child(0))
    Z = sample_gaussian_ar1(n, p, 0.5, rs.child(1))
    beta = np.r_[1.0, -0.5, 0.8, np.zeros(p - 3)]
    gamma = np.r_[0.7, 0.0, 0.6, 0.4, np.zeros(p - 4)]
    y = X @ beta + rs.child(2).standard_normal(n)
    w = Z @ gamma + rs.child(3).standard_normal(n)
    names = [f"m{j}" for j in range(p)]
    files = {
        "x": write_csv(tmp_path / "x.csv", names, X),
        "z": write_csv(tmp_path / "z.csv", names, Z),
        "y": write_csv(tmp_path / "y.csv", ["height"], y[:, None]),
        "w": write_csv(tmp_path / "w.csv", ["weight"], w[:, None]),
    }
    return files, (X, Z, y, w)


class TestSimulate:
    def test_preset_layout(self, tmp_path, small_cfg, capsys):
        out = tmp_path / "rep.csv"
        code = cli.main(["simulate", "--preset", "exp1", "--config", small_cfg, "--seed", "7", "--out", str(out)])
        assert code == 0
        rows = read_report(out.read_text())
        assert len({r["setting"] for r in rows}) == 8
        assert {r["method"] for r in rows} == set(sim.METHODS)
        assert len(rows) == 8 * 4 * 5
        header = [line for line in out.read_text().splitlines() if line.startswith("#")]
        assert "# seed=7" in header and "# reps=2" in header and "# p=30" in header
        assert (tmp_path / "rep.txt").exists()
        err = capsys.readouterr().err
        assert err.count("exp1 (") == 8

    def test_quadratic_preset(self, tmp_path, small_cfg):
        out = tmp_path / "q.csv"
        assert cli.main(["simulate", "--preset", "q1a", "--config", small_cfg, "--out", str(out)]) == 0
        rows = read_report(out.read_text())
        assert {r["target"] for r in rows} == {"Qb"}

    def test_reps_zero(self, capsys):
        assert cli.main(["simulate", "--preset", "exp1", "--reps", "0"]) == 2
        assert "reps must be ≥ 1" in capsys.readouterr().err

    def test_reps_zero_in_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("reps = 0\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == 2
        assert "reps must be ≥ 1" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("reps = 2\ntau3 = 1\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == 2
        assert "tau3" in capsys.readouterr().err

    def test_bad_value(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("p = many\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == 2
        assert "p" in capsys.readouterr().err

    def test_flags_override_file(self, tmp_path, small_cfg):
        out = tmp_path / "r.csv"
        assert cli.main(["simulate", "--config", small_cfg, "--reps", "1", "--methods", "plugin_lasso",
                         "--out", str(out)]) == 0
        rows = read_report(out.read_text())
        assert {r["reps_used"] for r in rows} == {"1"}
        assert {r["method"] for r in rows} == {"plugin_lasso"}

    def test_csv_round_trip(self, tmp_path, small_cfg):
        out = tmp_path / "r.csv"
        cli.main(["simulate", "--config", small_cfg, "--methods", "fde_nosplit,plugin_lasso", "--out", str(out)])
        eff = cli.effective_simulation_config(cli.build_parser().parse_args(
            ["simulate", "--config", small_cfg, "--methods", "fde_nosplit,plugin_lasso"]))
        report = sim.run_settings(cli.build_settings(eff), threads=1)
        direct = list(report.rows())
        for row, (_, target, method, truth, mse) in zip(read_report(out.read_text()), direct):
            assert (row["target"], row["method"]) == (target, method)
            assert float(row["truth"]) == truth and float(row["mse"]) == mse

    def test_abort_exit_code(self, tmp_path, small_cfg, monkeypatch):
        def broken(*args, **kwargs):
            raise NoConvergenceError("forced")

        monkeypatch.setattr(sim, "estimate_methods", broken)
        out = tmp_path / "r.csv"
        assert cli.main(["simulate", "--config", small_cfg, "--out", str(out)]) == 3
        rows = read_report(out.read_text())
        assert {r["reps_used"] for r in rows} == {"0"}

    def test_missing_output_dir(self, tmp_path, small_cfg, capsys):
        assert cli.main(["simulate", "--config", small_cfg, "--out", str(tmp_path / "no" / "r.csv")]) == 2

    def test_unknown_preset(self, capsys):
        assert cli.main(["simulate", "--preset", "exp9"]) == 2


class TestEstimate:
    def test_identical_traits(self, pair_files, tmp_path):
        files, _ = pair_files
        out = tmp_path / "e.csv"
        assert cli.main(["estimate", "--x", files["x"], "--y", files["y"], "--w", files["y"], "--out", str(out)]) == 0
        vals = dict(line.split(",") for line in out.read_text().splitlines()[1:])
        assert float(vals["ratio"]) == pytest.approx(1.0, abs=1e-12)

    def test_matches_library(self, pair_files, tmp_path):
        files, (X, Z, y, w) = pair_files
        out = tmp_path / "e.csv"
        cli.main(["estimate", "--x", files["x"], "--z", files["z"], "--y", files["y"], "--w", files["w"],
                  "--out", str(out)])
        lines = out.read_text().splitlines()
        assert lines[0] == "quantity,value"
        got = [float(line.split(",")[1]) for line in lines[1:]]
        sx = RegressionSample(X, y / np.std(y, ddof=1))
        sz = RegressionSample(Z, w / np.std(w, ddof=1))
        est = cli.estimate_pair(sx, sz, FDEConfig())
        assert got == list(est.as_tuple())

    def test_split_flag(self, pair_files, tmp_path):
        files, _ = pair_files
        out = tmp_path / "e.csv"
        args = ["estimate", "--x", files["x"], "--y", files["y"], "--w", files["w"], "--out", str(out)]
        cli.main(args)
        nosplit = out.read_text()
        cli.main(args + ["--split"])
        assert out.read_text() != nosplit
        assert out.read_text().splitlines()[1] == nosplit.splitlines()[1]

    def test_multi_trait_table(self, tmp_path):
        rs = RngStream(5)
        n, p, k = 50, 10, 8
        X = sample_gaussian_ar1(n, p, 0.3, rs.child(0))
        B = rs.child(1).standard_normal((p, k)) * (rs.child(2).generator().random((p, k)) < 0.3)
        Y = X @ B + rs.child(3).standard_normal((n, k))
        Y[:, 7] = Y[:, 0]
        xs = write_csv(tmp_path / "x.csv", [f"m{j}" for j in range(p)], X)
        names = [f"t{i}" for i in range(k)]
        ts = write_csv(tmp_path / "t.csv", names, Y)
        out = tmp_path / "table.csv"
        assert cli.main(["estimate", "--x", xs, "--traits", ts, "--out", str(out)]) == 0
        rows = list(csv.reader(out.read_text().splitlines()))
        assert rows[0] == ["trait", "row"] + names
        assert len(rows) == 1 + 2 * k
        for i in range(k):
            value, ratio = rows[1 + 2 * i], rows[2 + 2 * i]
            assert value[:2] == [names[i], "value"] and ratio[:2] == [names[i], "ratio"]
            assert all(c == "" for c in value[2:2 + i]) and all(c != "" for c in value[2 + i:])
            q = float(value[2 + i])
            assert float(ratio[2 + i]) == (1.0 if q > 0 else 0.0)
        # the duplicated trait correlates perfectly with trait 0
        assert float(rows[2][2 + 7]) == pytest.approx(1.0, abs=1e-12)
        models = [TraitModel(RegressionSample(X, Y[:, j] / np.std(Y[:, j], ddof=1))) for j in range(k)]
        values, _ = pairwise_estimates(models)
        assert float(rows[1][3]) == values[0, 1]

    def test_header_mismatch(self, pair_files, tmp_path, capsys):
        files, (X, Z, y, w) = pair_files
        other = write_csv(tmp_path / "z2.csv", [f"snp{j}" for j in range(Z.shape[1])], Z)
        code = cli.main(["estimate", "--x", files["x"], "--z", other, "--y", files["y"], "--w", files["w"]])
        assert code == 2
        assert "headers" in capsys.readouterr().err

    def test_non_numeric(self, pair_files, tmp_path, capsys):
        files, _ = pair_files
        lines = open(files["y"]).read().splitlines()
        lines[4] = "NA"
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(lines) + "\n")
        assert cli.main(["estimate", "--x", files["x"], "--y", str(bad), "--w", files["w"]]) == 4
        err = capsys.readouterr().err
        assert "line 5" in err and "column 1" in err and "height" in err

    def test_missing_input(self, pair_files, capsys):
        files, _ = pair_files
        assert cli.main(["estimate", "--x", "nope.csv", "--y", files["y"], "--w", files["w"]]) == 2

    def test_row_mismatch(self, pair_files, tmp_path):
        files, (X, Z, y, w) = pair_files
        short = write_csv(tmp_path / "s.csv", ["h"], y[:10, None])
        assert cli.main(["estimate", "--x", files["x"], "--y", short, "--w", files["w"]]) == 2


class TestTStats:
    def test_inf_literal_and_determinism(self, tmp_path):
        rs = RngStream(1)
        X = sample_gaussian_ar1(30, 5, 0.0, rs.child(0))
        y = 2.0 * X[:, 3]
        xs = write_csv(tmp_path / "x.csv", [f"m{j}" for j in range(5)], X)
        ys = write_csv(tmp_path / "y.csv", ["trait"], y[:, None])
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["tstats", "--x", xs, "--y", ys, "--no-normalize", "--out", str(a)]) == 0
        assert cli.main(["tstats", "--x", xs, "--y", ys, "--no-normalize", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        rows = dict(line.split(",") for line in a.read_text().splitlines()[1:])
        assert rows["m3"] == "inf"
        assert all(math.isfinite(float(rows[f"m{j}"])) for j in (0, 1, 2, 4))

    def test_null_sd(self, tmp_path):
        rs = RngStream(2)
        X = rs.child(0).standard_normal((500, 300))
        y = rs.child(1).standard_normal(500)
        xs = write_csv(tmp_path / "x.csv", [f"m{j}" for j in range(300)], X)
        ys = write_csv(tmp_path / "y.csv", ["trait"], y[:, None])
        out = tmp_path / "t.csv"
        cli.main(["tstats", "--x", xs, "--y", ys, "--out", str(out)])
        t = np.array([float(line.split(",")[1]) for line in out.read_text().splitlines()[1:]])
        assert 0.85 < t.std() < 1.15

    def test_round_trip_precision(self, tmp_path):
        rs = RngStream(3)
        X = rs.child(0).standard_normal((40, 6))
        y = rs.child(1).standard_normal(40)
        xs = write_csv(tmp_path / "x.csv", [f"m{j}" for j in range(6)], X)
        ys = write_csv(tmp_path / "y.csv", ["trait"], y[:, None])
        out = tmp_path / "t.csv"
        cli.main(["tstats", "--x", xs, "--y", ys, "--no-normalize", "--out", str(out)])
        got = np.array([float(line.split(",")[1]) for line in out.read_text().splitlines()[1:]])
        direct, _ = sim.marginal_t_stats(RegressionSample(X, y))
        np.testing.assert_array_equal(got, direct)


def test_threads_env_default(monkeypatch, tmp_path, small_cfg):
    monkeypatch.setenv("COHERIT_THREADS", "2")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["simulate", "--config", small_cfg, "--methods", "plugin_lasso", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", small_cfg, "--methods", "plugin_lasso", "--threads", "1",
                     "--out", str(b)]) == 0
    body = lambda p: [x for x in p.read_text().splitlines() if not x.startswith("# threads")]
    assert body(a) == body(b)


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "coherit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "coherit" in proc.stdout
