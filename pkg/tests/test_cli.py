import csv
import json

import numpy as np
import pytest

from polyfractal import cli
from polyfractal.cli import ConfigError, config_hash, load_config, main, point_seed
from polyfractal.evolve import read_curve


def write_ini(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def outdir(tmp_path):
    return tmp_path / "out"


def run_cli(*args):
    return main([str(a) for a in args])


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.mode == "relax"
        assert cfg["chain.L"] == 8 and cfg["noise.kind"] == "fibonacci"

    def test_file_and_overrides(self, tmp_path):
        path = write_ini(tmp_path / "c.ini", "[chain]\nL = 6\n[noise]\nepsilon = 0.032\n[sweep]\nepsilon = 0.01, 0.02\n")
        cfg = load_config(path, {"protocol.T0": "0.08", "chain.L": "4"}, master_seed=11)
        assert cfg["chain.L"] == 4
        assert cfg["noise.epsilon"] == 0.032
        assert cfg["protocol.T0"] == 0.08
        assert cfg["sweep.epsilon"] == [0.01, 0.02]
        assert cfg["noise.seed"] == 11

    @pytest.mark.parametrize(
        "overrides",
        [
            {"chain.L": "7"},
            {"chain.L": "14"},
            {"protocol.T0": "-1"},
            {"noise.epsilon": "1.5"},
            {"noise.kind": "pink"},
            {"noise.epsilon": "abc"},
            {"chain.spin": "1"},
            {"mode.name": "serve"},
            {"limits.observables": "2"},
            {"limits.plateau_window": "100,10"},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            load_config(None, overrides)

    def test_single_spin_flag(self):
        assert load_config(None, {"chain.single_spin": "yes"})["chain.L"] == 1

    def test_hash_ignores_output_location(self):
        a = load_config(None, {"output.dir": "a"})
        b = load_config(None, {"output.dir": "b"})
        c = load_config(None, {"noise.epsilon": "0.02"})
        assert config_hash(a) == config_hash(b) != config_hash(c)

    def test_point_seeds(self):
        seeds = [point_seed(42, i) for i in range(100)]
        assert len(set(seeds)) == 100
        assert seeds == [point_seed(42, i) for i in range(100)]
        assert point_seed(43, 0) != seeds[0]
        assert all(0 <= s < 2**63 for s in seeds)


class TestExitCodes:
    def test_unreadable_config(self, tmp_path):
        assert run_cli("-c", tmp_path / "missing.ini") == 2

    def test_malformed_config(self, tmp_path):
        assert run_cli("-c", write_ini(tmp_path / "bad.ini", "not an ini")) == 2

    def test_bad_override(self):
        assert run_cli("relax", "--noise.epsilon", "2") == 2
        assert run_cli("relax", "--bogus.key=1") == 2
        assert run_cli("relax", "--noise.epsilon") == 2

    def test_empty_sweep_axis(self, outdir):
        assert run_cli("sweep", "--output.dir", outdir) == 2

    def test_seed_env(self, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV, "not-a-number")
        assert run_cli("validate") == 2

    def test_invariant_violation(self, monkeypatch, outdir):
        def boom(*a, **k):
            raise FloatingPointError("R_X1 left [0, 1]")

        monkeypatch.setattr(cli, "run_experiment", boom)
        assert run_cli("relax", "--output.dir", outdir) == 3


class TestRelax:
    def test_relax_example(self, outdir, capsys):
        code = run_cli(
            "relax", "--chain.L", 8, "--noise.kind", "fibonacci", "--noise.epsilon", 0.016, "--protocol.T0", 0.04,
            "--limits.max_depth", 60, "--output.dir", outdir, "--output.name", "r",
        )
        assert code == 0
        lines = (outdir / "r.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == "time,R_X1"
        rows = lines[2:]
        assert 58 <= len(rows) <= 61
        curve = read_curve(outdir / "r")
        assert np.all(np.diff(curve.times) > 0)
        meta = json.loads((outdir / "r.meta.json").read_text())
        assert meta["config_hash"] == lines[0].split("=", 1)[1]
        assert meta["run_config"]["noise"]["epsilon"] == 0.016

    def test_byte_reproducible(self, tmp_path):
        for name in ("a", "b"):
            assert run_cli("relax", "--chain.L", 4, "--limits.max_depth", 25, "--output.dir", tmp_path, "--output.name", name) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_random_noise_uses_master_seed(self, tmp_path, monkeypatch):
        args = ["relax", "--chain.L", 4, "--noise.kind", "synchronous", "--noise.epsilon", 0.1, "--limits.max_boundaries", 300]
        monkeypatch.setenv(cli.SEED_ENV, "5")
        assert run_cli(*args, "--output.dir", tmp_path, "--output.name", "env") == 0
        monkeypatch.delenv(cli.SEED_ENV)
        assert run_cli(*args, "--seed", 5, "--output.dir", tmp_path, "--output.name", "flag") == 0
        assert run_cli(*args, "--seed", 6, "--output.dir", tmp_path, "--output.name", "other") == 0
        assert (tmp_path / "env.csv").read_bytes() == (tmp_path / "flag.csv").read_bytes()
        assert (tmp_path / "env.csv").read_bytes() != (tmp_path / "other.csv").read_bytes()
        assert json.loads((tmp_path / "env.meta.json").read_text())["seed"] == 5


class TestSpectrum:
    def test_synchronous_example(self, outdir):
        code = run_cli(
            "spectrum", "--noise.kind", "synchronous", "--noise.epsilon", 0.1, "--protocol.T0", 1, "--limits.duration", 1000,
            "--output.dir", outdir, "--output.name", "s",
        )
        assert code == 0
        data = np.loadtxt(outdir / "s.csv", delimiter=",", skiprows=2)
        w, S = data[:, 0], data[:, 1]
        band = (w > 0.5) & (w < 2.0)
        carrier = np.abs(w - np.pi) < 0.02
        assert S[carrier].max() > 100 * np.median(S[band])
        meta = json.loads((outdir / "s.meta.json").read_text())
        assert meta["duration"] == pytest.approx(1000, rel=0.01)

    def test_fibonacci_uses_nearest_depth(self, outdir):
        assert run_cli("spectrum", "--protocol.T0", 1, "--limits.duration", 1000, "--output.dir", outdir, "--output.name", "f") == 0
        meta = json.loads((outdir / "f.meta.json").read_text())
        assert meta["depth"] == 16  # F_16 = 987


class TestAnalyze:
    def make_curves(self, d):
        common = ["--limits.max_depth", 40, "--protocol.T0", 0.08, "--output.dir", d]
        assert run_cli("relax", "--chain.L", 6, "--noise.kind", "ideal", "--noise.epsilon", 0, "--output.name", "base", *common) == 0
        assert run_cli("relax", "--chain.L", 6, "--noise.epsilon", 0.064, "--output.name", "fib", *common) == 0
        assert run_cli("relax", "--chain.L", 4, "--noise.epsilon", 0.064, "--output.name", "small", *common) == 0

    def test_report(self, tmp_path):
        self.make_curves(tmp_path)
        code = run_cli(
            "analyze", "--output.inputs", f"{tmp_path}/fib.csv", "--output.baseline", f"{tmp_path}/base.csv",
            "--output.dir", tmp_path, "--output.name", "rep",
        )
        assert code == 0
        rep = json.loads((tmp_path / "rep.fits.json").read_text())
        fits = rep["curves"][f"{tmp_path}/fib.csv"]
        assert fits["plateau"]["value"] > 0
        assert "config_hash" in rep and fits["config_hash"]
        assert set(fits) >= {"plateau", "gamma", "tau", "log_slope"}

    def test_refuses_mismatched_set(self, tmp_path):
        self.make_curves(tmp_path)
        inputs = f"{tmp_path}/fib.csv,{tmp_path}/small.csv"
        assert run_cli("analyze", "--output.inputs", inputs, "--output.dir", tmp_path) == 2
        assert run_cli("analyze", "--output.inputs", inputs, "--output.force", "true", "--output.dir", tmp_path) == 0

    def test_missing_inputs(self, tmp_path):
        assert run_cli("analyze", "--output.dir", tmp_path) == 2
        assert run_cli("analyze", "--output.inputs", tmp_path / "nope.csv", "--output.dir", tmp_path) == 2


class TestValidate:
    def test_passes(self, capsys):
        assert run_cli("validate") == 0
        out = capsys.readouterr().out
        assert out.count("MATCH") >= 5 and "MISMATCH" not in out
        assert "depths 3..18" in out

    def test_mismatch_is_nonzero(self, monkeypatch, capsys):
        real = cli.compare_with_reference

        def corrupt(plan):
            res = real(plan)
            for r in res:
                r.matches = False
            return res

        monkeypatch.setattr(cli, "compare_with_reference", corrupt)
        assert run_cli("validate") == 3
        assert "MISMATCH" in capsys.readouterr().out


class TestSweep:
    def read_summary(self, path):
        with open(path) as fh:
            return list(csv.DictReader(line for line in fh if not line.startswith("#")))

    def test_grid(self, tmp_path):
        args = [
            "sweep", "--chain.L", 4, "--limits.max_depth", 30, "--sweep.epsilon", "0.016,0.032,0.064",
            "--sweep.T0", "0.04,0.08,0.16", "--seed", 9, "--output.name", "g",
        ]
        assert run_cli(*args, "--output.dir", tmp_path / "a") == 0
        assert run_cli(*args, "--output.dir", tmp_path / "b", "--sweep.workers", 2) == 0
        a = self.read_summary(tmp_path / "a" / "g.summary.csv")
        b = self.read_summary(tmp_path / "b" / "g.summary.csv")
        assert len(a) == 9
        strip = lambda rows: [{k: v for k, v in r.items() if k != "curve"} for r in rows]
        assert strip(a) == strip(b)
        assert [int(r["seed"]) for r in a] == [point_seed(9, i) for i in range(9)]
        assert all(r["status"] == "ok" for r in a)
        meta = json.loads((tmp_path / "a" / "g.summary.meta.json").read_text())
        assert meta["n_points"] == 9

    def test_partial_failure_recorded(self, tmp_path):
        code = run_cli(
            "sweep", "--protocol.n_s", 2, "--limits.max_depth", 20, "--sweep.L", "4,1", "--output.dir", tmp_path, "--output.name", "p",
        )
        assert code == 0
        rows = self.read_summary(tmp_path / "p.summary.csv")
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"].startswith("failed")
