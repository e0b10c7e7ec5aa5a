"""
Tests for the conformal-dagger command line
"""
import functools
import json

import pytest

from conformal_dagger import verify
from conformal_dagger.cli import main

SMOKE_DAGGER = """\
kind: dagger
methods: [conformal]
scenarios:
  - {kind: stationary}
seeds: [0]
episodes: 1
executions: 1
policy:
  hidden: [8]
  classifier_hidden: [4]
  n_demos: 2
  initial_train: {iterations: 10, optimizer: adam}
  finetune: {iterations: 5, optimizer: adam}
"""

SMOKE_BENCH = """\
kind: bench
datasets:
  - name: sine
    source: {kind: synthetic, generator: sinusoid, length: 300}
ps: [0.5]
lrs: [0.1]
variants: [pi]
seeds: [0, 1]
"""


@pytest.fixture
def config_file(tmp_path):
    def _write(text: str) -> str:
        path = tmp_path / "config.yaml"
        path.write_text(text, encoding="utf-8")
        return str(path)
    return _write


@pytest.fixture
def quick_verify(monkeypatch):
    """Shrink the randomized checks so the full suite runs in seconds"""
    monkeypatch.setattr(verify, "check_coverage_bound", functools.partial(verify.check_coverage_bound, runs=1))
    monkeypatch.setattr(verify, "check_lemma", functools.partial(verify.check_lemma, runs=50))
    monkeypatch.setattr(verify, "check_iaci_lemma", functools.partial(verify.check_iaci_lemma, runs=50))
    monkeypatch.setattr(verify, "check_iaci_coverage", functools.partial(verify.check_iaci_coverage, runs=1))
    monkeypatch.setattr(verify, "check_gradients", functools.partial(verify.check_gradients, points=1))


class TestErrors:
    """Configuration and input errors exit with status 2"""

    def test_missing_config(self, tmp_path, capsys):
        """A missing config file"""
        code = main(["bench", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_method(self, config_file, tmp_path, capsys):
        """Unknown methods are listed with the valid ones"""
        path = config_file("kind: dagger\nmethods: [conformal, bogus]\n")
        code = main(["dagger", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 2
        err = capsys.readouterr().err
        assert "bogus" in err
        for method in ("conformal", "ensemble", "safe", "lazy"):
            assert method in err

    def test_missing_dataset(self, config_file, tmp_path, capsys):
        """A CSV dataset that does not exist"""
        path = config_file(
            "kind: bench\ndatasets:\n  - name: stock\n"
            f"    source: {{kind: csv, path: {tmp_path / 'nope.csv'}, column: Open}}\n"
        )
        assert main(["bench", "--config", path, "--out", str(tmp_path / "out")]) == 2
        assert "Dataset not found" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        """argparse rejects unknown subcommands"""
        with pytest.raises(SystemExit):
            main(["train"])


class TestRuns:
    """bench and dagger write their output directories"""

    def test_dagger_smoke(self, config_file, tmp_path):
        """A one-episode ConformalDAgger run"""
        out = tmp_path / "out"
        assert main(["--log-level", "WARNING", "dagger", "--config", config_file(SMOKE_DAGGER), "--out", str(out)]) == 0
        assert (out / "metrics.csv").is_file()
        assert (out / "metrics.prom").is_file()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "dagger"
        assert manifest["seeds"] == [0]
        assert "metrics.csv" in manifest["output_paths"]

    def test_bench_seed_override(self, config_file, tmp_path):
        """--seed replaces the config's seeds"""
        out = tmp_path / "out"
        code = main(["bench", "--config", config_file(SMOKE_BENCH), "--out", str(out), "--seed", "3"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [3]
        assert (out / "bench" / "sine" / "p0.5" / "lr0.1" / "iqt-pi" / "seed3.csv").is_file()
        assert not (out / "bench" / "sine" / "p0.5" / "lr0.1" / "iqt-pi" / "seed0.csv").exists()

    def test_output_root_from_environment(self, config_file, tmp_path, monkeypatch):
        """--out defaults to CONFORMAL_DAGGER_OUTPUT_ROOT"""
        out = tmp_path / "env-out"
        monkeypatch.setenv("CONFORMAL_DAGGER_OUTPUT_ROOT", str(out))
        assert main(["bench", "--config", config_file(SMOKE_BENCH)]) == 0
        assert (out / "summary.json").is_file()


class TestVerify:
    """verify exits 0 when every check passes and 1 otherwise"""

    def test_passes(self, quick_verify, capsys):
        """The real update rules pass every check"""
        assert main(["verify"]) == 0
        table = capsys.readouterr().out
        assert "FAIL" not in table
        for name in ("reduction_p1", "coverage_bound", "quantile_lemma", "iaci_lemma", "iaci_coverage",
                     "gamma_equals_p",
                     "gradient_check"):
            assert name in table

    def test_mutate_fails(self, quick_verify, capsys):
        """A corrupted update rule is caught"""
        assert main(["verify", "--mutate"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_out_writes_values(self, quick_verify, tmp_path):
        """--out writes verify.json and a manifest"""
        out = tmp_path / "verify"
        assert main(["verify", "--out", str(out), "--seed", "2"]) == 0
        results = json.loads((out / "verify.json").read_text())
        by_name = {r["name"]: r for r in results}
        assert by_name["coverage_bound"]["values"]
        assert all("gap" in v and "bound" in v for v in by_name["coverage_bound"]["values"])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "verify"
        assert manifest["seeds"] == [2]
        assert manifest["output_paths"] == ["verify.json"]
