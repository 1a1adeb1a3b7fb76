import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from dtcsim import cli, harness
from dtcsim.engine import read_record_csv
from dtcsim.harness import (
    BudgetError,
    ExperimentConfig,
    load_config,
    point_seed,
    preset_config,
    run_experiment,
)
from dtcsim.spinsys import ConfigError

PI = math.pi

TINY_GEOM = """\
format_version = 1
[cell]
a_angstrom = 24.0 0.0 0.0
b_angstrom = 0.0 24.0 0.0
c_angstrom = 0.0 0.0 24.0
[species]
P 1/2 1.08394e8
H 1/2 2.6752218744e8
[sites]
P 0.05 0.05 0.05
P 0.21 0.08 0.07
P 0.12 0.22 0.11
H 0.13 0.13 0.30
[field]
axis = 0 0 1
static_tesla = 4.0
"""

CONFIG_TEXT = """\
[format]
version = 1

[cluster]
geometry = tiny.geom
radius_m = 1.5e-9
max_sites = 8
h1 = off

[drive]
mode = delta
taus_s = 5e-5
thetas_pi = 1.0, 1.04
n_cycles = 16

[engine]
method = dense
seed = 5

[output]
directory = unused
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "tiny.geom").write_text(TINY_GEOM)
    (tmp_path / "exp.cfg").write_text(CONFIG_TEXT)
    return tmp_path


class TestConfig:
    def test_load_and_defaults(self, workspace):
        cfg = load_config(workspace / "exp.cfg")
        assert cfg.mode == "delta"
        assert cfg.taus == (5e-5,)
        assert cfg.thetas_pi == (1.0, 1.04)
        assert cfg.omega1_hz == 68e3  # default
        assert cfg.t_p == 7.5e-6
        assert Path(cfg.geometry).name == "tiny.geom"

    def test_linspace_lists(self, workspace):
        text = CONFIG_TEXT.replace("thetas_pi = 1.0, 1.04", "thetas_pi = lin:0.9:1.1:5")
        (workspace / "lin.cfg").write_text(text)
        cfg = load_config(workspace / "lin.cfg")
        np.testing.assert_allclose(cfg.thetas_pi, np.linspace(0.9, 1.1, 5))

    def test_empty_tau_list_names_key(self, workspace):
        text = CONFIG_TEXT.replace("taus_s = 5e-5", "taus_s =")
        (workspace / "bad.cfg").write_text(text)
        with pytest.raises(ConfigError, match="taus_s"):
            load_config(workspace / "bad.cfg")

    def test_bad_mode_names_key(self, workspace):
        text = CONFIG_TEXT.replace("mode = delta", "mode = analog")
        (workspace / "bad.cfg").write_text(text)
        with pytest.raises(ConfigError, match="drive.mode"):
            load_config(workspace / "bad.cfg")

    def test_overrides(self, workspace):
        cfg = load_config(workspace / "exp.cfg", {"seed": 99, "out_dir": "elsewhere"})
        assert cfg.seed == 99 and cfg.out_dir == "elsewhere"

    def test_presets_load(self):
        for name in harness.PRESET_NAMES:
            cfg = preset_config(name)
            assert cfg.preset == name
            assert Path(cfg.geometry).exists()

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            preset_config("fig9")


class TestSeeds:
    def test_point_seed_deterministic_and_order_free(self):
        a = [point_seed(7, i) for i in range(6)]
        b = [point_seed(7, i) for i in reversed(range(6))]
        assert a == list(reversed(b))
        assert len(set(a)) == 6

    def test_master_seed_changes_points(self):
        assert point_seed(1, 0) != point_seed(2, 0)


class TestBudget:
    def test_guard_raises_and_force_overrides(self, workspace):
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(workspace / "o")})
        tight = harness.replace(cfg, budget_s=1e-9)
        with pytest.raises(BudgetError, match="budget"):
            harness.simulate(tight)
        forced = harness.replace(tight, force=True)
        manifest = harness.simulate(forced)
        assert manifest["failures"] == []


class TestSimulate:
    def test_outputs_and_manifest(self, workspace):
        out = workspace / "out"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        manifest = harness.simulate(cfg)
        kinds = sorted(a["kind"] for a in manifest["artifacts"])
        assert kinds.count("record") == 2 and kinds.count("spectrum") == 2
        assert (out / "manifest.json").exists()
        assert (out / "summary.json").exists()
        # theta = pi alternation shows f ~ 1 in the summary
        rows = json.load(open(out / "summary.json"))["rows"]
        by_theta = {round(r["theta"] / PI, 2): r for r in rows}
        assert by_theta[1.0]["crystalline_fraction"] > 0.99

    def test_records_readable_and_normalized(self, workspace):
        out = workspace / "out2"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        harness.simulate(cfg)
        for path in (out / "records").glob("*.csv"):
            rec = read_record_csv(path)
            assert rec.mz[0] == 1.0
            assert int(rec.meta["point_index"]) >= 0


class TestParallelReproducibility:
    def _hashes(self, root: Path) -> dict:
        return {
            p.relative_to(root): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"
        }

    def test_serial_matches_parallel(self, workspace):
        cfg = load_config(workspace / "exp.cfg")
        a = harness.replace(cfg, out_dir=str(workspace / "serial"), workers=1)
        b = harness.replace(cfg, out_dir=str(workspace / "pool"), workers=4)
        harness.simulate(a)
        harness.simulate(b)
        ha = self._hashes(workspace / "serial")
        hb = self._hashes(workspace / "pool")
        assert ha and ha == hb

    def test_rerun_is_byte_identical(self, workspace):
        cfg = load_config(workspace / "exp.cfg")
        a = harness.replace(cfg, out_dir=str(workspace / "r1"))
        b = harness.replace(cfg, out_dir=str(workspace / "r2"))
        harness.simulate(a)
        harness.simulate(b)
        assert self._hashes(workspace / "r1") == self._hashes(workspace / "r2")
        # manifests agree except for the wall-clock stamp (and the out dir)
        ma = json.load(open(workspace / "r1" / "manifest.json"))
        mb = json.load(open(workspace / "r2" / "manifest.json"))
        for m in (ma, mb):
            m.pop("created_unix")
            m["config"].pop("out_dir")
        assert ma == mb


class TestPointFailures:
    def test_failed_points_recorded_and_run_continues(self, workspace, monkeypatch):
        from dtcsim.spinsys import CapacityError

        real = harness._run_point

        def flaky(cfg, point):
            if point.index == 0:
                raise CapacityError("synthetic capacity failure")
            return real(cfg, point)

        monkeypatch.setattr(harness, "_run_point", flaky)
        out = workspace / "failing"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        manifest = harness.simulate(cfg)
        assert len(manifest["failures"]) == 1
        assert manifest["failures"][0]["point_index"] == 0
        # the surviving point still produced its artifacts
        assert any(a["kind"] == "record" for a in manifest["artifacts"])


class TestSweep:
    def test_small_grid_skips_fit_with_marker(self, workspace):
        out = workspace / "sw"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        cfg = harness.replace(cfg, thetas_pi=(1.0,), taus=(5e-5,))
        manifest = harness.sweep(cfg)
        rows = json.load(open(out / "summary.json"))["rows"]
        assert rows[0]["width"] is None
        assert "fewer than 5" in rows[0]["note"]
        assert manifest["failures"] == []

    def test_fit_and_boundary_columns(self, workspace):
        out = workspace / "sw2"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        cfg = harness.replace(
            cfg, thetas_pi=tuple(np.linspace(0.9, 1.1, 9)), taus=(2e-4,), n_cycles=32
        )
        harness.sweep(cfg)
        fits = (out / "fits" / "fits.csv").read_text().splitlines()
        header = [l for l in fits if not l.startswith("#")][0]
        assert header == "tau,A,theta0,sigma,residual,width,wtau_reference"


class TestAnalyzeAndEnvelope:
    def test_analyze_roundtrip(self, workspace):
        out = workspace / "out3"
        cfg = load_config(workspace / "exp.cfg", {"out_dir": str(out)})
        harness.simulate(cfg)
        records = sorted((out / "records").glob("*.csv"))
        out2 = workspace / "re"
        harness.analyze([str(p) for p in records], out2)
        rows = json.load(open(out2 / "summary.json"))["rows"]
        assert len(rows) == len(records)

    def test_envelope_csv(self, workspace):
        path = workspace / "env.csv"
        harness.envelope_csv(0.06 * PI, 16, path)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "N,envelope"
        assert len(lines) == 18


class TestCli:
    def test_simulate_via_cli(self, workspace, capsys):
        rc = cli.main(
            ["simulate", "--config", str(workspace / "exp.cfg"),
             "--out", str(workspace / "cli_out"), "--seed", "3"]
        )
        assert rc == 0
        assert (workspace / "cli_out" / "manifest.json").exists()
        assert "artifacts" in capsys.readouterr().out

    def test_envelope_via_cli(self, workspace):
        rc = cli.main(["envelope", "--epsilon-pi", "0.1", "--n-max", "8",
                       "--out", str(workspace / "e.csv")])
        assert rc == 0

    def test_config_and_preset_conflict(self, workspace, capsys):
        rc = cli.main(["simulate", "--config", str(workspace / "exp.cfg"), "--preset", "fig1"])
        assert rc == 2
        assert "not both" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        rc = cli.main(["simulate"])
        assert rc == 2
