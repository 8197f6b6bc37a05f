import json
import os
import stat

import numpy as np
import pytest

from relloc import acceptance, cli, harness, optical, scattering
from relloc.errors import NumericalFailure


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def small_bec(tmp_path, **extra):
    flags = {"seed": 3, "n_runs": 40, "dir": str(tmp_path / "out"), "params": {"D": 10, "n": 200.0}}
    flags.update(extra)
    return harness.build_config(flags, scenario="bec")


class TestValidation:
    def test_defaults_filled(self):
        cfg = harness.build_config({}, scenario="oracle")
        assert cfg.seed == 0 and cfg.n_runs == 1000
        assert cfg.params["task"] == "plr"
        assert cfg.where("N") == "defaults"

    def test_unknown_key_line(self, tmp_path):
        p = write(tmp_path, 'scenario = "bec"\nseed = 1\n\n[bec]\nD = 5\nbogus = 2\n')
        with pytest.raises(harness.ConfigError) as exc:
            harness.load_config(p)
        assert str(exc.value).startswith(f"{p}:6:")
        assert "bogus" in str(exc.value)

    def test_bad_value_line(self, tmp_path):
        p = write(tmp_path, 'scenario = "optical"\n[optical]\neps = 1.5\n')
        with pytest.raises(harness.ConfigError) as exc:
            harness.load_config(p)
        assert f"{p}:3:" in str(exc.value)

    def test_bad_choice(self, tmp_path):
        p = write(tmp_path, 'scenario = "scattering"\n[scattering]\nlight = "laser"\n')
        with pytest.raises(harness.ConfigError, match=":3:"):
            harness.load_config(p)

    def test_invalid_toml_line(self, tmp_path):
        p = write(tmp_path, 'scenario = "bec"\n[bec]\nD = = 3\n')
        with pytest.raises(harness.ConfigError, match=r"cfg\.toml:3: invalid TOML"):
            harness.load_config(p)

    def test_foreign_table(self, tmp_path):
        p = write(tmp_path, 'scenario = "bec"\n[optical]\nn = 3\n')
        with pytest.raises(harness.ConfigError, match=r":2: unknown table \[optical\]"):
            harness.load_config(p)

    def test_missing_scenario(self, tmp_path):
        with pytest.raises(harness.ConfigError, match="scenario"):
            harness.load_config(write(tmp_path, "seed = 1\n"))

    def test_scenario_mismatch(self, tmp_path):
        p = write(tmp_path, 'scenario = "bec"\n')
        with pytest.raises(harness.ConfigError, match="declares scenario"):
            harness.load_config(p, scenario="optical")

    def test_cross_check_fock_curve(self):
        with pytest.raises(harness.ConfigError, match="non-Fock"):
            harness.build_config({"params": {"task": "curve", "state": "fock"}}, scenario="optical")

    def test_even_grid_rejected(self):
        with pytest.raises(harness.ConfigError, match="n_grid"):
            harness.build_config({"params": {"n_grid": 100}}, scenario="scattering")

    def test_config_error_is_value_error(self):
        assert issubclass(harness.ConfigError, ValueError)


class TestPrecedence:
    def test_file_over_flags(self, tmp_path):
        p = write(tmp_path, 'scenario = "bec"\nseed = 9\n[bec]\nD = 7\n')
        flags = {"seed": 1, "n_runs": 5, "params": {"D": 3, "k": 2.0}, "_names": {"seed": "--seed"}}
        cfg = harness.load_config(p, flags)
        assert cfg.seed == 9 and cfg.params["D"] == 7
        assert cfg.n_runs == 5 and cfg.params["k"] == 2.0
        assert cfg.where("seed") == f"{p}:2"
        assert cfg.where("D") == f"{p}:4"

    def test_flag_origin_reported(self):
        flags = {"params": {"eps": 2.0}, "_names": {"eps": "--eps"}}
        with pytest.raises(harness.ConfigError, match="^--eps: eps"):
            harness.build_config(flags, scenario="oracle")

    def test_echo_roundtrip(self, tmp_path):
        cfg = small_bec(tmp_path)
        echo = cfg.echo()
        assert echo["bec"]["D"] == 10 and echo["seed"] == 3
        assert "m" not in echo["bec"]


class TestOutputs:
    @pytest.mark.parametrize(
        "v, text",
        [(3, "3"), (np.int64(-2), "-2"), (True, "1"), (0.1, "1.0000000000000001e-01"), ("x", "x")],
    )
    def test_format_value(self, v, text):
        assert harness.format_value(v) == text

    def test_float_roundtrip(self):
        rng = np.random.default_rng(0)
        for v in rng.standard_normal(200) * 10.0 ** rng.integers(-20, 20, 200):
            assert float(harness.format_value(v)) == v

    def test_write_atomic(self, tmp_path):
        p = tmp_path / "sub" / "a.txt"
        harness.write_atomic(p, "one\n")
        harness.write_atomic(p, "two\n")
        assert p.read_text() == "two\n"
        assert [f.name for f in p.parent.iterdir()] == ["a.txt"]
        mask = os.umask(0)
        os.umask(mask)
        assert stat.S_IMODE(p.stat().st_mode) == 0o666 & ~mask

    def test_write_atomic_keeps_old_on_failure(self, tmp_path, monkeypatch):
        p = tmp_path / "a.txt"
        harness.write_atomic(p, "old\n")

        def boom(*a):
            raise OSError("disk full")

        monkeypatch.setattr(harness.os, "replace", boom)
        with pytest.raises(OSError):
            harness.write_atomic(p, "new\n")
        assert p.read_text() == "old\n"
        assert [f.name for f in tmp_path.iterdir()] == ["a.txt"]


class TestRecordHash:
    def test_positions(self):
        x = np.array([0.1, 0.2, 0.3])
        assert harness.record_hash(x) == harness.record_hash(list(x))
        y = x.copy()
        y[1] = np.nextafter(y[1], 1.0)
        assert harness.record_hash(x) != harness.record_hash(y)

    def test_kinds_distinct(self):
        rec = scattering.ScatterRecord.free(1, 1)
        assert harness.record_hash(rec) != harness.record_hash(scattering.ScatterRecord.free(2, 0))
        assert len(harness.record_hash(rec)) == 64

    def test_optical_lost_counts(self):
        recs = optical.run_trajectories(optical.InitialState.poissonian(20.0), 0.2, 3, seed=1)
        r, _ = recs[0]
        assert harness.record_hash((r, 0)) != harness.record_hash((r, 1))
        assert harness.record_hash(r) != harness.record_hash((r, 0))


class TestRuns:
    def test_manifest(self, tmp_path):
        cfg = small_bec(tmp_path)
        man = harness.run(cfg)
        out = tmp_path / "out"
        data = json.loads((out / "manifest.json").read_text())
        assert data["seed"] == 3
        assert data["config"]["bec"]["D"] == 10
        assert data["outputs"] == man.outputs
        assert len(data["record_hashes"]) == 40
        assert data["version"]
        assert data["wall_clock_seconds"] >= 0
        for name in man.outputs:
            assert (out / name).exists()

    def test_rerun_byte_identical(self, tmp_path):
        a = small_bec(tmp_path, dir=str(tmp_path / "a"))
        b = small_bec(tmp_path, dir=str(tmp_path / "b"))
        ma, mb = harness.run(a), harness.run(b)
        for name in ma.outputs:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert ma.record_hashes == mb.record_hashes

    @pytest.mark.parametrize("scenario, params", [
        ("bec", {"D": 10, "n": 200.0}),
        ("optical", {"n": 30.0, "random_tau": True}),
        ("scattering", {"sampled": True, "n_grid": 201}),
    ])
    def test_threads_do_not_change_output(self, tmp_path, monkeypatch, scenario, params):
        outs = {}
        for threads in ("1", "3"):
            monkeypatch.setenv("RELLOC_THREADS", threads)
            d = tmp_path / threads
            cfg = harness.build_config(
                {"seed": 5, "n_runs": 30, "dir": str(d), "params": dict(params)}, scenario=scenario
            )
            outs[threads] = harness.run(cfg)
        assert outs["1"].outputs == outs["3"].outputs
        for name in outs["1"].outputs:
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()
        assert outs["1"].record_hashes == outs["3"].record_hashes

    def test_seed_changes_output(self, tmp_path):
        a = harness.run(small_bec(tmp_path, dir=str(tmp_path / "a")))
        b = harness.run(small_bec(tmp_path, dir=str(tmp_path / "b"), seed=4))
        assert a.record_hashes != b.record_hashes

    @pytest.mark.parametrize("task, name", [
        ("plr", "plr.csv"), ("hom", "hom.csv"), ("addition", "addition.csv"), ("noon", "noon.csv"),
    ])
    def test_oracle_tasks(self, tmp_path, task, name):
        cfg = harness.build_config(
            {"dir": str(tmp_path), "params": {"task": task, "N": 6, "W": 2, "D": 2}}, scenario="oracle"
        )
        man = harness.run(cfg)
        assert man.outputs == [name]
        lines = (tmp_path / name).read_text().splitlines()
        assert len(lines) > 1
        width = len(lines[0].split(","))
        assert all(len(row.split(",")) == width for row in lines)


class TestCli:
    def test_scenario_command(self, tmp_path, capsys):
        code = cli.main(["oracle", "--task", "hom", "--out", str(tmp_path)])
        assert code == 0
        assert str(tmp_path / "manifest.json") in capsys.readouterr().out

    def test_run_command(self, tmp_path):
        p = write(tmp_path, f'scenario = "oracle"\n[output]\ndir = "{tmp_path / "o"}"\n[oracle]\ntask = "noon"\n')
        assert cli.main(["run", str(p)]) == 0
        assert (tmp_path / "o" / "noon.csv").exists()

    def test_config_error_exit(self, tmp_path, capsys):
        p = write(tmp_path, 'scenario = "bec"\n[bec]\nbogus = 1\n')
        assert cli.main(["run", str(p)]) == 2
        assert f"{p}:3:" in capsys.readouterr().err

    def test_flag_error_exit(self, tmp_path, capsys):
        assert cli.main(["optical", "--eps", "3", "--out", str(tmp_path)]) == 2
        assert "--eps" in capsys.readouterr().err

    def test_numerical_failure_exit(self, tmp_path, monkeypatch, capsys):
        def fail(*a, **k):
            raise NumericalFailure("quadrature did not converge", 1e-3)

        monkeypatch.setattr(harness.fock, "hom_same_detector_ratio", fail)
        code = cli.main(["oracle", "--task", "hom", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 3
        assert "numerical failure in relloc." in err

    def test_figure_preset(self, tmp_path):
        assert cli.main(["figure", "noon", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "noon.csv").read_text().splitlines()
        assert rows[-1].startswith("12,2,")

    def test_figure_flag_overrides_preset(self, tmp_path):
        assert cli.main(["figure", "noon", "--N", "4", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "noon.csv").read_text().splitlines()[-1].startswith("4,2,")

    def test_verify_only(self, capsys):
        assert cli.main(["verify", "--only", "1,9"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("[PASS]  1") and out[1].startswith("[PASS]  9")
        assert out[-1] == "2/2 criteria passed"


class TestMutation:
    def test_broken_recurrence_is_caught(self, monkeypatch):
        assert acceptance.run_criterion(3).passed

        def broken(z, D):
            leg = [z**0, z]
            for n in range(1, D):
                # wrong weight on the P_{n-1} term
                leg.append(((2 * n + 1) * z * leg[n] - (n + 1) * leg[n - 1]) / (n + 1))
            return leg[: D + 1]

        monkeypatch.setattr(optical, "_legendre_table", broken)
        res = acceptance.run_criterion(3)
        assert not res.passed

    def test_verify_reports_failure(self, monkeypatch, capsys):
        monkeypatch.setattr(optical, "_legendre_table", lambda z, D: [z**0] * (D + 1))
        assert cli.main(["verify", "--only", "3"]) == 1
        assert capsys.readouterr().out.startswith("[FAIL]  3")
