import json

import numpy as np
import pytest

from nulledit.cli import (
    EXIT_ABORTED,
    EXIT_CONFIG,
    EXIT_OK,
    TRACE_HEADER,
    cmd_run,
    cmd_sweep,
    cmd_verify,
    config_from_dict,
    config_hash,
    config_to_dict,
    main,
    parse_config,
    write_trace_csv,
)
from nulledit.errors import ConfigurationError
from nulledit.harness import ExperimentConfig, run_sequence
from nulledit.editors import MethodSpec
from nulledit.memory import StreamConfig


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


class TestConfigParsing:
    def test_empty_object_gives_defaults(self):
        cfg = config_from_dict({})
        assert cfg.d_in == 64 and cfg.d_out == 32 and cfg.n0 == 200
        assert cfg.method.kind == "betaedit"
        assert cfg.method.lambda1 == 100.0
        assert cfg.stream.residual_range == (0.1, 0.5)
        assert cfg.metrics_every == 10

    def test_round_trip_through_dict(self):
        cfg = config_from_dict(
            {
                "seed": 7,
                "dims": {"d_in": 16, "d_out": 8, "n0": 12},
                "stream": {"num_edits": 5, "residual_range": [0.2, 0.4]},
                "method": {"kind": "alphaedit", "lambda2": 3.0},
                "knowledge": {"kind": "structured", "strong_rank": 4},
                "metrics_every": 5,
            }
        )
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_memit_gets_heavier_default_ridge(self):
        cfg = config_from_dict({"method": {"kind": "memit"}})
        assert cfg.method.lambda1 == 15000.0
        explicit = config_from_dict({"method": {"kind": "memit", "lambda1": 2.0}})
        assert explicit.method.lambda1 == 2.0
        beta = config_from_dict({"method": {"kind": "betaedit"}})
        assert beta.method.lambda1 == 100.0

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigurationError, match="stream.cadence"):
            config_from_dict({"stream": {"cadence": 3}})
        with pytest.raises(ConfigurationError, match="fizz"):
            config_from_dict({"fizz": 1})

    def test_invalid_values_name_section(self):
        with pytest.raises(ConfigurationError, match="method"):
            config_from_dict({"method": {"lambda2": -1.0}})
        with pytest.raises(ConfigurationError, match="stream"):
            config_from_dict({"stream": {"collision_rate": 2.0}})

    def test_json_error_reports_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "seed": }\n')
        with pytest.raises(ConfigurationError, match="line 2"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            parse_config(tmp_path / "absent.json")

    def test_config_hash_stability_and_sensitivity(self):
        a = config_from_dict({"seed": 1})
        b = config_from_dict({"seed": 1})
        c = config_from_dict({"seed": 2})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)


class TestTraceSerialization:
    def _trace(self, **overrides):
        base = dict(
            stream=StreamConfig(seed=0, num_edits=10),
            method=MethodSpec(kind="betaedit"),
            d_in=16, d_out=8, n0=8, metrics_every=5,
        )
        base.update(overrides)
        return run_sequence(ExperimentConfig(**base))

    def test_header_and_float_round_trip(self, tmp_path):
        trace = self._trace()
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == TRACE_HEADER
        assert len(lines) == 1 + len(trace.records)
        for line, rec in zip(lines[1:], trace.records):
            cells = line.split(",")
            assert int(cells[0]) == rec.step
            assert cells[1] == rec.method
            # %.17g must reproduce the doubles exactly
            assert float(cells[2]) == rec.delta_norm
            assert float(cells[4]) == rec.leakage
            assert cells[7] in ("true", "false")

    def test_aborted_run_adds_column(self, tmp_path):
        trace = self._trace(
            stream=StreamConfig(seed=0, num_edits=5),
            method=MethodSpec(kind="memit", lambda1=0.0),
            metrics_every=1,
        )
        assert trace.aborted
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == TRACE_HEADER + ",aborted_at"


class TestCmdRun:
    def test_writes_trace_and_manifest(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 8},
                "stream": {"num_edits": 10},
                "metrics_every": 5,
            },
        )
        out = tmp_path / "out"
        assert cmd_run(str(cfg_path), str(out)) == EXIT_OK
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == TRACE_HEADER
        assert len(lines) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == config_hash(parse_config(cfg_path))
        assert manifest["outputs"] == [str(out / "trace.csv")]
        assert "tool_version" in manifest and "started_at" in manifest

    def test_byte_identical_across_repeats(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 8},
                "stream": {"num_edits": 20},
                "metrics_every": 5,
            },
        )
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cmd_run(str(cfg_path), str(out1)) == EXIT_OK
        assert cmd_run(str(cfg_path), str(out2)) == EXIT_OK
        assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()

    def test_seed_and_cadence_overrides(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 8},
                "stream": {"num_edits": 10},
                "metrics_every": 5,
            },
        )
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cmd_run(str(cfg_path), str(out1), seed=5, metrics_every=2) == EXIT_OK
        assert cmd_run(str(cfg_path), str(out2), seed=6, metrics_every=2) == EXIT_OK
        a = (out1 / "trace.csv").read_text().splitlines()
        b = (out2 / "trace.csv").read_text().splitlines()
        assert len(a) == 6  # header + steps 2,4,6,8,10
        assert a != b  # different seed, different numbers

    def test_aborted_run_exits_3(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 24},
                "stream": {"num_edits": 5},
                "method": {"kind": "memit", "lambda1": 0.0},
                "metrics_every": 1,
            },
        )
        out = tmp_path / "out"
        assert cmd_run(str(cfg_path), str(out)) == EXIT_ABORTED
        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header.endswith(",aborted_at")


class TestCmdVerify:
    def test_unknown_suite(self, tmp_path, capsys):
        assert cmd_verify("bogus", str(tmp_path)) == EXIT_CONFIG
        assert "unknown suite" in capsys.readouterr().err

    def test_oracle_suite_passes(self, tmp_path):
        assert cmd_verify("oracle", str(tmp_path), seed=0) == EXIT_OK
        report = json.loads((tmp_path / "verify_oracle.json").read_text())
        assert report["passed"] is True
        assert report["suite"] == "oracle"
        assert report["checks"][0]["instances"] == 100

    def test_projector_suite_passes(self, tmp_path):
        assert cmd_verify("projector", str(tmp_path), seed=0) == EXIT_OK
        report = json.loads((tmp_path / "verify_projector.json").read_text())
        assert report["passed"] is True


class TestCmdSweep:
    def _cfg_path(self, tmp_path):
        return _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 24},
                "stream": {"num_edits": 10},
                "method": {"kind": "memit"},
                "metrics_every": 5,
            },
        )

    def test_one_row_per_value_in_input_order(self, tmp_path):
        out = tmp_path / "out"
        code = cmd_sweep(
            str(self._cfg_path(tmp_path)), "lambda1", "500,100,3000", str(out)
        )
        assert code == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "value,final_efficacy,final_leakage,final_cum_norm"
        assert [float(l.split(",")[0]) for l in lines[1:]] == [500.0, 100.0, 3000.0]
        assert (out / "manifest.json").exists()

    def test_threaded_matches_serial(self, tmp_path, monkeypatch):
        out_s, out_t = tmp_path / "serial", tmp_path / "threaded"
        cfg = self._cfg_path(tmp_path)
        monkeypatch.delenv("NULLEDIT_THREADS", raising=False)
        assert cmd_sweep(str(cfg), "lambda1", "100,500", str(out_s)) == EXIT_OK
        monkeypatch.setenv("NULLEDIT_THREADS", "2")
        assert cmd_sweep(str(cfg), "lambda1", "100,500", str(out_t)) == EXIT_OK
        assert (out_s / "sweep.csv").read_bytes() == (out_t / "sweep.csv").read_bytes()

    def test_bad_values_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            cmd_sweep(str(self._cfg_path(tmp_path)), "lambda1", "1,spam", str(tmp_path))
        with pytest.raises(ConfigurationError):
            cmd_sweep(str(self._cfg_path(tmp_path)), "lambda1", ",", str(tmp_path))


class TestMainEntry:
    def test_run_subcommand(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 8},
                "stream": {"num_edits": 10},
                "metrics_every": 5,
            },
        )
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
        assert (out / "trace.csv").exists()

    def test_config_error_exits_2(self, tmp_path, capsys):
        cfg_path = _write(tmp_path, "cfg.json", {"stream": {"num_edits": -1}})
        code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_rejects_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["transmogrify"])

    def test_sweep_subcommand(self, tmp_path):
        cfg_path = _write(
            tmp_path,
            "cfg.json",
            {
                "dims": {"d_in": 16, "d_out": 8, "n0": 8},
                "stream": {"num_edits": 10},
                "metrics_every": 5,
            },
        )
        out = tmp_path / "out"
        code = main(
            [
                "sweep", "--config", str(cfg_path), "--param", "tau",
                "--values", "5,10", "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        assert len((out / "sweep.csv").read_text().splitlines()) == 3
