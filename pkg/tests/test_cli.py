import json

import numpy as np
import pytest

from stablebatch import pipeline
from stablebatch.cli import main
from stablebatch.jsonio import read_json, write_json
from stablebatch.runs import read_run

M = 1e6
LINEAR_KNOTS = {"model_size": 1e9, "extrapolation": 1.0,
                "knots": [{"D": 1.0, "B": 2 * M}] + [{"D": 125e9 * i, "B": (2 + i) * M} for i in range(1, 5)]}


def small_config(tmp_path, **extra):
    cfg = {
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
        "simulator": {
            "epsilon": 0.5,
            "noise": {"kind": "constant", "b0": 4.0},
            "fullbatch_loss": {"l0": 2.0, "a": 5.0, "alpha": 0.3},
            "batch_sizes": np.geomspace(1.02, 100, 16).tolist(),
            "max_steps": 3000,
            "record_every": 20,
        },
        "target_losses": [3.2, 3.1, 3.0],
        "fit": {"warmup_exclude": 200, "seeds": 8},
        "schedule": {"d_interval": 500.0, "momenta": [0, 0, 0]},
    }
    cfg.update(extra)
    path = tmp_path / "config.json"
    write_json(cfg, path)
    return path


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_simulate_writes_nonincreasing_runs(tmp_path):
    cfg = small_config(tmp_path)
    sim = read_json(cfg)["simulator"]
    sim["batch_sizes"] = [2.0, 4.0, 8.0]
    write_json(dict(read_json(cfg), simulator=sim), cfg)
    assert main(["simulate", "--config", str(cfg)]) == 0
    paths = sorted((tmp_path / "out" / "runs").glob("*.csv"))
    assert len(paths) == 3
    for p in paths:
        assert np.all(np.diff(read_run(p).losses) <= 0)
        assert p.with_suffix(".json").exists()


def test_missing_epsilon_is_config_error(tmp_path, capsys):
    cfg = small_config(tmp_path)
    raw = read_json(cfg)
    del raw["simulator"]["epsilon"]
    write_json(raw, cfg)
    assert main(["simulate", "--config", str(cfg)]) == 2
    err = err_json(capsys)
    assert err["error"] == "InvalidConfig" and err["exit_code"] == 2


def test_bad_targets_rejected(tmp_path, capsys):
    cfg = small_config(tmp_path, target_losses=[3.0, 3.1])
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "decreasing" in err_json(capsys)["message"]
    cfg = small_config(tmp_path, target_losses={"min": 3.0, "max": 3.1, "count": 2})
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_target_range_levels():
    levels = pipeline._target_levels({"min": 2.93, "max": 3.25, "count": 16})
    assert len(levels) == 16 and levels[0] == 3.25 and levels[-1] == pytest.approx(2.93, rel=1e-15)
    assert all(a > b for a, b in zip(levels, levels[1:]))


@pytest.mark.filterwarnings("ignore::stablebatch.errors.NonMonotoneWarning")
def test_full_pipeline_and_report(tmp_path, capsys):
    cfg = str(small_config(tmp_path))
    for cmd in ("simulate", "fit", "schedule", "verify", "plot", "report"):
        assert main([cmd, "--config", cfg]) == 0, capsys.readouterr().err
    out = tmp_path / "out"
    metrics = read_json(out / "metrics.json")
    assert metrics["failed"] == 0 and len(metrics["metrics"]) == 3
    for m in metrics["metrics"]:
        assert 1.9 <= m["b_opt"] / m["b_min"] <= 2.1
    assert len(list((out / "es").glob("target_*_fit.json"))) == 3
    report = read_json(out / "report.json")
    assert report["provenance"]["config_sha256"] == pipeline.load_config(cfg).fingerprint()
    assert report["metrics"] == metrics["metrics"]
    assert report["schedule"] == read_json(out / "schedule" / "schedule.json")
    assert report["equivalence_passed"] is True
    assert (out / "schedule" / "schedule.txt").read_text().startswith("switch")
    assert {p.name for p in (out / "plots").glob("*.svg")} == {
        "loss_vs_tokens.svg", "es_fits.svg", "bmin_bopt.svg", "schedule.svg"}


def test_fit_needs_four_runs(tmp_path, capsys):
    cfg = small_config(tmp_path)
    raw = read_json(cfg)
    raw["simulator"]["batch_sizes"] = [2.0, 4.0, 8.0]
    write_json(raw, cfg)
    main(["simulate", "--config", str(cfg)])
    assert main(["fit", "--config", str(cfg)]) == 3
    assert err_json(capsys)["error"] == "InsufficientData"


def test_unreachable_target_fails_fit(tmp_path, capsys):
    cfg = small_config(tmp_path, target_losses=[3.2, 1.5])
    main(["simulate", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["fit", "--config", str(cfg)]) == 3
    err = err_json(capsys)
    assert err["error"] == "FitFailure"
    rows = read_json(tmp_path / "out" / "metrics.json")["targets"]
    assert rows[0]["status"] == "ok" and rows[1]["status"] == "failed"


def test_parse_error_names_line(tmp_path, capsys):
    cfg = small_config(tmp_path)
    main(["simulate", "--config", str(cfg)])
    run = sorted((tmp_path / "out" / "runs").glob("*.csv"))[0]
    lines = run.read_text().splitlines()
    lines[3] = lines[3].split(",")[0] + ",1.0," + lines[3].split(",")[2]
    run.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["fit-loss", "--config", str(cfg)]) == 4
    err = err_json(capsys)
    assert err["error"] == "RunParseError" and f"{run.name}:4:" in err["message"]


@pytest.mark.parametrize("mode,expect", [("anchored", [3, 4, 5, 6]), ("paper_literal", [1, 2, 3, 4])])
def test_schedule_from_explicit_curve(tmp_path, mode, expect):
    cfg = small_config(tmp_path, schedule={"curve": LINEAR_KNOTS, "d_interval": 125e9,
                                           "momenta": [0, 0, 0, 0], "init_mode": mode, "compare_reference": True,
                                           "quantum": None})
    assert main(["schedule", "--config", str(cfg)]) == 0
    sched = read_json(tmp_path / "out" / "schedule" / "schedule.json")
    assert [e["batch"] for e in sched["entries"]] == [x * M for x in expect]
    assert len(sched["reference_comparison"]["rows"]) == 4


def test_schedule_flags_override(tmp_path):
    cfg = small_config(tmp_path, schedule={"curve": LINEAR_KNOTS, "d_interval": 125e9})
    assert main(["schedule", "--config", str(cfg), "--momenta", "1,0,0,0", "--quantum", "65536"]) == 0
    sched = read_json(tmp_path / "out" / "schedule" / "schedule.json")
    assert [e["batch"] for e in sched["entries"]] == [round(x * M / 65536) * 65536 for x in (4, 5, 6, 7)]


def test_schedule_without_inputs(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["schedule", "--config", str(cfg)]) == 4
    assert err_json(capsys)["error"] == "MissingArtifacts"


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    monkeypatch.setenv(pipeline.OUTPUT_ENV, str(tmp_path / "env"))
    assert pipeline.load_config(cfg).output_dir == tmp_path / "env"
    assert pipeline.load_config(cfg, {"output_dir": str(tmp_path / "flag")}).output_dir == tmp_path / "flag"
    monkeypatch.delenv(pipeline.OUTPUT_ENV)
    assert pipeline.load_config(cfg).output_dir == tmp_path / "out"


def test_seeded_loss_noise_is_deterministic(tmp_path):
    raw = read_json(small_config(tmp_path))
    raw["simulator"]["loss_noise"] = 0.01
    texts = []
    for tag in ("a", "b"):
        c = pipeline.load_config(dict(raw, output_dir=str(tmp_path / tag)))
        texts.append([p.read_bytes() for p in pipeline.cmd_simulate(c)])
    assert texts[0] == texts[1]
    c = pipeline.load_config(dict(raw, output_dir=str(tmp_path / "c"), seed=1))
    assert [p.read_bytes() for p in pipeline.cmd_simulate(c)] != texts[0]


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 4
    assert err_json(capsys)["error"] == "MissingArtifacts"


def test_usage_error(capsys):
    assert main(["explode"]) == 2
    assert err_json(capsys)["error"] == "UsageError"


def test_verify_subcommand(tmp_path):
    cfg = small_config(tmp_path, verify={"d_max": 5000.0})
    assert main(["verify", "--config", str(cfg), "--seed", "3"]) == 0
    rep = read_json(tmp_path / "out" / "verify" / "equivalence.json")
    assert rep["passed"] and len(rep["rows"]) == 24
