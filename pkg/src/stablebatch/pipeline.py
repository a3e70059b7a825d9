"""End-to-end pipeline over an output directory of JSON/CSV artifacts.

Layout of ``output_dir``::

    runs/         run_XX.csv + run_XX.json sidecars
    fits/         powerlaw_XX.json
    es/           target_XX_dataset.json, target_XX_fit.json
    metrics.json  BatchMetrics table, per-target diagnostics, trend
    schedule/     bopt_curve.json, schedule.json, schedule.txt
    verify/       equivalence.json
    plots/        *.svg
    report.json
"""

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .dynamics import SimConfig, find_crossing, loss_at_tokens, simulate_run, stall_bound
from .errors import (
    DomainError,
    FitDiverged,
    InsufficientData,
    InsufficientOverlap,
    InvalidConfig,
    MissingArtifacts,
    StableBatchError,
)
from .esfit import (
    BatchMetrics,
    extract_metrics,
    fit_es,
    load_es,
    metrics_trend,
    save_es,
)
from .jsonio import dumps, read_json, write_json
from .losslaw import ESDataset, build_es_dataset, fit_power_law, load_fit, steps_for_loss
from .runs import TrainingRun, read_run, write_csv, write_jsonl
from .scheduler import (
    DEFAULT_QUANTUM,
    BoptCurve,
    Schedule,
    compare_to_reference,
    fit_bopt_curve,
    make_schedule,
    verify_equivalence,
)

OUTPUT_ENV = "STABLEBATCH_OUTPUT_DIR"
MIN_RUNS = 4


@dataclass
class PipelineConfig:
    raw: dict
    output_dir: Path
    seed: int = 0
    model_size: float = 1.0
    simulator: dict = None
    runs: list = field(default_factory=list)
    target_losses: list = field(default_factory=list)
    loss_delta: float = 0.01
    es_delta: float = 0.05
    seeds: int = 16
    warmup_exclude: int = 1000
    schedule: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def sim_config(self):
        if self.simulator is None:
            raise InvalidConfig("config has no 'simulator' section")
        return _sim_config(self.simulator)

    def fingerprint(self):
        # where results land is not part of the experiment
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return hashlib.sha256(dumps(body).encode()).hexdigest()


def _sim_config(section):
    for key in ("epsilon", "noise", "fullbatch_loss"):
        if key not in section:
            raise InvalidConfig(f"simulator section is missing '{key}'")
    try:
        return SimConfig.from_dict(section)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad simulator section: {exc}") from None


def _target_levels(levels):
    if levels is None:
        return []
    if isinstance(levels, dict):
        try:
            lo, hi, n = float(levels["min"]), float(levels["max"]), int(levels.get("count", 16))
        except (KeyError, TypeError, ValueError):
            raise InvalidConfig("target range needs numeric 'min', 'max' and 'count'") from None
        if not (lo < hi and n >= 3):
            raise InvalidConfig("target range needs min < max and count >= 3")
        return np.geomspace(hi, lo, n).tolist()
    levels = [float(x) for x in levels]
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise InvalidConfig("target_losses must be strictly decreasing")
    return levels


def load_config(source, overrides=None):
    """Build a :class:`PipelineConfig` from a path or dict plus flag overrides."""
    if isinstance(source, (str, Path)):
        try:
            raw = read_json(source)
        except FileNotFoundError:
            raise MissingArtifacts(f"config file not found: {source}") from None
        except ValueError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    elif source is None:
        raw = {}
    else:
        raw = dict(source)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            raw.setdefault(section, {})
            raw[section] = dict(raw[section], **{leaf: value})
        else:
            raw[key] = value
    if not isinstance(raw, dict):
        raise InvalidConfig("config must be a JSON object")

    # flag (already merged into raw) beats env var beats config file
    flag_out = (overrides or {}).get("output_dir")
    output_dir = Path(flag_out or os.environ.get(OUTPUT_ENV) or raw.get("output_dir", "stablebatch-out"))
    fit = raw.get("fit", {})
    if "simulator" in raw and not isinstance(raw["simulator"], dict):
        raise InvalidConfig("'simulator' must be an object")
    cfg = PipelineConfig(
        raw=raw,
        output_dir=output_dir,
        seed=int(raw.get("seed", 0)),
        model_size=float(raw.get("model_size", 1.0)),
        simulator=raw.get("simulator"),
        runs=[str(p) for p in raw.get("runs", [])],
        target_losses=_target_levels(raw.get("target_losses")),
        loss_delta=float(fit.get("loss_delta", 0.01)),
        es_delta=float(fit.get("es_delta", 0.05)),
        seeds=int(fit.get("seeds", 16)),
        warmup_exclude=int(fit.get("warmup_exclude", 1000)),
        schedule=dict(raw.get("schedule", {})),
        verify=dict(raw.get("verify", {})),
    )
    if cfg.simulator is not None:
        cfg.sim_config  # validate early
    return cfg


def _rel(cfg, path):
    """Path relative to the output dir when inside it, so artifacts do not embed it."""
    path = Path(path)
    try:
        return path.relative_to(cfg.output_dir).as_posix()
    except ValueError:
        return path.as_posix()


def _run_paths(cfg):
    if cfg.runs:
        return [Path(p) for p in cfg.runs]
    paths = sorted((cfg.output_dir / "runs").glob("run_*.csv")) + sorted((cfg.output_dir / "runs").glob("run_*.jsonl"))
    return paths


def cmd_simulate(cfg):
    """Simulate one run per configured batch size; returns the written paths."""
    sim_section = cfg.simulator
    if sim_section is None:
        raise InvalidConfig("simulate needs a 'simulator' section")
    sim = cfg.sim_config
    try:
        batches = [float(b) for b in sim_section["batch_sizes"]]
        max_steps = int(sim_section["max_steps"])
    except (KeyError, TypeError, ValueError):
        raise InvalidConfig("simulator needs 'batch_sizes' and 'max_steps'") from None
    record_every = int(sim_section.get("record_every", 1))
    noise_sd = float(sim_section.get("loss_noise", 0.0))
    fmt = sim_section.get("format", "csv")
    rng = np.random.default_rng(cfg.seed)
    paths = []
    for i, B in enumerate(sorted(batches)):
        run = simulate_run(sim, B, max_steps, record_every, cfg.model_size, {"run_id": f"run_{i:02d}"})
        if noise_sd > 0:
            noisy = run.losses + rng.normal(0.0, noise_sd, size=len(run))
            run = TrainingRun(run.model_size, B, run.steps, run.tokens, noisy,
                              dict(run.meta, loss_noise=noise_sd, seed=cfg.seed))
        stem = cfg.output_dir / "runs" / f"run_{i:02d}"
        if fmt == "jsonl":
            paths.append(write_jsonl(run, stem.with_suffix(".jsonl")))
        else:
            paths.append(write_csv(run, stem.with_suffix(".csv")))
    return paths


def cmd_fit_loss(cfg):
    paths = _run_paths(cfg)
    if len(paths) < MIN_RUNS:
        raise InsufficientData(f"need >= {MIN_RUNS} runs, found {len(paths)}")
    out = []
    for path in paths:
        run = read_run(path)
        try:
            fit = fit_power_law(run, cfg.warmup_exclude, cfg.loss_delta, cfg.seed)
        except StableBatchError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        run_id = run.meta.get("run_id", Path(path).stem)
        dest = cfg.output_dir / "fits" / f"powerlaw_{run_id}.json"
        write_json({"run": _rel(cfg, path), "run_id": run_id, "batch_size": run.batch_size,
                    "model_size": run.model_size, **fit.to_dict()}, dest)
        out.append(dest)
    return out


def _load_fits(cfg):
    paths = sorted((cfg.output_dir / "fits").glob("powerlaw_*.json"))
    if not paths:
        raise MissingArtifacts(f"no power-law fits under {cfg.output_dir / 'fits'}; run fit-loss first")
    fits = []
    for p in paths:
        d = read_json(p)
        fits.append((float(d["batch_size"]), load_fit(p), d.get("run_id", p.stem)))
    fits.sort(key=lambda t: t[0])
    return fits


def cmd_fit_es(cfg):
    """Per-target E(S) datasets, piecewise fits and metrics.

    Returns ``(metrics_path, n_failed)``; failures are recorded, not raised,
    so every target that can be fitted is written.
    """
    if not cfg.target_losses:
        raise InvalidConfig("fit-es needs 'target_losses'")
    fits = _load_fits(cfg)
    rows, metrics = [], []
    failed = 0
    for k, target in enumerate(cfg.target_losses):
        usable = [(b, f, rid) for b, f, rid in fits if target > f.l0]
        excluded = [rid for b, f, rid in fits if not target > f.l0]
        row = {"index": k, "target_loss": target, "excluded_runs": excluded}
        try:
            ds = build_es_dataset([(b, f) for b, f, _ in usable], target, [rid for _, _, rid in usable])
            write_json(ds.to_dict(), cfg.output_dir / "es" / f"target_{k:02d}_dataset.json")
            model, diag = fit_es(ds, cfg.es_delta, cfg.seeds, cfg.seed, return_diagnostics=True)
        except (DomainError, InsufficientData, FitDiverged) as exc:
            failed += 1
            row.update(status="failed", error=type(exc).__name__, message=str(exc))
            rows.append(row)
            continue
        fit_path = cfg.output_dir / "es" / f"target_{k:02d}_fit.json"
        save_es(model, fit_path, diag, {"target_loss": target})
        m = extract_metrics(model, target)
        metrics.append(m)
        row.update(status="ok", fit=fit_path.relative_to(cfg.output_dir).as_posix(),
                   objective=diag.objective, n_points=diag.n_points, metrics=m.to_dict())
        rows.append(row)
    trend = None
    if len(metrics) >= 3:
        l0s = [f.l0 for _, f, _ in fits]
        trend = metrics_trend(metrics, l0=min(l0s) if min(l0s) < min(m.target_loss for m in metrics) else None).to_dict()
    path = write_json({
        "metrics": [m.to_dict() for m in metrics],
        "targets": rows,
        "trend": trend,
        "failed": failed,
    }, cfg.output_dir / "metrics.json")
    return path, failed


def cmd_fit(cfg):
    cmd_fit_loss(cfg)
    return cmd_fit_es(cfg)


def _load_metrics(cfg):
    path = cfg.output_dir / "metrics.json"
    if not path.exists():
        return []
    return [BatchMetrics.from_dict(m) for m in read_json(path)["metrics"]]


def cmd_schedule(cfg):
    opts = cfg.schedule
    if opts.get("curve"):
        curve = BoptCurve.from_dict(opts["curve"])
    else:
        metrics = _load_metrics(cfg)
        if not metrics:
            raise MissingArtifacts("schedule needs an explicit 'curve' or fitted metrics (run fit first)")
        curve = fit_bopt_curve(metrics, cfg.model_size)
    if "d_interval" not in opts:
        raise InvalidConfig("schedule needs 'd_interval'")
    momenta = opts.get("momenta", [0.0] * int(opts.get("n", 4)))
    quantum = opts.get("quantum", DEFAULT_QUANTUM)
    sched = make_schedule(curve, float(opts["d_interval"]), momenta, opts.get("n"),
                          opts.get("init_mode", "anchored"), quantum, cfg.model_size)
    out = cfg.output_dir / "schedule"
    write_json(curve.to_dict(), out / "bopt_curve.json")
    payload = sched.to_dict()
    if opts.get("compare_reference"):
        payload["reference_comparison"] = compare_to_reference(sched)
    path = write_json(payload, out / "schedule.json")
    (out / "schedule.txt").write_text(sched.table(), encoding="utf-8")
    return path


def simulated_surface(sim, b_grid, d_grid):
    """Loss matrix ``L[i, j]`` at batch ``b_grid[i]`` after ``d_grid[j]`` tokens."""
    return np.vstack([loss_at_tokens(sim, B, d_grid) for B in b_grid])


def default_verify_grid(sim, d_max, n_b=12, n_d=24, margin=1.05):
    """Batch grid starting just above the stall bound each batch meets by ``d_max``.

    A batch ``B`` sees full-batch time at most ``d_max / B``, so small batches
    only need to clear the noise scale at that time; the lower end solves
    ``B = margin * stall_bound(d_max / B)``, which keeps every row strictly
    decreasing while leaving the loss-optimal batch inside the grid.
    """
    def gap(B):
        return B - margin * stall_bound(sim, d_max / B)

    hi = margin * stall_bound(sim, d_max) + 1.0
    lo = margin * stall_bound(sim, 0.0)
    b_lo = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12) if gap(lo) < 0 else lo
    return np.geomspace(b_lo, 40 * b_lo, n_b), np.geomspace(d_max / 100, d_max, n_d)


def cmd_verify(cfg):
    sim = cfg.sim_config
    opts = cfg.verify
    if "b_grid" in opts and "d_grid" in opts:
        b_grid = np.asarray(opts["b_grid"], dtype=float)
        d_grid = np.asarray(opts["d_grid"], dtype=float)
    else:
        d_max = float(opts.get("d_max", 1e4))
        b_grid, d_grid = default_verify_grid(sim, d_max)
    report = verify_equivalence(b_grid, d_grid, simulated_surface(sim, b_grid, d_grid))
    payload = {"b_grid": b_grid.tolist(), "d_grid": d_grid.tolist(), **report.to_dict()}
    return write_json(payload, cfg.output_dir / "verify" / "equivalence.json"), report.passed


def _crossings(runs):
    found = []
    runs = sorted(runs, key=lambda r: r.batch_size)
    for a, b in zip(runs, runs[1:]):
        try:
            c = find_crossing(a, b)
        except InsufficientOverlap:
            continue
        if c is not None:
            found.append((a, b, c))
    return found


def cmd_plot(cfg):
    from .plotting import plot_es_fits, plot_loss_vs_tokens, plot_metrics_trend, plot_schedule

    out = cfg.output_dir / "plots"
    written = []
    runs = [read_run(p) for p in _run_paths(cfg)]
    if runs:
        crossings = [c for _, _, c in _crossings(runs)]
        written.append(plot_loss_vs_tokens(runs, crossings, out / "loss_vs_tokens.svg"))
    datasets, models = [], []
    for fit_path in sorted((cfg.output_dir / "es").glob("target_*_fit.json")):
        ds_path = fit_path.with_name(fit_path.name.replace("_fit", "_dataset"))
        datasets.append(ESDataset.from_dict(read_json(ds_path)) if ds_path.exists() else None)
        models.append(load_es(fit_path))
    if models:
        written.append(plot_es_fits(datasets, models, out / "es_fits.svg"))
    trend = plot_metrics_trend(_load_metrics(cfg), out / "bmin_bopt.svg")
    if trend is not None:
        written.append(trend)
    sched_path = cfg.output_dir / "schedule" / "schedule.json"
    if sched_path.exists():
        written.append(plot_schedule(Schedule.from_dict(read_json(sched_path)), out / "schedule.svg"))
    return written


def cmd_report(cfg):
    root = cfg.output_dir
    report = {
        "provenance": {"tool": "stablebatch", "version": __version__, "config_sha256": cfg.fingerprint(), "seed": cfg.seed},
        "artifacts": {},
    }
    metrics_path = root / "metrics.json"
    if metrics_path.exists():
        m = read_json(metrics_path)
        report["artifacts"]["metrics"] = "metrics.json"
        report["metrics"] = m["metrics"]
        report["fit_diagnostics"] = m["targets"]
        report["trend"] = m["trend"]
    sched = root / "schedule" / "schedule.json"
    if sched.exists():
        report["artifacts"]["schedule"] = "schedule/schedule.json"
        report["schedule"] = read_json(sched)
    ver = root / "verify" / "equivalence.json"
    if ver.exists():
        report["artifacts"]["verify"] = "verify/equivalence.json"
        report["equivalence_passed"] = read_json(ver)["passed"]
    paths = _run_paths(cfg)
    if paths:
        runs = [read_run(p) for p in paths]
        report["artifacts"]["runs"] = [_rel(cfg, p) for p in paths]
        report["crossings"] = [
            {"batch_a": a.batch_size, "batch_b": b.batch_size, "loss": c.loss, "tokens_a": c.tokens_a, "tokens_b": c.tokens_b}
            for a, b, c in _crossings(runs)
        ]
    return write_json(report, root / "report.json")


def steps_for_targets(fits, targets):
    """Convenience table ``{target: [steps per fit]}`` for inspection."""
    return {t: [steps_for_loss(f, t) for f in fits] for t in targets}
