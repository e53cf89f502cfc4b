"""Command-line surface: ingest traces, train components, run episodes,
and compare autoscaler variants."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from . import synth
from .burst import BurstError, DetectorConfig
from .engine import (
    METRIC_NAMES,
    VARIANTS,
    Artifacts,
    AutoscalerSpec,
    EngineError,
    HpaConfig,
    run_comparison,
    run_episode,
    train_artifacts,
)
from .forecast import (
    ForecastError,
    ForecasterConfig,
    load_forecaster,
    save_forecaster,
)
from .perfmodel import PerfModelError, load_svr, save_svr
from .rl import RlConfig, RlError, TrainResult, load_policy, save_policy
from .sim import ClusterConfig, SimError, compute_metrics, read_step_log
from .trace import (
    PageviewsClient,
    TraceError,
    WorkloadTrace,
    load_trace,
    save_trace,
    standardize,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

VALIDATION_ERRORS = (
    TraceError,
    ForecastError,
    BurstError,
    PerfModelError,
    RlError,
    SimError,
    EngineError,
    ValueError,
)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "seeds": [0, 1, 2],
    "slo_rt": 16.0,
    "in_max": 64,
    "variants": ["bascaler", "hpa"],
    "trace": {
        "source": "synthetic",  # synthetic | csv | fetch
        "path": None,
        "article": None,
        "start": None,
        "end": None,
        "fixture_dir": None,
        "standardize": True,
        "target_mean": 500.0,
        "target_std": 175.0,
        "synthetic": {
            "kind": "periodic",  # periodic | random_walk
            "length": 1440,
            "season": 24,
            "amplitude": 150.0,
            "noise_std": 25.0,
            "spike_height": 0.0,
            "bursts": 0,
            "burst_height": 450.0,
            "burst_duration": 8,
        },
    },
    "forecaster": {
        "kind": "seasonal",
        "input_length": 48,
        "horizon": 24,
        "quantiles": [0.1, 0.5, 0.9],
        "season_length": 24,
        "learning_rate": 0.1,
        "max_epochs": 300,
    },
    "detector": {
        "history_length": 24,
        "nearest_length": 3,
        "distance_threshold": 0.1,
        "loss_threshold": 0.1,
    },
    "handler": {"fit_window": 168, "bootstrap_iterations": 100},
    "perfmodel": {"C": 100.0, "epsilon": 0.2, "gamma": 16.0, "samples": 800},
    "rl": {
        "discount": 0.99,
        "offset_range": 2,
        "reward_mix": 0.5,
        "utilization_knee": 0.9,
        "rt_penalty": 1.0,
        "clip_ratio": 0.2,
        "epochs": 4,
        "rollout_steps": 2048,
        "hidden_width": 64,
        "gae_lambda": 0.95,
        "policy_lr": 0.01,
        "value_lr": 0.01,
        "workload_window": 8,
        "train_episodes": 25,
    },
    "sim": {
        "capacity_per_instance": 100.0,
        "base_rt": 5.0,
        "saturation_knee": 0.95,
        "scaling_delay": 1,
        "ru_noise": 0.02,
        "sim_seed": 0,
    },
    "hpa": {"target_utilization": 0.6, "tolerance": 0.1, "cooldown": 1},
    "engine": {"eval_fraction": 0.6},
}


def merge_config(user: dict, defaults: dict | None = None, path: str = "") -> dict:
    """Overlay user keys on the defaults, rejecting anything unknown."""
    defaults = copy.deepcopy(DEFAULT_CONFIG) if defaults is None else defaults
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            defaults[key] = merge_config(value, defaults[key], path + key + ".")
        else:
            defaults[key] = value
    return defaults


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return merge_config(user)


def spec_from_config(cfg: dict, variant: str) -> AutoscalerSpec:
    f = cfg["forecaster"]
    return AutoscalerSpec(
        variant=variant,
        slo_rt=cfg["slo_rt"],
        in_max=cfg["in_max"],
        forecaster_kind=f["kind"],
        forecaster_config=ForecasterConfig(
            input_length=f["input_length"],
            horizon=f["horizon"],
            quantiles=tuple(f["quantiles"]),
            season_length=f["season_length"],
            learning_rate=f["learning_rate"],
            max_epochs=f["max_epochs"],
        ),
        detector_config=DetectorConfig(
            history_length=cfg["detector"]["history_length"],
            nearest_length=cfg["detector"]["nearest_length"],
            distance_threshold=cfg["detector"]["distance_threshold"],
            loss_threshold=cfg["detector"]["loss_threshold"],
        ),
        handler_fit_window=cfg["handler"]["fit_window"],
        handler_bootstrap_iterations=cfg["handler"]["bootstrap_iterations"],
        svr_c=cfg["perfmodel"]["C"],
        svr_epsilon=cfg["perfmodel"]["epsilon"],
        svr_gamma=cfg["perfmodel"]["gamma"],
        svr_samples=cfg["perfmodel"]["samples"],
        rl_config=RlConfig(
            discount=cfg["rl"]["discount"],
            offset_range=cfg["rl"]["offset_range"],
            reward_mix=cfg["rl"]["reward_mix"],
            utilization_knee=cfg["rl"]["utilization_knee"],
            slo_rt=cfg["slo_rt"],
            rt_penalty=cfg["rl"]["rt_penalty"],
            clip_ratio=cfg["rl"]["clip_ratio"],
            epochs=cfg["rl"]["epochs"],
            rollout_steps=cfg["rl"]["rollout_steps"],
            hidden_width=cfg["rl"]["hidden_width"],
            gae_lambda=cfg["rl"]["gae_lambda"],
            policy_lr=cfg["rl"]["policy_lr"],
            value_lr=cfg["rl"]["value_lr"],
            workload_window=cfg["rl"]["workload_window"],
            in_max=cfg["in_max"],
            seed=cfg["seed"],
        ),
        rl_train_episodes=cfg["rl"]["train_episodes"],
        hpa_config=HpaConfig(
            target_utilization=cfg["hpa"]["target_utilization"],
            tolerance=cfg["hpa"]["tolerance"],
            cooldown=cfg["hpa"]["cooldown"],
        ),
    )


def sim_from_config(cfg: dict) -> ClusterConfig:
    s = cfg["sim"]
    return ClusterConfig(
        capacity_per_instance=s["capacity_per_instance"],
        base_rt=s["base_rt"],
        saturation_knee=s["saturation_knee"],
        scaling_delay=s["scaling_delay"],
        in_max=cfg["in_max"],
        ru_noise=s["ru_noise"],
        seed=s["sim_seed"],
    )


def trace_from_config(cfg: dict) -> WorkloadTrace:
    t = cfg["trace"]
    source = t["source"]
    if source == "csv":
        if not t["path"]:
            raise ConfigError("trace.source=csv requires trace.path")
        trace = load_trace(t["path"])
    elif source == "fetch":
        if not (t["article"] and t["start"] and t["end"]):
            raise ConfigError("trace.source=fetch requires article, start, end")
        client = PageviewsClient(fixture_dir=t["fixture_dir"])
        trace = client.fetch_pageviews(
            t["article"], date.fromisoformat(t["start"]), date.fromisoformat(t["end"])
        )
    elif source == "synthetic":
        syn = t["synthetic"]
        if syn["kind"] == "periodic":
            trace = synth.periodic_trace(
                length=syn["length"],
                season=syn["season"],
                amplitude=syn["amplitude"],
                noise_std=syn["noise_std"],
                spike_height=syn["spike_height"],
                seed=cfg["seed"],
            )
        elif syn["kind"] == "random_walk":
            trace = synth.random_walk_trace(length=syn["length"], seed=cfg["seed"])
        else:
            raise ConfigError(f"unknown synthetic kind {syn['kind']!r}")
        if syn["bursts"]:
            eval_start = int(len(trace) * cfg["engine"]["eval_fraction"])
            onsets = synth.pick_burst_onsets(
                len(trace), syn["bursts"], eval_start + 40,
                min_gap=3 * syn["burst_duration"], seed=cfg["seed"] + 1,
            )
            trace = synth.inject_bursts(
                trace, onsets, syn["burst_height"], syn["burst_duration"]
            )
    else:
        raise ConfigError(f"unknown trace source {source!r}")
    if t["standardize"]:
        result = standardize(trace, t["target_mean"], t["target_std"])
        if result.clamped:
            print(f"warning: {result.clamped} values clamped to 0 by standardization")
        trace = result.trace
    return trace


# --- commands ----------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.csv:
        cfg["trace"]["source"] = "csv"
        cfg["trace"]["path"] = args.csv
    if args.article:
        cfg["trace"]["source"] = "fetch"
        cfg["trace"]["article"] = args.article
        cfg["trace"]["start"] = args.start
        cfg["trace"]["end"] = args.end
    if args.no_standardize:
        cfg["trace"]["standardize"] = False
    trace = trace_from_config(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trace(trace, out)
    summary = trace.summary()
    print(f"wrote {out}")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    return EXIT_OK


def _write_resolved_config(cfg: dict, out_dir: Path) -> None:
    (out_dir / "resolved_config.json").write_text(
        json.dumps(cfg, indent=1, sort_keys=True), encoding="utf-8"
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    trace = trace_from_config(cfg)
    spec = spec_from_config(cfg, "bascaler")
    sim_config = sim_from_config(cfg)
    eval_start = int(len(trace) * cfg["engine"]["eval_fraction"])
    artifacts = train_artifacts(spec, trace, sim_config, eval_start, cfg["seed"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_forecaster(artifacts.forecaster, out_dir / "forecaster.json")
    save_svr(artifacts.perf_model, out_dir / "perfmodel.json")
    save_policy(
        TrainResult(artifacts.policy, artifacts.value_net, artifacts.rl_curve),
        spec.rl_config,
        out_dir / "policy.json",
    )
    _write_resolved_config(cfg, out_dir)
    print(f"trained artifacts written to {out_dir}")
    print(f"  forecaster: {spec.forecaster_kind}")
    print(f"  perf model: {len(artifacts.perf_model.dual_coefs)} support vectors, "
          f"converged={artifacts.perf_model.converged}")
    if artifacts.rl_curve:
        print(f"  policy: {len(artifacts.rl_curve)} episodes, "
              f"final mean reward {artifacts.rl_curve[-1]:.3f}")
    return EXIT_OK


def _load_artifacts(art_dir: Path) -> Artifacts:
    artifacts = Artifacts()
    forecaster_path = art_dir / "forecaster.json"
    if forecaster_path.exists():
        artifacts.forecaster = load_forecaster(forecaster_path)
    perf_path = art_dir / "perfmodel.json"
    if perf_path.exists():
        artifacts.perf_model = load_svr(perf_path)
    policy_path = art_dir / "policy.json"
    if policy_path.exists():
        result, _ = load_policy(policy_path)
        artifacts.policy = result.policy
        artifacts.value_net = result.value_net
        artifacts.rl_curve = result.episode_rewards
    return artifacts


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    variant = args.variant or "bascaler"
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    trace = trace_from_config(cfg)
    spec = spec_from_config(cfg, variant)
    sim_config = sim_from_config(cfg)
    eval_start = int(len(trace) * cfg["engine"]["eval_fraction"])
    artifacts = None
    if variant != "hpa":
        if args.artifacts:
            artifacts = _load_artifacts(Path(args.artifacts))
        else:
            artifacts = train_artifacts(spec, trace, sim_config, eval_start, cfg["seed"])
    report = run_episode(spec, trace, sim_config, cfg["seed"], artifacts, eval_start)
    report.config_echo["run_config"] = cfg
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_step_log(out_dir / "steps.csv")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    _write_resolved_config(cfg, out_dir)
    m = report.metrics
    print(
        f"{variant}: violation_rate={m.violation_rate:.4f} "
        f"cost={m.resource_cost:.2f} errors={m.total_errors} "
        f"rt_variance={m.rt_variance:.2f}"
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    variants = list(cfg["variants"])
    if args.ablations:
        for v in ("ab_burst", "ab_pred", "ab_rl"):
            if v not in variants:
                variants.append(v)
    if len(variants) < 2:
        raise ConfigError("compare needs at least 2 variants")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    cfg["variants"] = variants
    sim_config = sim_from_config(cfg)
    specs = [spec_from_config(cfg, v) for v in variants]
    if args.suite:
        # suite traces are generated on the standardized scale already
        traces = synth.standard_suite(
            length=cfg["trace"]["synthetic"]["length"],
            seed=cfg["seed"],
            eval_fraction=cfg["engine"]["eval_fraction"],
        )
    else:
        traces = {"trace": trace_from_config(cfg)}
    result = run_comparison(
        specs, traces, list(cfg["seeds"]), sim_config,
        eval_fraction=cfg["engine"]["eval_fraction"],
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(cfg, out_dir)
    with (out_dir / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["variant", "trace"]
        for m in METRIC_NAMES:
            header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(header)
        for row in result.rows:
            out_row = [row.variant, row.trace_name]
            for m in METRIC_NAMES:
                out_row += [repr(row.means[m]), repr(row.stds[m])]
            writer.writerow(out_row)
        for imp in result.improvements:
            out_row = [f"improvement_vs_{imp['baseline']}", "all"]
            for m in METRIC_NAMES:
                out_row += [repr(imp[m]["mean"]), repr(imp[m]["std"])]
            writer.writerow(out_row)
    doc = {
        "config": cfg,
        "rows": [
            {
                "variant": r.variant,
                "trace": r.trace_name,
                "means": r.means,
                "stds": r.stds,
                "n_seeds": r.n_seeds,
            }
            for r in result.rows
        ],
        "improvements": result.improvements,
    }
    (out_dir / "comparison.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8"
    )
    for m in METRIC_NAMES:
        with (out_dir / f"plotdata_{m}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "trace", "mean", "std"])
            for row in result.rows:
                writer.writerow(
                    [row.variant, row.trace_name, repr(row.means[m]), repr(row.stds[m])]
                )
    if args.step_logs:
        for (variant, trace_name, seed), report in result.reports.items():
            sub = out_dir / "episodes" / f"{variant}_{trace_name}_{seed}"
            sub.mkdir(parents=True, exist_ok=True)
            report.write_step_log(sub / "steps.csv")
            (sub / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"comparison written to {out_dir}")
    for row in result.rows:
        print(
            f"  {row.variant:10s} {row.trace_name:16s} "
            f"violation_rate={row.means['violation_rate']:.4f} "
            f"cost={row.means['resource_cost']:.2f}"
        )
    for imp in result.improvements:
        v = imp["violation_rate"]
        c = imp["resource_cost"]
        print(
            f"  bascaler vs {imp['baseline']}: violation "
            f"{v['mean']:.2f}%±{v['std']:.2f}%, cost {c['mean']:.2f}%±{c['std']:.2f}%"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstscaler",
        description="Burst-aware autoscaling: ingest, train, run, compare.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load/fetch a trace, standardize, save CSV")
    p.add_argument("--config")
    p.add_argument("--csv", help="input CSV path")
    p.add_argument("--article", help="fetch this article's pageviews")
    p.add_argument("--start", help="fetch start date YYYY-MM-DD")
    p.add_argument("--end", help="fetch end date YYYY-MM-DD")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train forecaster, perf model, and policy")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one autoscaling episode")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--artifacts", help="directory with trained artifacts")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare variants across traces and seeds")
    p.add_argument("--config")
    p.add_argument("--ablations", action="store_true",
                   help="add ab_burst, ab_pred, ab_rl variants")
    p.add_argument("--suite", action="store_true",
                   help="use the bundled three-trace synthetic suite")
    p.add_argument("--step-logs", action="store_true",
                   help="also write per-episode step logs")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, *VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures
        logger.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
