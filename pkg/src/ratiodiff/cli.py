"""Command-line driver.

Subcommands: ``train`` fits a conditional model on a quantized toy
density, ``sample`` draws states from a checkpoint, ``eval`` scores
samples against fresh data draws, ``gen-data`` dumps a quantized
dataset, and ``verify`` runs the self-check suite.

Configuration is a flat dotted-key dictionary: defaults, overlaid by an
optional ``--config`` file of ``key = value`` lines, overlaid by
repeatable ``--set key=value`` flags, overlaid by the named sugar flags
(``--steps``, ``--seed``, ...).  Unknown keys are rejected by name.

Exit codes: 0 success, 2 usage or configuration or I/O error, 3 numeric
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .config import (
    apply_thread_setting,
    artifact_metadata,
    config_digest,
    load_config,
    make_dataset_spec,
    make_mmd_config,
    make_model,
    make_rate,
    make_sampler_config,
    make_schedule,
    make_train_config,
    serialize_config,
    version_banner,
)
from .datasets import (
    ToyDatasetSpec,
    dequantize2d,
    quantize2d,
    read_states_csv,
    sample_toy2d,
    sample_toy_states,
    write_points_csv,
)
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    NumericError,
    VerificationError,
)
from .metrics import (
    MetricsReport,
    empirical_distribution,
    evaluate_run,
    tv_distance,
)
from .models import load_checkpoint
from .samplers import sample_reverse
from .training import toy_state_sampler, train
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

TV_STATE_LIMIT = 4096

_TRAIN_SUGAR = {
    "dataset": "data.name",
    "bits": "data.bits",
    "model": "model.kind",
    "loss": "train.loss",
    "steps": "train.steps",
    "seed": "run.seed",
    "threads": "run.threads",
}
_SAMPLE_SUGAR = {
    "n": "sample.n",
    "kind": "sample.kind",
    "steps": "sample.steps",
    "seed": "run.seed",
    "threads": "run.threads",
}
_EVAL_SUGAR = {
    "dataset": "data.name",
    "bits": "data.bits",
    "n": "eval.n",
    "repeats": "eval.repeats",
    "seed": "run.seed",
    "threads": "run.threads",
}
_GEN_SUGAR = {
    "dataset": "data.name",
    "bits": "data.bits",
    "seed": "run.seed",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="file of 'key = value' lines")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load_cfg(args, sugar: dict) -> dict:
    """Defaults < config file < --set pairs < named flags."""
    overrides = list(getattr(args, "overrides", []) or [])
    for attr, key in sugar.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    cfg = load_config(getattr(args, "config", None), overrides)
    apply_thread_setting(cfg)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratiodiff",
        description="discrete-state diffusion via conditional ratio models",
    )
    parser.add_argument("--version", action="version", version=version_banner())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on a quantized toy density")
    _add_config_flags(p)
    p.add_argument("--dataset", help="toy density name (data.name)")
    p.add_argument("--bits", help="bits per axis (data.bits)")
    p.add_argument("--model", help="model kind (model.kind)")
    p.add_argument("--loss", help="training loss (train.loss)")
    p.add_argument("--steps", help="optimization steps (train.steps)")
    p.add_argument("--seed", help="run seed (run.seed)")
    p.add_argument("--threads", help="numpy thread cap (run.threads)")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.set_defaults(func=run_train)

    p = sub.add_parser("sample", help="draw states from a trained checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--n", help="number of samples (sample.n)")
    p.add_argument("--kind", help="predictor kind (sample.kind)")
    p.add_argument("--steps", help="predictor steps (sample.steps)")
    p.add_argument("--seed", help="run seed (run.seed)")
    p.add_argument("--threads", help="numpy thread cap (run.threads)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=run_sample)

    p = sub.add_parser("eval", help="score samples against fresh data draws")
    _add_config_flags(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="sample from this checkpoint per repeat")
    src.add_argument("--samples", help="CSV of pre-drawn samples to score")
    p.add_argument("--dataset", help="toy density name (data.name)")
    p.add_argument("--bits", help="bits per axis (data.bits)")
    p.add_argument("--n", help="states per side per repeat (eval.n)")
    p.add_argument("--repeats", help="independent repeats (eval.repeats)")
    p.add_argument("--seed", help="run seed (run.seed)")
    p.add_argument("--threads", help="numpy thread cap (run.threads)")
    p.add_argument("--out", required=True, help="output directory for the report")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("gen-data", help="write a quantized toy dataset CSV")
    _add_config_flags(p)
    p.add_argument("--dataset", help="toy density name (data.name)")
    p.add_argument("--bits", help="bits per axis (data.bits)")
    p.add_argument("--n", type=int, default=10000, help="number of points")
    p.add_argument("--seed", help="run seed (run.seed)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=run_gen_data)

    p = sub.add_parser("verify", help="run the mathematical self-check suite")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument(
        "--negative-control",
        action="store_true",
        help="plant a reverse-rate bug; the suite must catch it and fail",
    )
    p.add_argument("--json", dest="json_out", default=None, help="also write the verdict here")
    p.set_defaults(func=run_verify)

    return parser


def run_train(args) -> int:
    cfg = _load_cfg(args, _TRAIN_SUGAR)
    spec = make_dataset_spec(cfg)
    sched = make_schedule(cfg)
    rate = make_rate(cfg)
    model = make_model(cfg, spec.space)
    tcfg = make_train_config(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))

    digest = config_digest(cfg)
    print(
        f"training {cfg['model.kind']} on {spec.name} ({spec.space.dims} binary dims), "
        f"{tcfg.n_steps} steps of {tcfg.loss_kind} (config {digest})"
    )
    result = train(
        model,
        toy_state_sampler(spec),
        sched,
        rate,
        tcfg,
        out_dir=out,
        extra_meta=artifact_metadata(cfg),
    )
    if result.metrics:
        print(f"final loss {result.final_loss:.6f}")
    else:
        print("no optimization steps taken; wrote initial parameters")
    print(f"wrote {out / 'model.rdck'} and {out / 'metrics.csv'}")
    return EXIT_OK


def _binary_grid_spec(cfg: dict, dims: int) -> ToyDatasetSpec:
    if dims % 2 != 0:
        raise ConfigError(f"state length {dims} is not a 2-d binary grid")
    return ToyDatasetSpec(name=cfg["data.name"], bits_per_axis=dims // 2, lim=cfg["data.lim"])


def run_sample(args) -> int:
    cfg = _load_cfg(args, _SAMPLE_SUGAR)
    model, desc = load_checkpoint(args.checkpoint)
    if model.space.vocab != 2 or model.kind == "ordinal_score":
        raise ConfigError("the sample command drives binary conditional models only")
    sched = make_schedule(cfg)
    if abs(sched.horizon - model.horizon) > 1e-12:
        raise ConfigError(
            f"schedule.horizon {sched.horizon} does not match the "
            f"checkpoint horizon {model.horizon}"
        )
    rate = make_rate(cfg)
    scfg = make_sampler_config(cfg)
    spec = _binary_grid_spec(cfg, model.space.dims)

    n = cfg["sample.n"]
    states = sample_reverse(model, model.space, scfg, n, sched, rate)
    points = dequantize2d(states, spec)

    source = desc.get("extra", {}).get("config_digest", "unknown")
    header = (
        f"samples | model {desc['kind']} (config {source}) | sampler {scfg.kind}"
        f" steps {scfg.steps} | seed {cfg['run.seed']}"
        f" | config {config_digest(cfg)} | ratiodiff {__version__}"
    )
    write_points_csv(args.out, points, states, header_comment=header)
    print(f"wrote {n} samples to {args.out}")
    return EXIT_OK


def run_eval(args) -> int:
    cfg = _load_cfg(args, _EVAL_SUGAR)
    spec = make_dataset_spec(cfg)
    space = spec.space
    mcfg = make_mmd_config(cfg)
    n_eval = cfg["eval.n"]
    seed = cfg["run.seed"]

    def draw_data(count, rng):
        return sample_toy_states(spec, count, int(rng.integers(2**63 - 1)))

    meta = {
        "dataset": spec.name,
        "bits_per_axis": spec.bits_per_axis,
        "config_digest": config_digest(cfg),
        "version": __version__,
    }

    if args.checkpoint is not None:
        model, desc = load_checkpoint(args.checkpoint)
        if model.space.dims != space.dims or model.space.vocab != space.vocab:
            raise ConfigError(
                f"checkpoint space {model.space.dims}x{model.space.vocab} does not "
                f"match the dataset grid {space.dims}x{space.vocab}"
            )
        sched = make_schedule(cfg)
        if abs(sched.horizon - model.horizon) > 1e-12:
            raise ConfigError(
                f"schedule.horizon {sched.horizon} does not match the "
                f"checkpoint horizon {model.horizon}"
            )
        rate = make_rate(cfg)
        base_scfg = make_sampler_config(cfg)
        meta["source"] = str(args.checkpoint)

        def draw_model(count, rng):
            scfg = dataclasses.replace(base_scfg, seed=int(rng.integers(2**31)))
            return sample_reverse(model, space, scfg, count, sched, rate)

        tv_states = sample_reverse(model, space, base_scfg, n_eval, sched, rate)
    else:
        all_states = read_states_csv(args.samples)
        if all_states.shape[1] != space.dims:
            raise ConfigError(
                f"{args.samples}: states have {all_states.shape[1]} digits, "
                f"dataset grid needs {space.dims}"
            )
        need = mcfg.repeats * n_eval
        if all_states.shape[0] < need:
            raise ConfigError(
                f"{args.samples}: {all_states.shape[0]} rows, but "
                f"{mcfg.repeats} repeats of {n_eval} need {need}"
            )
        meta["source"] = str(args.samples)
        blocks = iter(
            all_states[i * n_eval : (i + 1) * n_eval] for i in range(mcfg.repeats)
        )

        def draw_model(count, rng):
            del count, rng  # pre-drawn disjoint blocks, in file order
            return next(blocks)

        tv_states = all_states[:n_eval]

    report = evaluate_run(
        draw_model, draw_data, mcfg, n_per_side=n_eval, seed=seed, metadata=meta
    )

    if cfg["eval.tv"] and space.n_states <= TV_STATE_LIMIT:
        data_states = sample_toy_states(spec, n_eval, seed + 1000003)
        tv = tv_distance(
            empirical_distribution(tv_states, space),
            empirical_distribution(data_states, space),
        )
        values = dict(report.values)
        values["tv_empirical"] = tv
        report = MetricsReport(
            values=values,
            per_repeat=report.per_repeat,
            metadata={**report.metadata, "tv_n_per_side": n_eval},
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    mean = report.values["mmd_mean"]
    err = report.values["mmd_stderr"]
    print(f"mmd {mean:.6g} +/- {err:.6g} over {mcfg.repeats} repeats of {n_eval}")
    if "tv_empirical" in report.values:
        print(f"empirical tv {report.values['tv_empirical']:.4f}")
    print(f"wrote {out / 'report.json'} and {out / 'report.csv'}")
    return EXIT_OK


def run_gen_data(args) -> int:
    cfg = _load_cfg(args, _GEN_SUGAR)
    spec = make_dataset_spec(cfg)
    points = sample_toy2d(spec, args.n, cfg["run.seed"])
    states = quantize2d(points, spec)
    header = (
        f"dataset {spec.name} | bits {spec.bits_per_axis} | seed {cfg['run.seed']}"
        f" | config {config_digest(cfg)} | ratiodiff {__version__}"
    )
    write_points_csv(args.out, points, states, header_comment=header)
    print(f"wrote {args.n} points to {args.out}")
    return EXIT_OK


def run_verify(args) -> int:
    verdict = run_suite(args.level, negative_control=args.negative_control)
    for check in verdict["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']} ({check['seconds']:.2f}s): {check['detail']}")
    text = json.dumps(verdict, indent=2, sort_keys=True)
    print(text)
    if args.json_out:
        Path(args.json_out).write_text(text + "\n")
    return EXIT_OK if verdict["passed"] else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DomainError, CapacityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
