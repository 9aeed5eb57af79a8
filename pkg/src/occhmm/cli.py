"""Command-line front end: simulate, filter, track, eval, oracle.

Exit codes: 0 success, 2 configuration error, 3 malformed stream input,
4 evaluation error.  All commands are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as oio
from . import oracle as orc
from . import pipeline, simulate
from .config import PRESET_NAMES, ConfigError, RunConfig, load_run_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STREAM = 3
EXIT_EVAL = 4

CONFIG_ENV_VAR = "OCCHMM_CONFIG"


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="config file path "
                        f"(falls back to ${CONFIG_ENV_VAR})")
    parser.add_argument("--preset", choices=PRESET_NAMES, default=None,
                        help="named scenario preset, applied before the config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")


def _load_config(args: argparse.Namespace, extra: dict[str, object] | None = None) -> RunConfig:
    overrides: dict[str, object] = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    path = args.config
    if path is None and os.environ.get(CONFIG_ENV_VAR):
        path = Path(os.environ[CONFIG_ENV_VAR])
    return load_run_config(path, preset=args.preset, overrides=overrides)


def _truth_path(out: Path) -> Path:
    return out.parent / (out.stem + ".truth.csv")


def _cmd_simulate(args: argparse.Namespace) -> int:
    extra: dict[str, object] = {}
    if args.mode is not None:
        extra["scenario.mode"] = args.mode
    cfg = _load_config(args, extra)
    scenario = cfg.scenario_config()
    records, truth = simulate.generate(scenario)
    out = Path(args.out)
    oio.write_stream(
        out,
        records,
        mode=scenario.mode,
        n_cameras=scenario.n_cameras,
        patch_dim=scenario.patch_dim if scenario.mode == "patch" else None,
        include_truth=args.include_truth,
    )
    oio.write_truth_csv(args.truth_out or _truth_path(out), truth.s, truth.o)
    return EXIT_OK


def _cmd_filter(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    meta, records = oio.read_stream(args.stream)
    if meta.n_cameras != cfg.model.n_cameras:
        cfg = _load_config(args, {"model.n_cameras": meta.n_cameras})
    result = pipeline.filter_records(records, cfg)
    oio.write_posteriors_csv(args.out, result.rows, meta.n_cameras)
    if args.beliefs_out:
        oio.write_beliefs_csv(args.beliefs_out, result.beliefs)
    return EXIT_OK


def _cmd_track(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    scenario = cfg.scenario_config(mode="patch")
    scene = simulate.render_scene(scenario)
    controlled = not args.fixed_lambda_set
    result = pipeline.track_scenario(
        scene, cfg, controlled=controlled, fixed_lambda=args.fixed_lambda
    )
    out = Path(args.out)
    oio.write_track_csv(out, result.track_rows)
    oio.write_posteriors_csv(
        out.parent / (out.stem + ".posteriors.csv"), result.posterior_rows, scenario.n_cameras
    )
    oio.write_truth_csv(_truth_path(out), result.truth.s, result.truth.o)
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    rows = oio.read_posteriors_csv(args.traces)
    truth_s, truth_o = oio.read_truth_csv(args.truth)
    track_rows = oio.read_track_csv(args.track) if args.track else None
    report = pipeline.evaluate(
        rows,
        truth_s,
        truth_o,
        occlusion_threshold=args.occlusion_threshold,
        track_rows=track_rows,
        window=args.window,
    )
    text = pipeline.format_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_oracle(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    meta, records = oio.read_stream(args.stream)
    if meta.mode != "direct_z":
        raise oio.StreamFormatError("oracle requires a direct_z stream")
    if meta.n_cameras != cfg.model.n_cameras:
        cfg = _load_config(args, {"model.n_cameras": meta.n_cameras})
    observations = np.stack([rec.z for rec in records])
    try:
        marginals = orc.brute_force_marginals(observations, cfg.model_params())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = [
        oio.PosteriorRow(
            t=t + 1,
            p_change=float(marginals.p_change[t]),
            p_occlusion=tuple(float(v) for v in marginals.p_occlusion[t]),
            lambdas=tuple(0.0 for _ in range(meta.n_cameras)),
            alarm=0,
        )
        for t in range(observations.shape[0])
    ]
    oio.write_posteriors_csv(args.out, rows, meta.n_cameras)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occhmm",
        description="multi-camera occlusion / appearance-change detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic stream + ground truth")
    _add_config_args(p_sim)
    p_sim.add_argument("--mode", choices=("patch", "direct_z"), default=None)
    p_sim.add_argument("--out", type=Path, required=True, help="NDJSON stream output path")
    p_sim.add_argument("--truth-out", type=Path, default=None)
    p_sim.add_argument("--include-truth", action="store_true",
                       help="inline truth bits in the stream records")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fil = sub.add_parser("filter", help="run the posterior filter over a stream")
    _add_config_args(p_fil)
    p_fil.add_argument("--stream", type=Path, required=True)
    p_fil.add_argument("--out", type=Path, required=True, help="posterior CSV output path")
    p_fil.add_argument("--beliefs-out", type=Path, default=None,
                       help="also dump full belief vectors as CSV")
    p_fil.set_defaults(func=_cmd_filter)

    p_trk = sub.add_parser("track", help="run the tracking loop over a rendered scenario")
    _add_config_args(p_trk)
    group = p_trk.add_mutually_exclusive_group()
    group.add_argument("--fixed-lambda", type=float, default=0.85,
                       help="run with this constant learning rate")
    group.add_argument("--controlled", action="store_true",
                       help="drive learning rates from the filter posteriors (default)")
    p_trk.add_argument("--out", type=Path, required=True, help="track CSV output path")
    p_trk.set_defaults(func=_cmd_track)

    p_evl = sub.add_parser("eval", help="score posterior traces against ground truth")
    p_evl.add_argument("--traces", type=Path, required=True, help="posterior CSV")
    p_evl.add_argument("--truth", type=Path, required=True, help="ground-truth CSV")
    p_evl.add_argument("--track", type=Path, default=None, help="optional track CSV")
    p_evl.add_argument("--out", type=Path, default=None, help="report path (default stdout)")
    p_evl.add_argument("--window", type=int, default=2)
    p_evl.add_argument("--occlusion-threshold", type=float, default=0.5)
    p_evl.set_defaults(func=_cmd_eval)

    p_orc = sub.add_parser("oracle", help="exact marginals by brute-force enumeration")
    _add_config_args(p_orc)
    p_orc.add_argument("--stream", type=Path, required=True, help="direct_z stream")
    p_orc.add_argument("--out", type=Path, required=True, help="marginals CSV output path")
    p_orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "track":
        raw = argv if argv is not None else sys.argv[1:]
        args.fixed_lambda_set = any(
            a == "--fixed-lambda" or a.startswith("--fixed-lambda=") for a in raw
        )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"occhmm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except oio.StreamFormatError as exc:
        print(f"occhmm: stream error: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except pipeline.EvalError as exc:
        print(f"occhmm: evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
