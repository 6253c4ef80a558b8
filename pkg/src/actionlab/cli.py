"""Command-line entry point: train, landscape, gradsim, tune-gains, reproduce, plot.

Every command takes the experiment config file, resolves it (defaults
expanded, desk-scale applied), snapshots it next to its outputs, and is
rerunnable: given --force it overwrites its run directory and produces
byte-identical results for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .actuation import ControlKind, default_gain_grid, tune_gains
from .config import (
    APPENDIX_C_DESK_BATCH,
    ActuationSpec,
    ExperimentConfig,
    build_setup,
    load_config,
    parse_config,
    run_dir_for,
    write_snapshot,
)
from .envs import make_env
from .errors import ConfigError, OutputExistsError, WorkbenchError
from .gradsim import RECORD_COLUMNS, GradSimConfig, analyze_run
from .landscape import compute_grid, save_grid
from .ppo import CURVE_COLUMNS, Trainer, TrainResult
from .report import (
    PlotSpec,
    load_checkpoint,
    load_checkpoint_series,
    render_heatmap,
    render_learning_curves,
    write_csv,
)

FIGURE_IDS = ("fig1", "fig2", "fig3", "fig6", "fig7")


def _parse_seed_set(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in text.split(",") if part.strip() != "")


def _prepare_run_dir(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise OutputExistsError(f"run directory {path} exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def train_one(cfg: ExperimentConfig, spec: ActuationSpec, seed: int, force: bool) -> tuple[Path, TrainResult]:
    """Train a single (mode, seed) run into its run directory."""
    run_dir = run_dir_for(cfg, spec, seed)
    _prepare_run_dir(run_dir, force)
    write_snapshot(cfg, run_dir, extra={"mode": spec.label, "seed": seed})
    setup = build_setup(cfg, spec)
    trainer = Trainer(setup, cfg.ppo, seed, out_dir=run_dir)
    result = trainer.run()
    write_csv(run_dir / "curves.csv", CURVE_COLUMNS, [p.row() for p in result.curve])
    return run_dir, result


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seeds = _parse_seed_set(args.seeds) if args.seeds else cfg.seeds
    exp_dir = Path(cfg.output_root) / cfg.experiment
    combined_rows = []
    for spec in cfg.actuation:
        for seed in seeds:
            run_dir, result = train_one(cfg, spec, seed, args.force)
            print(f"trained {spec.label} seed {seed} -> {run_dir}")
            for point in result.curve:
                combined_rows.append([spec.label, *point.row()])
    combined = write_csv(exp_dir / "curves_all.csv", ["label", *CURVE_COLUMNS], combined_rows)
    for x_axis, name in (("env_step", "learning_curves.svg"), ("gradient_step", "learning_curves_gradsteps.svg")):
        render_learning_curves(
            PlotSpec(
                kind="linecurve",
                input_csv=combined,
                output_path=exp_dir / name,
                columns={"x": x_axis, "y": "mean_return", "group": "label"},
                title=f"{cfg.experiment}: mean return +- std over seeds",
            )
        )
    print(f"combined curves -> {combined}")
    print(f"plots -> {exp_dir / 'learning_curves.svg'}")
    return 0


def _config_for_run(run_dir: Path, config_path: str | None) -> ExperimentConfig:
    if config_path:
        return load_config(config_path)
    snapshot = run_dir / "config.snapshot"
    if not snapshot.exists():
        raise ConfigError(f"{run_dir} has no config.snapshot; pass --config explicitly")
    raw = json.loads(snapshot.read_text(encoding="utf-8"))
    raw.pop("run", None)
    return parse_config(raw)


def _pick_checkpoint(run_dir: Path, which: str):
    series = load_checkpoint_series(run_dir)
    if which == "final":
        return series[-1]
    step = int(which)
    for ckpt in series:
        if ckpt.env_step == step:
            return ckpt
    raise ConfigError(
        f"no checkpoint at env_step {step}; available: {[c.env_step for c in series]}"
    )


def cmd_landscape(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _config_for_run(run_dir, args.config)
    ckpt = _pick_checkpoint(run_dir, args.checkpoint)
    grid = compute_grid(ckpt, cfg.landscape, workers=args.workers or cfg.workers)
    out_dir = run_dir / "landscape" / ckpt.checkpoint_id
    csv_path, meta_path = save_grid(grid, out_dir)
    outputs = [csv_path, meta_path]
    heatmaps = [
        ("reward", "reward.svg", False),
        ("total_loss", "neg_total_loss.svg", True),
        ("policy_loss", "neg_policy_loss.svg", True),
        ("value_loss", "neg_value_loss.svg", True),
    ]
    for value_col, name, negate in heatmaps:
        title = f"{ckpt.checkpoint_id}: {'negated ' if negate else ''}{value_col}"
        outputs.append(
            render_heatmap(
                PlotSpec(
                    kind="heatmap",
                    input_csv=csv_path,
                    output_path=out_dir / name,
                    columns={"value": value_col},
                    negate=negate,
                    title=title,
                )
            )
        )
    for path in outputs:
        print(f"landscape -> {path}")
    return 0


def cmd_gradsim(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _config_for_run(run_dir, args.config)
    series = load_checkpoint_series(run_dir)
    records = analyze_run(series, cfg.gradsim, seed=args.seed, workers=args.workers or cfg.workers)
    out_dir = run_dir / "gradsim"
    records_path = write_csv(out_dir / "records.csv", RECORD_COLUMNS, [r.row() for r in records])
    # Plot-shaped copy: one labeled series per loss term.
    plot_rows = [[r.term, 0, r.env_step, r.mean_cos] for r in records]
    plot_csv = write_csv(out_dir / "plotdata.csv", ["label", "seed", "env_step", "mean_cos"], plot_rows)
    svg = render_learning_curves(
        PlotSpec(
            kind="linecurve",
            input_csv=plot_csv,
            output_path=out_dir / "cosine.svg",
            columns={"x": "env_step", "y": "mean_cos", "group": "label"},
            title="gradient estimate quality (cosine to oracle)",
        )
    )
    print(f"gradsim -> {records_path}")
    print(f"gradsim -> {svg}")
    return 0


def cmd_tune_gains(args) -> int:
    cfg = load_config(args.config)
    kinds = [args.mode] if args.mode else sorted(
        {s.kind for s in cfg.actuation if s.kind in ("velocity", "position")}
    )
    if not kinds:
        raise ConfigError("no velocity/position actuation in the config and no --mode given")
    exp_dir = Path(cfg.output_root) / cfg.experiment
    exp_dir.mkdir(parents=True, exist_ok=True)
    def env_factory():
        return make_env(cfg.environment, cfg.env_overrides)

    probe = env_factory()
    horizon = args.horizon or probe.spec.horizon
    for kind_name in kinds:
        kind = ControlKind(kind_name)
        grid = default_gain_grid(kind, probe.dof)
        best, table = tune_gains(env_factory, kind, grid, horizon, args.seed, episodes=args.episodes)
        rows = []
        for gains, err in table:
            rows.append([
                gains.kd_vc[0] if gains.kd_vc else "",
                gains.kp_pc[0] if gains.kp_pc else "",
                gains.kd_pc[0] if gains.kd_pc else "",
                err,
            ])
        table_path = write_csv(exp_dir / f"gains_{kind_name}.csv", ["kd_vc", "kp_pc", "kd_pc", "mean_abs_error"], rows)
        selected = {
            "kind": kind_name,
            "kd_vc": list(best.kd_vc) if best.kd_vc else None,
            "kp_pc": list(best.kp_pc) if best.kp_pc else None,
            "kd_pc": list(best.kd_pc) if best.kd_pc else None,
        }
        json_path = exp_dir / f"gains_{kind_name}.json"
        json_path.write_text(json.dumps(selected, sort_keys=True, indent=1), encoding="utf-8")
        print(f"tuned {kind_name}: {selected} -> {json_path}")
        print(f"error table -> {table_path}")
    return 0


# -- reproduce ---------------------------------------------------------------

_VC_GAINS = {"kd_vc": 8.0}
_PC_GAINS = {"kp_pc": 10.0, "kd_pc": 1.0}


def _reproduce_config(figure: str) -> dict:
    base_modes = [
        {"kind": "torque"},
        {"kind": "velocity", "gains": _VC_GAINS},
        {"kind": "position", "gains": _PC_GAINS},
    ]
    if figure in ("fig1", "fig2", "fig3"):
        return {
            "experiment": f"reproduce_{figure}",
            "environment": "pendulum",
            "actuation": base_modes,
            "seeds": [0, 1, 2],
            "desk_scale": True,
        }
    if figure == "fig6":
        return {
            "experiment": "reproduce_fig6",
            "environment": "joint_reacher",
            "actuation": base_modes,
            "seeds": [0, 1],
            "desk_scale": True,
            "ppo": {"total_env_steps": 60_000},
        }
    if figure == "fig7":
        return {
            "experiment": "reproduce_fig7",
            "environment": "joint_reacher",
            "actuation": base_modes + [{"kind": "ideal_position"}],
            "seeds": [0, 1, 2],
            "desk_scale": True,
            "ppo": {"total_env_steps": 60_000},
        }
    raise ConfigError(f"unknown figure id '{figure}'; valid: {list(FIGURE_IDS)}")


def _merge_override(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_override(merged[key], value)
        else:
            merged[key] = value
    return merged


def cmd_reproduce(args) -> int:
    figure = args.figure
    if figure not in FIGURE_IDS:
        print(f"unknown figure id '{figure}'; valid ids: {', '.join(FIGURE_IDS)}", file=sys.stderr)
        return ConfigError.exit_code
    raw = _reproduce_config(figure)
    if args.config:
        override = json.loads(Path(args.config).read_text(encoding="utf-8"))
        raw = _merge_override(raw, override)
    cfg = parse_config(raw)
    exp_dir = Path(cfg.output_root) / cfg.experiment

    produced: list[tuple[str, Path]] = []
    combined_rows = []
    run_dirs: dict[str, list[Path]] = {}
    for spec in cfg.actuation:
        run_dirs[spec.label] = []
        for seed in cfg.seeds:
            run_dir, result = train_one(cfg, spec, seed, args.force)
            run_dirs[spec.label].append(run_dir)
            for point in result.curve:
                combined_rows.append([spec.label, *point.row()])
    combined = write_csv(exp_dir / "curves_all.csv", ["label", *CURVE_COLUMNS], combined_rows)
    x_axis = "gradient_step" if figure == "fig6" else "env_step"
    curves_svg = render_learning_curves(
        PlotSpec(
            kind="linecurve",
            input_csv=combined,
            output_path=exp_dir / "learning_curves.svg",
            columns={"x": x_axis, "y": "mean_return", "group": "label"},
            title=f"{cfg.experiment} ({x_axis})",
        )
    )
    produced.append((f"learning curves vs {x_axis}", curves_svg))

    if figure == "fig6":
        # Accurate-gradient variants next to the standard runs.
        for spec in cfg.actuation:
            big = ActuationSpec(spec.kind, f"{spec.label}_bigbatch", spec.gains, spec.bounds)
            big_ppo = cfg.ppo.to_dict()
            big_ppo["gradient_batch_override"] = args.appendix_c_batch
            big_cfg_raw = _merge_override(raw, {"ppo": big_ppo, "actuation": [big.to_dict()]})
            big_cfg = parse_config(big_cfg_raw)
            for seed in cfg.seeds:
                run_dir, result = train_one(big_cfg, big, seed, args.force)
                for point in result.curve:
                    combined_rows.append([big.label, *point.row()])
        combined = write_csv(exp_dir / "curves_all.csv", ["label", *CURVE_COLUMNS], combined_rows)
        curves_svg = render_learning_curves(
            PlotSpec(
                kind="linecurve",
                input_csv=combined,
                output_path=exp_dir / "learning_curves.svg",
                columns={"x": "gradient_step", "y": "mean_return", "group": "label"},
                title=f"{cfg.experiment} (gradient steps)",
            )
        )
        produced.append(("accurate vs default gradient curves", curves_svg))

    if figure == "fig2":
        for spec in cfg.actuation:
            run_dir = run_dirs[spec.label][0]
            ckpt = _pick_checkpoint(run_dir, "final")
            grid = compute_grid(ckpt, cfg.landscape, workers=cfg.workers)
            out_dir = run_dir / "landscape" / ckpt.checkpoint_id
            csv_path, _ = save_grid(grid, out_dir)
            for value_col, name, negate in (
                ("reward", "reward.svg", False),
                ("total_loss", "neg_total_loss.svg", True),
            ):
                svg = render_heatmap(
                    PlotSpec(
                        kind="heatmap",
                        input_csv=csv_path,
                        output_path=out_dir / name,
                        columns={"value": value_col},
                        negate=negate,
                        title=f"{spec.label}: {'negated ' if negate else ''}{value_col}",
                    )
                )
                produced.append((f"{spec.label} surface ({value_col})", svg))

    if figure == "fig3":
        for spec in cfg.actuation:
            for run_dir in run_dirs[spec.label]:
                series = load_checkpoint_series(run_dir)
                records = analyze_run(series, cfg.gradsim, seed=0, workers=cfg.workers)
                out_dir = run_dir / "gradsim"
                records_path = write_csv(out_dir / "records.csv", RECORD_COLUMNS, [r.row() for r in records])
                produced.append((f"{spec.label} gradient quality records", records_path))

    mapping = {
        "fig1": "learning curves per action space",
        "fig2": "reward and negated-loss surfaces",
        "fig3": "gradient-quality line data per term",
        "fig6": "accurate-gradient training curves (x = gradient steps)",
        "fig7": "joint-space task curves incl. ideal position control",
    }
    print(f"{figure}: {mapping[figure]}")
    for label, path in produced:
        print(f"  {label} -> {path}")
    return 0


def cmd_plot(args) -> int:
    columns = {}
    if args.value:
        columns["value"] = args.value
    if args.x:
        columns["x"] = args.x
    if args.y:
        columns["y"] = args.y
    if args.group:
        columns["group"] = args.group
    spec = PlotSpec(
        kind=args.kind,
        input_csv=Path(args.input),
        output_path=Path(args.output),
        columns=columns,
        color_map=args.colormap,
        negate=args.negate,
        title=args.title,
    )
    path = render_heatmap(spec) if args.kind == "heatmap" else render_learning_curves(spec)
    print(f"plot -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionlab",
        description="Train PPO under different action representations and analyze the optimization.",
    )
    parser.add_argument("--version", action="version", version=f"actionlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train every (mode, seed) combination in the config")
    p_train.add_argument("--config", required=True, help="experiment config JSON")
    p_train.add_argument("--seeds", help="override seed set, e.g. '0..9' or '0,3,7'")
    p_train.add_argument("--force", action="store_true", help="overwrite existing run directories")
    p_train.set_defaults(fn=cmd_train)

    p_land = sub.add_parser("landscape", help="optimization-surface grid for one checkpoint")
    p_land.add_argument("--run-dir", required=True)
    p_land.add_argument("--checkpoint", default="final", help="env_step of the checkpoint, or 'final'")
    p_land.add_argument("--config", help="config JSON (default: the run's snapshot)")
    p_land.add_argument("--workers", type=int, default=0, help="parallel cell workers")
    p_land.set_defaults(fn=cmd_landscape)

    p_grad = sub.add_parser("gradsim", help="gradient-quality analysis over a run's checkpoints")
    p_grad.add_argument("--run-dir", required=True)
    p_grad.add_argument("--config", help="config JSON (default: the run's snapshot)")
    p_grad.add_argument("--workers", type=int, default=0)
    p_grad.add_argument("--seed", type=int, default=0, help="analysis seed")
    p_grad.set_defaults(fn=cmd_gradsim)

    p_tune = sub.add_parser("tune-gains", help="grid-search controller gains by tracking error")
    p_tune.add_argument("--config", required=True)
    p_tune.add_argument("--mode", choices=["velocity", "position"])
    p_tune.add_argument("--horizon", type=int, default=0, help="steps per tuning episode (default: env horizon)")
    p_tune.add_argument("--episodes", type=int, default=5)
    p_tune.add_argument("--seed", type=int, default=0)
    p_tune.set_defaults(fn=cmd_tune_gains)

    p_rep = sub.add_parser("reproduce", help="canned desk-scale analysis pipelines")
    p_rep.add_argument("figure", help=f"one of: {', '.join(FIGURE_IDS)}")
    p_rep.add_argument("--config", help="JSON overrides merged over the canned config")
    p_rep.add_argument("--force", action="store_true")
    p_rep.add_argument(
        "--appendix-c-batch", type=int, default=APPENDIX_C_DESK_BATCH,
        help="batch size for the accurate-gradient runs of fig6",
    )
    p_rep.set_defaults(fn=cmd_reproduce)

    p_plot = sub.add_parser("plot", help="render a CSV into an SVG")
    p_plot.add_argument("--kind", required=True, choices=["heatmap", "linecurve"])
    p_plot.add_argument("--input", required=True)
    p_plot.add_argument("--output", required=True)
    p_plot.add_argument("--value", help="heatmap value column")
    p_plot.add_argument("--x", help="linecurve x column")
    p_plot.add_argument("--y", help="linecurve y column")
    p_plot.add_argument("--group", help="linecurve series column")
    p_plot.add_argument("--colormap", default="viridis")
    p_plot.add_argument("--negate", action="store_true")
    p_plot.add_argument("--title", default="")
    p_plot.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except WorkbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
