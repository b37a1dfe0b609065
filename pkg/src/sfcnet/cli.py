"""Command-line interface.

Exit codes: 0 success, 1 input/usage error, 2 internal error. Subcommands
that write report files also render a matplotlib figure next to the text
output unless --no-plot is given.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import engine, network, toydata
from .config import DEFAULT_SEED, PROFILE_NAMES, profile, read_config
from .errors import ConfigError, InputError
from .fusion import correlate
from .geometry import (
    equally_spaced_sample,
    format_points,
    morton_order,
    normalize_unit_cube,
    read_cloud,
)
from .sampling import fps, set_abstraction
from .zorder import zorder_sample


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _add_model_args(sub, default_profile):
    sub.add_argument(
        "--profile", choices=PROFILE_NAMES, default=default_profile,
        help=f"built-in configuration (default: {default_profile})",
    )
    sub.add_argument("--config", help="config file; overrides profile fields")
    sub.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help=f"parameter/init seed (default: {DEFAULT_SEED})")
    sub.add_argument(
        "--ablate", action="append", choices=("zs", "cs", "am"), default=[],
        help="disable a block (repeatable): zs, cs, am",
    )


def _resolve_config(args):
    cfg = profile(args.profile)
    if args.config:
        cfg = read_config(args.config, base=cfg)
    overrides = {f"use_{name}": False for name in args.ablate}
    if getattr(args, "radius", None) is not None:
        overrides["radius"] = args.radius
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _maybe_plot(args):
    return args.out and args.plot


def build_parser():
    parser = _Parser(prog="sfcnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-fps", parents=[], help="farthest-point sample a cloud")
    p.add_argument("--in", dest="input", required=True, help="input cloud (.xyz text)")
    p.add_argument("--count", type=int, required=True, help="number of points to keep")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("sample-zorder", help="curve-order a cloud and sample evenly")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--depth", type=int, default=10, help="bits per axis (default 10)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True,
                   help="render a PNG next to --out")

    p = sub.add_parser("embed", help="run the local embedding block")
    p.add_argument("--in", dest="input", required=True)
    _add_model_args(p, "paper")
    p.add_argument("--radius", type=float, help="override the grouping radius")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("classify", help="class logits for one cloud")
    p.add_argument("--in", dest="input", required=True)
    _add_model_args(p, "paper")
    p.add_argument("--checkpoint", help="load parameters before inference")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("segment", help="per-point part logits for one cloud")
    p.add_argument("--in", dest="input", required=True)
    _add_model_args(p, "paper")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("train-toy", help="overfit the built-in toy dataset")
    _add_model_args(p, "micro")
    p.add_argument("--task", choices=("classify", "segment"), default="classify")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--clouds", type=int, default=8,
                   help="clouds per class (classify) or total clouds (segment)")
    p.add_argument("--out", help="loss history csv (default: stdout)")
    p.add_argument("--checkpoint-out", dest="checkpoint_out",
                   help="save trained parameters here")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _add_model_args(p, "micro")

    p = sub.add_parser("heatmap", help="per-center response counts")
    p.add_argument("--in", dest="input", required=True)
    _add_model_args(p, "paper")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("params", help="trainable parameter count")
    _add_model_args(p, "paper")

    p = sub.add_parser("inspect-fusion", help="dump correlation tensor shapes and cells")
    p.add_argument("--in", dest="input", required=True)
    _add_model_args(p, "paper")
    p.add_argument("--radius", type=float, help="override the grouping radius")
    p.add_argument("--out", help="output file (default: stdout)")

    return parser


def _cmd_sample_fps(args):
    cloud = read_cloud(args.input)
    idx = fps(cloud, args.count)
    normals = cloud.normals[idx] if cloud.normals is not None else None
    _emit(format_points(cloud.positions[idx], normals), args.out)
    return 0


def _cmd_sample_zorder(args):
    cloud = read_cloud(args.input)
    norm = normalize_unit_cube(cloud)
    order = morton_order(norm.positions, args.depth)
    idx = equally_spaced_sample(order, args.count)
    normals = cloud.normals[idx] if cloud.normals is not None else None
    _emit(format_points(cloud.positions[idx], normals), args.out)
    if _maybe_plot(args):
        from . import plots

        plots.render_curve_order(
            norm.positions[idx], plots.figure_path(args.out), title="curve-order sample"
        )
    return 0


def _build_model(args):
    cfg = _resolve_config(args)
    model = network.build(cfg, args.seed)
    if getattr(args, "checkpoint", None):
        model.load(args.checkpoint)
    return model


def _cmd_embed(args):
    model = _build_model(args)
    cloud = read_cloud(args.input)
    sub = model._prepare(cloud)
    cfg = model.config
    embedded = set_abstraction(
        sub, cfg.n_regions, cfg.radius, cfg.group_size,
        model.embed_layers, use_normals=cfg.use_normals, depth=cfg.morton_depth,
    )
    rows = np.concatenate([embedded.positions, embedded.features.data], axis=1)
    header = f"center x y z + {cfg.feature_dim} feature channels (normalized frame)"
    text = "\n".join(
        " ".join(f"{v:.17g}" for v in row) for row in rows
    )
    _emit(f"# {header}\n{text}\n", args.out)
    return 0


def _cmd_classify(args):
    model = _build_model(args)
    cloud = read_cloud(args.input)
    logits = model.forward_classify(cloud).data[0]
    lines = [f"{i} {v:.17g}" for i, v in enumerate(logits)]
    lines.append(f"predicted {int(np.argmax(logits))}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_segment(args):
    model = _build_model(args)
    cloud = read_cloud(args.input)
    logits = model.forward_segment(cloud).data
    parts = np.argmax(logits, axis=1)
    _emit(
        format_points(cloud.positions, extra=parts, header="x y z part"), args.out
    )
    return 0


def _cmd_train_toy(args):
    cfg = _resolve_config(args)
    model = network.build(cfg, args.seed)
    if args.task == "classify":
        dataset = toydata.classification_dataset(
            args.clouds, cfg.n_input_points, seed=args.seed
        )
    else:
        dataset = toydata.segmentation_dataset(
            args.clouds, cfg.n_input_points, seed=args.seed
        )
    history = network.train(
        model, dataset, args.epochs, seed=args.seed, task=args.task
    )
    body = "epoch,loss,accuracy\n" + "".join(
        f"{e},{l:.12g},{a:.12g}\n" for e, l, a in history
    )
    _emit(body, args.out)
    if args.checkpoint_out:
        model.save(args.checkpoint_out)
    if _maybe_plot(args):
        from . import plots

        plots.render_loss_history(history, plots.figure_path(args.out))
    print(f"final accuracy: {history[-1][2]:.4f}", file=sys.stderr)
    return 0


def _cmd_gradcheck(args):
    cfg = _resolve_config(args)
    model = network.build(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    cloud = toydata.uniform_cloud(cfg.n_input_points, args.seed)
    label = [int(rng.integers(cfg.n_classes))]

    def loss():
        return engine.cross_entropy(model.forward_classify(cloud, training=True), label)

    err = engine.max_relative_error(loss, model.task_parameters("classify"))
    print(f"max relative error: {err:.3e}")
    return 0 if err < 1e-3 else 1


def _cmd_heatmap(args):
    model = _build_model(args)
    cloud = read_cloud(args.input)
    positions, counts = model.heatmap_responses(cloud)
    _emit(
        format_points(positions, extra=counts, header="x y z response (normalized frame)"),
        args.out,
    )
    if _maybe_plot(args):
        from . import plots

        plots.render_scatter(
            positions, counts, plots.figure_path(args.out), title="channel-win responses"
        )
    return 0


def _cmd_params(args):
    cfg = _resolve_config(args)
    model = network.build(cfg, args.seed)
    print(network.param_count(model))
    return 0


def _cmd_inspect_fusion(args):
    model = _build_model(args)
    cfg = model.config
    cloud = read_cloud(args.input)
    sub = model._prepare(cloud)
    embedded = set_abstraction(
        sub, cfg.n_regions, cfg.radius, cfg.group_size,
        model.embed_layers, use_normals=cfg.use_normals, depth=cfg.morton_depth,
    )
    skeleton = zorder_sample(embedded, cfg.n_skeleton, cfg.morton_depth)
    p_structure, p_position = correlate(embedded, skeleton)
    lines = [
        f"embedded: {len(embedded)} centers, feature width {cfg.feature_dim}",
        f"skeleton: {len(skeleton)} points",
        "P_structure: {}x{}x{} ({} values)".format(*p_structure.shape, p_structure.grid.data.size),
        "P_position: {}x{}x{} ({} values)".format(*p_position.shape, p_position.grid.data.size),
        "P_structure[0,0,:6] = "
        + " ".join(f"{v:.6g}" for v in p_structure.grid.data[0, 0, :6]),
        "P_position[0,0,:] = "
        + " ".join(f"{v:.6g}" for v in p_position.grid.data[0, 0, :]),
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


_COMMANDS = {
    "sample-fps": _cmd_sample_fps,
    "sample-zorder": _cmd_sample_zorder,
    "embed": _cmd_embed,
    "classify": _cmd_classify,
    "segment": _cmd_segment,
    "train-toy": _cmd_train_toy,
    "gradcheck": _cmd_gradcheck,
    "heatmap": _cmd_heatmap,
    "params": _cmd_params,
    "inspect-fusion": _cmd_inspect_fusion,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (InputError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is an internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
