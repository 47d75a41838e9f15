"""streetsplat command line: gen-data, train, render, eval, ablate, grad-check."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from streetsplat.model import ABLATIONS, ConfigError, ModelConfig
from streetsplat.objective import LossConfig
from streetsplat.scene_io import SceneError, SyntheticSceneConfig
from streetsplat.train import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class PathsConfig:
    scenes: str = "data"
    out: str = "run"


SECTIONS = {
    "train": TrainConfig,
    "scene": SyntheticSceneConfig,
    "loss": LossConfig,
    "model": ModelConfig,
    "paths": PathsConfig,
}


def default_config() -> dict:
    return {name: asdict(cls()) for name, cls in SECTIONS.items()}


def _parse_value(text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, (tuple, list)):
        return tuple(int(x) for x in text.lower().replace("x", ",").split(","))
    return text


def merge_config(base: dict, update: dict, source: str) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in update.items():
        if section not in out:
            raise UsageError(f"{source}: unknown config section {section!r}")
        if not isinstance(values, dict):
            raise UsageError(f"{source}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in out[section]:
                raise UsageError(f"{source}: unknown config key {section}.{key}")
            out[section][key] = value
    return out


def build_configs(cfg: dict):
    try:
        return (TrainConfig.from_dict(cfg["train"]), SyntheticSceneConfig.from_dict(cfg["scene"]),
                LossConfig.from_dict(cfg["loss"]), ModelConfig.from_dict(cfg["model"]),
                PathsConfig(**cfg["paths"]))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _config_help() -> str:
    lines = ["config keys (JSON section.key, each also a --section.key flag):"]
    for section, values in default_config().items():
        for key, value in values.items():
            lines.append(f"  {section}.{key} = {json.dumps(value)}")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file with sections train/scene/loss/model/paths")
    for section, values in default_config().items():
        for key, value in values.items():
            p.add_argument(f"--{section}.{key}", dest=f"cfg:{section}.{key}", metavar="V", default=None,
                           help=f"(default: {json.dumps(value)})")


def resolve_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        cfg = merge_config(cfg, loaded, str(path))
    defaults = default_config()
    for dest, text in vars(args).items():
        if not dest.startswith("cfg:") or text is None:
            continue
        section, key = dest[4:].split(".", 1)
        try:
            cfg[section][key] = _parse_value(text, defaults[section][key])
        except ValueError as exc:
            raise UsageError(f"--{section}.{key}: {exc}") from exc
    return cfg


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="streetsplat", description=__doc__, epilog=_config_help(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic street scenes", epilog=_config_help(),
                       formatter_class=fmt)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--frames", type=int, default=None, help="frames per scene (default scene.n_frames)")
    p.add_argument("--density", type=float, default=None, help="LiDAR density (default scene.lidar_density)")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a model", epilog=_config_help(), formatter_class=fmt)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--scenes", help="scene root (default paths.scenes)")
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--log", help="JSONL training log (default <out>.log.jsonl)")
    _add_config_flags(p)

    p = sub.add_parser("render", help="render a frame from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--shift-x", type=float, default=None, help="lateral shift in meters")
    p.add_argument("--out", default="render_out")

    p = sub.add_parser("eval", help="evaluate a checkpoint under a protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--protocol", default="next_frame",
                   help="next_frame | skip_frame | view_shift:DX | depth_drop:FRAC")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--export", help="directory for rendered images and depth")

    p = sub.add_parser("ablate", help="train and evaluate several variants", epilog=_config_help(),
                       formatter_class=fmt)
    p.add_argument("--variants", default="full,no_matching")
    p.add_argument("--scenes", help="scene root (default paths.scenes)")
    p.add_argument("--protocol", default="next_frame")
    p.add_argument("--out", help="output directory (default paths.out)")
    _add_config_flags(p)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", default="32x48", help="pipeline check size HxW")
    return parser


def _nonempty(path: Path) -> bool:
    return path.exists() and (not path.is_dir() or any(path.iterdir()))


def cmd_gen_data(args):
    from streetsplat.scene_io import generate_synthetic_scene, save_scene

    cfg = resolve_config(args)
    out = Path(args.out)
    if _nonempty(out) and not args.force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    scene = dict(cfg["scene"])
    if args.frames is not None:
        scene["n_frames"] = args.frames
    if args.density is not None:
        scene["lidar_density"] = args.density
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.scenes):
        try:
            sc_cfg = SyntheticSceneConfig.from_dict({**scene, "seed": args.seed + i})
        except (ValueError, TypeError) as exc:
            raise UsageError(f"invalid scene config: {exc}") from exc
        path = save_scene(generate_synthetic_scene(sc_cfg), out)
        print(f"wrote {path}")


def _load_scene_root(path):
    from streetsplat.scene_io import load_scenes

    try:
        return load_scenes(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args):
    from streetsplat.checkpoint import save_checkpoint
    from streetsplat.train import train

    cfg = resolve_config(args)
    if args.ablation:
        cfg["train"]["ablation"] = args.ablation
    train_cfg, _, loss_cfg, model_cfg, paths = build_configs(cfg)
    if loss_cfg.perceptual != "off" or train_cfg.lpips:
        raise UsageError("the perceptual term needs a plug-in extractor and is not available from the CLI")
    scenes = _load_scene_root(args.scenes or paths.scenes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log = args.log or f"{out}.log.jsonl"
    result = train(scenes, train_cfg, model_cfg=model_cfg, loss_cfg=loss_cfg, log_path=log,
                   dump_dir=out.parent)
    save_checkpoint(result.checkpoint, out)
    last = result.log[-1]
    print(f"trained {train_cfg.total_steps} steps, final loss {last['total']:.6f}; wrote {out} and {log}")


def _load_model(path):
    from streetsplat.checkpoint import load_checkpoint
    from streetsplat.train import model_from_checkpoint

    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} not found")
    return model_from_checkpoint(load_checkpoint(path))


def cmd_render(args):
    from streetsplat.evaluate import _render
    from streetsplat.scene_io import load_scene, write_depth, write_image

    model = _load_model(args.ckpt)
    if not Path(args.scene).is_dir():
        raise UsageError(f"scene directory {args.scene} not found")
    scene = load_scene(args.scene)
    n = len(scene)
    if not 0 <= args.frame < n:
        raise UsageError(f"frame {args.frame} out of range [0, {n - 1}]")
    src = scene.frames[args.frame]
    next_image = scene.frames[args.frame + 1].image if args.frame + 1 < n else None
    if next_image is None and not model.flags["matching"]:
        raise UsageError(f"variant {model.ablation} needs frame {args.frame + 1}, which does not exist")
    if args.shift_x is None:
        if args.frame + 1 >= n:
            raise UsageError(f"frame {args.frame} has no next frame; pass --shift-x to render a shifted view")
        cam, tag = scene.frames[args.frame + 1].camera, "next"
    else:
        cam, tag = src.camera.shifted(args.shift_x), f"shift{args.shift_x:+g}"
    color, depth = _render(model, src, cam, next_image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{scene.id}.{args.frame:04d}.{tag}"
    write_image(f"{stem}.png", color)
    write_depth(f"{stem}.adgd", depth)
    print(f"wrote {stem}.png and {stem}.adgd")


def cmd_eval(args):
    from streetsplat.evaluate import Protocol, evaluate, write_metrics_csv, CSV_HEADER

    proto = Protocol.parse(args.protocol)
    model = _load_model(args.ckpt)
    rows = evaluate(model, _load_scene_root(args.scenes), proto, export_dir=args.export)
    if args.out:
        write_metrics_csv(rows, args.out)
        print(f"wrote {args.out}")
    else:
        print(",".join(CSV_HEADER))
        for r in rows:
            print(",".join(r.csv_fields()))


def cmd_ablate(args):
    from streetsplat.checkpoint import save_checkpoint
    from streetsplat.evaluate import MetricsRow, ablate, write_metrics_csv

    cfg = resolve_config(args)
    train_cfg, _, loss_cfg, model_cfg, paths = build_configs(cfg)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ABLATIONS:
            raise UsageError(f"unknown ablation variant {v!r}; choose from {sorted(ABLATIONS)}")
    scenes = _load_scene_root(args.scenes or paths.scenes)
    out = Path(args.out or paths.out)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for v in variants:
        rows, result = ablate(v, scenes, train_cfg, protocol=args.protocol, model_cfg=model_cfg,
                              loss_cfg=loss_cfg, log_path=out / f"{v}.log.jsonl")
        save_checkpoint(result.checkpoint, out / f"{v}.adgc")
        table += [MetricsRow(f"{v}/{r.scene}", r.protocol, r.psnr, r.ssim, r.lpips, r.reference) for r in rows]
        print(f"{v}: mean psnr {rows[-1].psnr:.3f} dB, ssim {rows[-1].ssim:.4f}")
    write_metrics_csv(table, out / "ablation.csv")
    print(f"wrote {out / 'ablation.csv'}")


def cmd_grad_check(args):
    from streetsplat.gradcheck import run_grad_check
    from streetsplat.precision import precision_bits

    if precision_bits() != 64:
        raise UsageError("grad-check needs 64-bit floats; set ADG_PRECISION=64")
    try:
        h, w = (int(x) for x in args.size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like HxW, got {args.size!r}") from None
    if h % 8 or w % 8 or h < 8 or w < 8:
        raise UsageError("--size dimensions must be positive multiples of 8")
    report = run_grad_check(args.seed, (h, w))
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_RUNTIME


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    from streetsplat.train import NonFiniteLossError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"streetsplat {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"streetsplat {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SceneError, ValueError, RuntimeError) as exc:
        print(f"streetsplat {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
