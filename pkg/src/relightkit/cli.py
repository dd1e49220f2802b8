"""Command-line entry points for the relighting pipeline.

Exit codes: 0 success, 1 usage error, 2 file or format error, 3 numeric
failure. Diagnostics go to standard error; ``--verbose`` echoes the
resolved options of the command as one JSON object on standard output
before any work happens.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import datasynth, envmap, lightstage, pfm, prnet, training
from .gradcheck import network_check, primitive_checks
from .tensor import NonFiniteError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through our exit codes
        raise UsageError(message)


def _shape(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise UsageError(f"expected HxW, got {text!r}") from None


def _fraction_pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(",")
        return float(lo), float(hi)
    except ValueError:
        raise UsageError(f"expected MIN,MAX, got {text!r}") from None


def _resolve_ckpt(path: str) -> str:
    """Accept a checkpoint directory or a training out_dir holding one."""
    if os.path.exists(os.path.join(path, "manifest.json")):
        return path
    nested = os.path.join(path, "ckpt_final")
    if os.path.exists(os.path.join(nested, "manifest.json")):
        return nested
    raise prnet.CheckpointError(f"no checkpoint found at {path}")


def _load_image(path: str) -> np.ndarray:
    img = pfm.read_pfm(path)
    if img.ndim != 3:
        raise UsageError(f"{path} is single channel; need an RGB image")
    return img


def _load_mask(path: str, shape: tuple[int, int]) -> np.ndarray:
    m = pfm.read_pfm(path)
    if m.ndim == 3:
        m = m[:, :, 0]
    if m.shape != shape:
        raise UsageError(f"mask {m.shape} does not match image {shape}")
    return np.clip(m, 0.0, 1.0)


def _normalize_peak(img: np.ndarray) -> np.ndarray:
    """Bring over-range inputs into the unit range the model was fed."""
    peak = float(img.max())
    if peak > 1.0:
        return (img * (1.0 / peak)).astype(np.float32)
    return img


def _prepare_light(env_path: str, light_shape: tuple[int, int]) -> np.ndarray:
    env = envmap.validate_envmap(pfm.read_pfm(env_path), name=env_path)
    if env.shape[:2] != tuple(light_shape):
        env = envmap.downsample_area(env, *light_shape)
    return env.astype(np.float32)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_stage(args) -> int:
    stage = lightstage.make_stage(args.leds, sigma_deg=args.sigma)
    stage.to_json(args.out)
    print(f"wrote {args.out} ({args.leds} directions, sigma {args.sigma} deg)")
    return EXIT_OK


def cmd_render_olat(args) -> int:
    stage = lightstage.LightStage.from_json(args.stage)
    scene = lightstage.SceneProxy()
    olat = lightstage.render_olat_synthetic(scene, stage, resolution=args.resolution)
    lightstage.save_olat(args.out, olat)
    print(f"wrote {olat.images.shape[0]} renders at {args.resolution}^2 to {args.out}")
    return EXIT_OK


def cmd_project_env(args) -> int:
    stage = lightstage.LightStage.from_json(args.stage)
    env = envmap.validate_envmap(pfm.read_pfm(args.env), name=args.env)
    weights = lightstage.project_env_to_leds(env, stage)
    with open(args.out, "w") as f:
        json.dump(
            {"n_leds": weights.shape[0], "weights": weights.tolist()},
            f,
            indent=1,
        )
    print(f"wrote {weights.shape[0]} LED weights to {args.out}")
    if args.render_back:
        h, w = args.back_shape
        back = lightstage.leds_to_envmap(weights, stage, height=h, width=w)
        pfm.write_pfm(args.render_back, back.astype(np.float32))
        print(f"wrote back projection {h}x{w} to {args.render_back}")
    return EXIT_OK


def cmd_synth_pairs(args) -> int:
    olat_sets = {}
    for path in args.olat:
        olat = lightstage.load_olat(path)
        olat_sets[os.path.basename(os.path.normpath(path))] = olat
    config = datasynth.SynthConfig(
        resolution=args.resolution,
        light_shape=args.light_shape,
        env_shape=args.env_shape,
        crop=datasynth.CropSpec(*args.crop),
    )
    envs = {}
    for path in args.env:
        envs[os.path.basename(path)] = envmap.validate_envmap(pfm.read_pfm(path), name=path)
    if args.synth_envs:
        envs.update(
            datasynth.synthetic_envmaps(
                args.synth_envs, *config.env_shape, seed=args.seed
            )
        )
    if not envs:
        raise UsageError("no environments: pass --env files or --synth-envs N")
    manifest = datasynth.build_dataset(
        args.out, olat_sets, envs, args.count, args.seed, config, split=args.split
    )
    print(f"wrote {manifest['count']} pairs to {args.out} (split {args.split})")
    return EXIT_OK


def _net_config(preset: str, manifest: dict) -> prnet.PRNetConfig:
    base = prnet.toy_config() if preset == "toy" else prnet.PRNetConfig()
    return replace(
        base,
        resolution=int(manifest["resolution"]),
        light_shape=tuple(manifest["light_shape"]),
    )


def cmd_train(args) -> int:
    manifest = datasynth.load_manifest(args.data)
    config = _net_config(args.preset, manifest)
    tcfg = training.TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        lambda_light=args.lambda_light,
        lambda_self=args.lambda_self,
        batch_size=args.batch_size,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    resume = _resolve_ckpt(args.resume) if args.resume else None
    params, history = training.fit(manifest, config, tcfg, out_dir=args.out, resume_from=resume)
    if history:
        print(
            f"{len(history)} steps: loss {history[0].loss_total:.4f} -> "
            f"{history[-1].loss_total:.4f}; checkpoint in {args.out}/ckpt_final"
        )
    else:
        print(f"checkpoint already at {args.steps} steps; nothing to do")
    return EXIT_OK


def cmd_relight(args) -> int:
    params, config, _meta, _opt = prnet.load_checkpoint(_resolve_ckpt(args.ckpt))
    img = _normalize_peak(_load_image(args.input))
    if img.shape[:2] != (config.resolution, config.resolution):
        raise UsageError(
            f"input is {img.shape[0]}x{img.shape[1]}, model wants {config.resolution}^2"
        )
    light = _prepare_light(args.light, config.light_shape)
    out = prnet.forward(params, config, img, light)
    pfm.write_pfm(args.out, out.image)
    print(f"wrote {args.out}")
    if args.png:
        pfm.export_png(args.png, out.image)
    if args.composite:
        if not args.mask:
            raise UsageError("--composite needs --mask")
        mask = _load_mask(args.mask, out.image.shape[:2])
        background = envmap.resize_bilinear(light, *out.image.shape[:2])
        comp = out.image * mask[:, :, None] + background * (1.0 - mask[:, :, None])
        pfm.write_pfm(args.composite, comp.astype(np.float32))
        print(f"wrote {args.composite}")
    return EXIT_OK


def cmd_retarget(args) -> int:
    params, config, _meta, _opt = prnet.load_checkpoint(_resolve_ckpt(args.ckpt))
    img = _normalize_peak(_load_image(args.input))
    if img.shape[:2] != (config.resolution, config.resolution):
        raise UsageError(
            f"input is {img.shape[0]}x{img.shape[1]}, model wants {config.resolution}^2"
        )
    out = prnet.self_reconstruct(params, config, img, args.theta)
    pfm.write_pfm(args.out, out.image)
    print(f"wrote {args.out} (light rotated {args.theta} deg)")
    if args.out_light:
        pfm.write_pfm(args.out_light, np.maximum(out.light, 0.0))
    if args.png:
        pfm.export_png(args.png, out.image)
    return EXIT_OK


def cmd_estimate_light(args) -> int:
    params, config, _meta, _opt = prnet.load_checkpoint(_resolve_ckpt(args.ckpt))
    img = _normalize_peak(_load_image(args.input))
    if img.shape[:2] != (config.resolution, config.resolution):
        raise UsageError(
            f"input is {img.shape[0]}x{img.shape[1]}, model wants {config.resolution}^2"
        )
    out = prnet.self_reconstruct(params, config, img, 0.0)
    light = np.maximum(out.light, 0.0)  # raw head values may dip below zero
    pfm.write_pfm(args.out, light)
    print(f"wrote estimated light {light.shape[0]}x{light.shape[1]} to {args.out}")
    if args.png:
        peak = float(light.max())
        disp = light / peak if peak > 0 else light
        pfm.export_png(args.png, disp)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, config, _meta, _opt = prnet.load_checkpoint(_resolve_ckpt(args.ckpt))
    report = training.evaluate(args.data, params, config)
    print(report.to_table())
    if args.json:
        with open(args.json, "w") as f:
            f.write(report.to_json())
        print(f"wrote {args.json}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = primitive_checks(seed=args.seed)
    if not args.quick:
        reports.append(network_check(seed=args.seed))
    for r in reports:
        print(r)
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(reports)} checks failed", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(reports)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="relightkit", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0, help="stream seed (default 0)")
        p.add_argument("--verbose", action="store_true", help="echo resolved options as JSON")
        return p

    p = add("gen-stage", cmd_gen_stage, "write a light stage geometry file")
    p.add_argument("--leds", type=int, default=304)
    p.add_argument("--sigma", type=float, default=8.0, help="LED lobe width, degrees")
    p.add_argument("--out", required=True)

    p = add("render-olat", cmd_render_olat, "render a synthetic one-light-at-a-time set")
    p.add_argument("--stage", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--out", required=True)

    p = add("project-env", cmd_project_env, "project an environment map onto stage LEDs")
    p.add_argument("--env", required=True, help="lat-long PFM")
    p.add_argument("--stage", required=True)
    p.add_argument("--out", required=True, help="JSON weights file")
    p.add_argument("--render-back", default=None, help="also write the LED back projection PFM")
    p.add_argument("--back-shape", type=_shape, default=(16, 32))

    p = add("synth-pairs", cmd_synth_pairs, "synthesize relighting training pairs")
    p.add_argument("--olat", action="append", required=True, help="OLAT directory (repeatable)")
    p.add_argument("--env", action="append", default=[], help="environment PFM (repeatable)")
    p.add_argument("--synth-envs", type=int, default=0, help="also generate N random environments")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--light-shape", type=_shape, default=(8, 16))
    p.add_argument("--env-shape", type=_shape, default=(64, 128))
    p.add_argument(
        "--crop",
        type=_fraction_pair,
        default=(0.28, 0.57),
        help="crop side range as fractions of the source, MIN,MAX",
    )
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the relighting network on a pair dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("toy", "full"), default="toy")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-light", type=float, default=0.8)
    p.add_argument("--lambda-self", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = add("relight", cmd_relight, "re-render a portrait under a new environment")
    p.add_argument("--input", required=True, help="portrait PFM")
    p.add_argument("--mask", default=None, help="foreground mask PFM")
    p.add_argument("--light", required=True, help="target environment PFM (any lat-long size)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--composite", default=None, help="also write foreground-over-light composite")
    p.add_argument("--png", default=None, help="also write a gamma-encoded preview")

    p = add("retarget", cmd_retarget, "rotate a portrait's own estimated light and re-render")
    p.add_argument("--input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--theta", type=float, default=0.0, help="longitude rotation, degrees")
    p.add_argument("--out", required=True)
    p.add_argument("--out-light", default=None, help="also write the rotated light PFM")
    p.add_argument("--png", default=None)

    p = add("estimate-light", cmd_estimate_light, "write the light estimated from a portrait")
    p.add_argument("--input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None, help="peak-normalized preview")

    p = add("eval", cmd_eval, "score a checkpoint on a pair dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--json", default=None, help="also write the report as JSON")

    p = add("gradcheck", cmd_gradcheck, "finite-difference checks of gradients")
    p.add_argument("--quick", action="store_true", help="primitives only, skip the full network")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        resolved = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
        resolved = {"command": resolved.pop("cmd"), **resolved}
        print(json.dumps(resolved, default=str))
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (pfm.PfmError, prnet.CheckpointError, datasynth.ManifestError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
