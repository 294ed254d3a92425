"""Command-line entry point.

Subcommands: toyset, synth, mask, train, infer, eval, tonemap. Exit codes:
0 success, 1 usage error, 2 data/format error, 3 numeric divergence. Flag
defaults match the training recipe (mu 5000, gamma 2.2, lambda1 100,
lambda2 0.005, lr 2e-4, betas 0.5/0.999, batch 1, size 256). A ``--config``
TOML file supplies training keys; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data as data_mod
from .data import DEFAULT_EXPOSURES, ExposureModel, build_exposure_stack, load_manifest
from .errors import ConfigurationError, DataError, DivergenceError, FormatError
from .image_io import HdrImage, LdrImage, load_hdr, load_ldr, save_hdr, save_ldr
from .masks import DEFAULT_TAU, ThresholdMaskProvider, load_mask_png, save_mask_png, threshold_mask
from .metrics import evaluate
from .networks import pad_to_multiple
from .tonemap import MuLawParams, mu_tonemap
from .training import TrainConfig, fit, load_generator

__all__ = ["run", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_seeds(text: str):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


def _parse_exposure_exponents(text: str):
    return tuple(2.0 ** float(tok) for tok in text.split(",") if tok)


def _parse_epochs(text: str):
    if "+" in text:
        const, decay = text.split("+", 1)
        return int(const), int(decay)
    return int(text), 0


def _echo(args, skip=("func",)) -> dict:
    return {k: str(v) for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _toml_escape(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _write_flat_toml(d: dict, path: Path) -> None:
    lines = [f"{k} = {_toml_escape(v)}" for k, v in sorted(d.items())]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_tonemap(args) -> int:
    hdr = load_hdr(args.input)
    compressed = np.clip(mu_tonemap(hdr, MuLawParams(args.mu)), 0.0, 1.0)
    save_ldr(LdrImage(compressed.astype(np.float32)), args.output)
    return 0


def _cmd_toyset(args) -> int:
    model = ExposureModel(gamma=args.gamma, exposure_times=_parse_exposure_exponents(args.exposures))
    manifest_path = data_mod.write_toy_dataset(
        _parse_seeds(args.seeds), args.size, args.out, model
    )
    original = manifest_path.read_text()
    manifest_path.write_text(f"# ldr2hdr toyset {json.dumps(_echo(args))}\n" + original)
    print(manifest_path)
    return 0


def _cmd_synth(args) -> int:
    model = ExposureModel(gamma=args.gamma, exposure_times=_parse_exposure_exponents(args.exposures))
    hdr_dir = Path(args.hdr_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in hdr_dir.iterdir() if p.suffix.lower() in (".pfm", ".hdr", ".rgbe"))
    if not paths:
        raise DataError(f"{hdr_dir}: no .pfm/.hdr files found")
    lines = [f"# ldr2hdr synth {json.dumps(_echo(args))}"]
    for src in paths:
        hdr = load_hdr(src)
        hdr_name = src.stem + ".pfm"
        save_hdr(hdr, out / hdr_name)
        for sample in build_exposure_stack(hdr, model, base_id=src.stem):
            ldr_name = sample.id + ".png"
            save_ldr(sample.ldr, out / ldr_name)
            lines.append(f"{ldr_name}\t{hdr_name}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(out / "manifest.txt")
    return 0


def _cmd_mask(args) -> int:
    if args.provider != "threshold":
        raise UsageError(f"unknown mask provider {args.provider!r} (available: threshold)")
    provider = ThresholdMaskProvider(tau=args.tau, dilate_radius=args.dilate)
    save_mask_png(provider(load_ldr(args.input)), args.output)
    print(json.dumps(_echo(args)))
    return 0


def _cmd_train(args) -> int:
    flat = TrainConfig().to_flat_dict()
    if args.config is not None:
        with open(args.config, "rb") as f:
            file_cfg = tomllib.load(f)
        unknown = set(file_cfg) - set(flat)
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {sorted(unknown)}")
        flat.update(file_cfg)
    overrides = {
        "seed": args.seed,
        "lr0": args.lr0,
        "batch_size": args.batch_size,
        "image_size": args.size,
        "variant": args.variant,
        "base_filters": args.base_filters,
        "depth": args.depth,
        "mu": args.mu,
        "gamma": args.gamma,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "mask_tau": args.tau,
        "checkpoint_every": args.checkpoint_every,
        "dropout_rate": args.dropout,
    }
    if args.epochs is not None:
        flat["epochs_const"], flat["epochs_decay"] = _parse_epochs(args.epochs)
    flat.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_flat_dict(flat)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_flat_toml(cfg.to_flat_dict(), out_dir / "config_echo.toml")
    final = fit(args.manifest, cfg, out_dir, resume_from=args.resume, max_steps=args.max_steps)
    print(final)
    return 0


def _resolve_mask(args, ldr):
    if args.mask is not None:
        return load_mask_png(args.mask, ldr.width, ldr.height)
    return threshold_mask(ldr, args.tau)


def _cmd_infer(args) -> int:
    import torch

    generator, meta = load_generator(args.ckpt)
    ldr = load_ldr(args.ldr)
    mask = _resolve_mask(args, ldr)

    if args.stochastic:
        torch.manual_seed(args.seed)
        generator.train()
    x = torch.from_numpy(ldr.pixels.copy()).permute(2, 0, 1).unsqueeze(0)
    a = torch.from_numpy(mask.values.astype(np.float32)).unsqueeze(0).unsqueeze(0)
    multiple = generator.config.size_multiple
    x_pad, (h, w) = pad_to_multiple(x, multiple)
    a_pad, _ = pad_to_multiple(a, multiple)
    a_pad = (a_pad > 0.5).to(x_pad.dtype)  # reflect padding must stay binary
    with torch.no_grad():
        out = generator(x_pad, a_pad)

    def to_image(t) -> HdrImage:
        arr = t.squeeze(0).permute(1, 2, 0).numpy()[:h, :w]
        return HdrImage(np.maximum(arr, 0.0))

    out_path = Path(args.out)
    save_hdr(to_image(out.h_tilde), out_path)
    if args.dump_stages:
        save_hdr(to_image(out.e_tilde), out_path.with_name(out_path.stem + "_irradiance.pfm"))
        save_hdr(to_image(out.m_tilde), out_path.with_name(out_path.stem + "_corrected.pfm"))
    if args.tonemap_preview is not None:
        t = np.clip(mu_tonemap(to_image(out.h_tilde)), 0.0, 1.0)
        save_ldr(LdrImage(t.astype(np.float32)), args.tonemap_preview)
    sidecar = {"command": "infer", "flags": _echo(args), "checkpoint_epoch": meta.get("epoch")}
    out_path.with_suffix(out_path.suffix + ".meta.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    return 0


def _cmd_eval(args) -> int:
    generator, meta = load_generator(args.ckpt)
    provider = ThresholdMaskProvider(tau=args.tau, dilate_radius=args.dilate)
    report = evaluate(
        load_manifest(args.manifest),
        generator,
        provider,
        mu_params=MuLawParams(args.mu),
        eval_size=args.size,
        metadata={"command": "eval", **_echo(args), "checkpoint_epoch": meta.get("epoch")},
    )
    report.to_csv(args.out)
    print(report.format_table())
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ldr2hdr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tonemap", help="range-compress an HDR file to an 8-bit PNG")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mu", type=float, default=5000.0, help="compression amount (default 5000)")
    p.set_defaults(func=_cmd_tonemap)

    p = sub.add_parser("toyset", help="generate a procedural toy dataset + manifest")
    p.add_argument("--seeds", default="0..7", help="inclusive range a..b or comma list")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--exposures", default="0.5,1,2,4", help="exposure exponents of 2")
    p.set_defaults(func=_cmd_toyset)

    p = sub.add_parser("synth", help="synthesize LDR exposure stacks from HDR files")
    p.add_argument("--hdr-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--exposures", default="0.5,1,2,4", help="exposure exponents of 2")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mask", help="compute an over-exposure mask PNG")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--provider", default="threshold")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--dilate", type=int, default=0)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("train", help="train the generator/discriminator pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat TOML config; explicit flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", help="constant+decay, e.g. 100+100")
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--variant", choices=("AttnR2", "R2", "Attn"))
    p.add_argument("--base-filters", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="reconstruct HDR from one LDR image")
    p.add_argument("--ldr", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output PFM path")
    p.add_argument("--mask", help="mask PNG from an external provider")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--dump-stages", action="store_true")
    p.add_argument("--tonemap-preview", help="also write an 8-bit preview PNG")
    p.add_argument("--stochastic", action="store_true", help="keep dropout active")
    p.add_argument("--seed", type=int, default=0, help="seed for --stochastic")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--mu", type=float, default=5000.0)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--dilate", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        if exc.last_checkpoint is not None:
            print(f"last checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        else:
            print("no checkpoint was written before the failure", file=sys.stderr)
        return 3
    except (DataError, FormatError, ConfigurationError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
