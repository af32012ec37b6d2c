"""Command-line interface: train, sample, eval, ablate."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import cross_scan
from .checkpoint import CheckpointError
from .data import DatasetError
from .diffusion import SamplerConfig
from .evaluation import evaluate_fid
from .training import (ConfigError, RunConfig, Trainer, parse_config_file,
                       resolve_dataset, run_training, save_grid, save_png)

EXIT_CONFIG = 2
EXIT_IO = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default under $SSMDIFF_OUT or ./runs)")
    p.add_argument("--sampler", choices=["ddpm", "ddim"])
    p.add_argument("--ddim-steps", type=int, dest="ddim_steps")
    p.add_argument("--eta", type=float)
    p.add_argument("--regen", choices=["on", "off"])
    p.add_argument("--resolution", type=int)
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--dataset")
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--base-width", type=int, dest="base_width")
    p.add_argument("--state-dim", type=int, dest="state_dim")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--dtype", choices=["float32", "float64"])


def build_config(args: argparse.Namespace, run_name: str) -> RunConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key in ("seed", "sampler", "ddim_steps", "eta", "resolution", "force",
                "dataset", "total_steps", "base_width", "state_dim", "batch_size",
                "dtype"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "regen", None) is not None:
        values["regen"] = args.regen == "on"
    if getattr(args, "out", None):
        values["out_dir"] = args.out
    elif "out_dir" not in values:
        root = os.environ.get("SSMDIFF_OUT", "runs")
        values["out_dir"] = str(Path(root) / run_name)
    return RunConfig.from_dict(values)


def cmd_train(args) -> int:
    config = build_config(args, "train")
    summary = run_training(config, resume_from=args.resume)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_sample(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    cfg = trainer.config
    sampler = SamplerConfig(
        kind=args.sampler or cfg.sampler,
        ddim_steps=args.ddim_steps or cfg.ddim_steps,
        eta=cfg.eta if args.eta is None else args.eta,
        variance_mode=cfg.variance_mode)
    seed = cfg.seed if args.seed is None else args.seed
    regen = cfg.regen if args.regen is None else args.regen == "on"
    out = Path(args.out or os.environ.get("SSMDIFF_OUT", "runs")) / "samples"
    out.mkdir(parents=True, exist_ok=True)
    images = trainer.sample_images(args.n, seed=seed, sampler=sampler, regen=regen)
    for i, img in enumerate(images):
        save_png(img, out / f"sample_{i:04d}.png")
    if args.n > 0:
        save_grid(images, out / "grid.png")
    print(f"wrote {args.n} samples to {out}")
    return 0


def cmd_eval(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    cfg = trainer.config
    dataset_spec = args.dataset or cfg.dataset
    reference = resolve_dataset(dataset_spec, cfg.resolution, cfg.channels)
    seed = cfg.seed if args.seed is None else args.seed
    if args.self_test:
        fid = evaluate_fid(reference.items, reference.items)
        sampler_desc = "bypass"
    else:
        sampler = SamplerConfig(
            kind=args.sampler or cfg.sampler,
            ddim_steps=args.ddim_steps or cfg.ddim_steps,
            eta=cfg.eta if args.eta is None else args.eta,
            variance_mode=cfg.variance_mode)
        regen = cfg.regen if args.regen is None else args.regen == "on"
        samples = trainer.sample_images(args.n_samples, seed=seed, sampler=sampler,
                                        regen=regen)
        fid = evaluate_fid(samples, reference.items)
        sampler_desc = sampler.kind
    report = {
        "fid": fid,
        "seed": seed,
        "sampler": sampler_desc,
        "n_samples": 0 if args.self_test else args.n_samples,
        "dataset": dataset_spec,
        "config_hash": f"{hash(json.dumps(cfg.to_dict(), sort_keys=True)) & 0xFFFFFFFF:08x}",
        "checkpoint_step": trainer.step,
    }
    out = Path(args.out or os.environ.get("SSMDIFF_OUT", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "fid_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "fid_report.txt").write_text(
        "\n".join(f"{k}: {v}" for k, v in sorted(report.items())) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    base = build_config(args, "ablate")
    out = Path(base.out_dir)
    results = {}
    for label, regen in (("regen_on", True), ("regen_off", False)):
        cfg = dataclasses.replace(base, regen=regen, out_dir=str(out / label))
        cross_scan.reset_perm_draw_count()
        summary = run_training(cfg)
        train_perm_draws = cross_scan.perm_draw_count()
        trainer = Trainer.from_checkpoint(summary["checkpoint"])
        samples = trainer.sample_images(args.n_samples, seed=base.seed + 999,
                                        regen=regen)
        reference = resolve_dataset(cfg.dataset, cfg.resolution, cfg.channels)
        results[label] = {
            "fid": evaluate_fid(samples, reference.items),
            "final_loss_mean": summary["final_loss_mean"],
            "perm_draws_during_training": train_perm_draws,
        }
    results["fid_difference_on_minus_off"] = (
        results["regen_on"]["fid"] - results["regen_off"]["fid"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation_report.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    lines = [f"{'':<12}{'FID':>12}  {'perm draws':>10}"]
    for label in ("regen_on", "regen_off"):
        r = results[label]
        lines.append(f"{label:<12}{r['fid']:>12.4f}  {r['perm_draws_during_training']:>10}")
    lines.append(f"difference (on - off): {results['fid_difference_on_minus_off']:.4f}")
    (out / "ablation_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmdiff",
                                     description="SSM-UNet denoising diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample images from a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("-n", type=int, default=16)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="compute FID against a dataset")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("--n-samples", type=int, default=64)
    p.add_argument("--self-test", action="store_true",
                   help="score the reference set against itself (bypass sampling)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="paired regeneration on/off training run")
    _add_common(p)
    p.add_argument("--n-samples", type=int, default=64)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, DatasetError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
