"""Command-line entry point: simulate, train, enhance, eval, analyze, export-betas."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import analysis, degrade, dsp, metrics
from .generator import Generator, load_generator, restore
from .trainer import TrainConfig, TrainingData, load_manifests, run_training

log = logging.getLogger("speechrestore")


def resolve_checkpoint(path) -> Path:
    """Accept a generator file or a ``ckpt_{step}/`` directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "generator.pt"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def _model(args) -> Generator:
    if args.ckpt:
        return load_generator(resolve_checkpoint(args.ckpt))
    cfg = _train_config(args).generator
    log.warning("no --ckpt given; using an untrained generator")
    torch.manual_seed(args.seed)
    return Generator(cfg).eval()


def _train_config(args) -> TrainConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        cfg = TrainConfig.load(args.config).to_dict()
        cfg.update(overrides)
        return TrainConfig.from_dict(cfg)
    if getattr(args, "desk", False):
        return TrainConfig.desk(**overrides)
    return TrainConfig(**overrides)


# --- verbs -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    manifest = load_manifests(args.clean_manifest, args.noise_manifest, args.rir_manifest)
    policy = _train_config(args).policy
    noise = [dsp.read_wav(p) for p in manifest.noise_paths]
    rirs = [dsp.read_wav(p) for p in manifest.rir_paths]
    policy = TrainingData([], noise, rirs).policy(policy)  # drops kernels with empty pools
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs, recipes = [], []
    for i, clean_path in enumerate(manifest.clean_paths):
        recipe = degrade.sample_recipe(degrade.item_seed(args.seed, i), policy)
        degraded, recipe = degrade.apply_recipe(dsp.read_wav(clean_path), recipe, noise, rirs)
        target = out / f"{i:05d}_{Path(clean_path).stem}.wav"
        dsp.write_wav(target, degraded)
        pairs.append(f"{target.resolve()}\t{Path(clean_path).resolve()}")
        recipes.append(json.dumps({"degraded": str(target), "clean": str(clean_path), **recipe.to_dict()}))
    (out / "pairs.tsv").write_text("\n".join(pairs) + "\n")
    (out / "recipes.jsonl").write_text("\n".join(recipes) + "\n")
    print(f"wrote {len(pairs)} degraded files to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    manifest = load_manifests(args.clean_manifest, args.noise_manifest, args.rir_manifest)
    resume = Path(args.ckpt) if args.ckpt else None
    if resume is not None and not resume.is_dir():
        raise FileNotFoundError(f"--ckpt must be a ckpt_{{step}} directory to resume: {resume}")
    written = run_training(manifest, cfg, args.out_dir, resume_from=resume)
    print(f"wrote {len(written)} checkpoint(s); last: {written[-1] if written else 'none'}")
    return 0


def _enhance_targets(args):
    out = Path(args.out)
    pairs = []
    if args.in_path:
        src = Path(args.in_path)
        if src.is_dir():
            pairs += [(p, out / p.relative_to(src)) for p in sorted(src.rglob("*.wav"))]
        else:
            pairs.append((src, out if out.suffix.lower() == ".wav" else out / src.name))
    inputs = [Path(p) for p in args.inputs]
    if len(inputs) == 1 and not pairs and out.suffix.lower() == ".wav":
        pairs.append((inputs[0], out))
    else:
        pairs += [(p, out / p.name) for p in inputs]
    if not pairs:
        raise ValueError("no input WAV files")
    return pairs


def cmd_enhance(args) -> int:
    pairs = _enhance_targets(args)
    model = _model(args)
    inputs, targets = zip(*pairs)
    for src, dst in zip(inputs, targets):
        dsp.write_wav(dst, restore(dsp.read_wav(src), model).numpy())
        print(f"{src} -> {dst}")
    return 0


def cmd_eval(args) -> int:
    if args.identity:
        enhance = lambda w: w  # noqa: E731
    else:
        enhance = metrics.model_enhancer(_model(args))
    report = metrics.evaluate_corpus(enhance, args.manifest)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _masks(model, path) -> List[analysis.GradientAttribution]:
    w = dsp.read_wav(path)
    n = len(model.bottleneck.blocks[0].branches)
    return [analysis.influential_gradients(model, w, r) for r in range(n)]


def cmd_analyze(args) -> int:
    model = _model(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "gradients":
        rows = []
        for p in args.inputs:
            attrs = _masks(model, p)
            analysis.plot_attributions(attrs, out / f"{Path(p).stem}_attribution.png")
            np.savez(out / f"{Path(p).stem}_masks.npz", *[a.mask for a in attrs])
            rows += [{"path": p, "resolution": a.resolution, "retained_fraction": a.retained_fraction}
                     for a in attrs]
        analysis.write_rows(out / "attribution.tsv", rows)
    elif args.what == "iou":
        rows, means = [], []
        for p in args.inputs:
            _, mean = analysis.resolution_iou([a.mask for a in _masks(model, p)])
            rows.append({"path": p, "mean_iou": mean})
            means.append(mean)
        if args.compare_ckpt:
            other = load_generator(resolve_checkpoint(args.compare_ckpt))
            other_means = [analysis.resolution_iou([a.mask for a in _masks(other, p)])[1]
                           for p in args.inputs]
            for row, m in zip(rows, other_means):
                row["compare_mean_iou"] = m
            stat, p_value = analysis.wilcoxon_signed_rank(means, other_means)
            print(f"wilcoxon statistic={stat:.4f} p={p_value:.6g}")
        analysis.write_rows(out / "iou.tsv", rows)
    elif args.what == "glp-ratio":
        corpus = [dsp.read_wav(p) for p in args.inputs]
        reports = [analysis.glp_gradient_ratio(model, corpus, kind, seed=args.seed)
                   for kind in ("noise", "bandwidth")]
        analysis.write_rows(out / "glp_ratio.tsv", [r for rep in reports for r in rep.rows()])
        analysis.plot_ratio(reports, out / "glp_ratio.png")
    elif args.what == "betas":
        rows = analysis.export_betas(model)
        analysis.write_rows(out / "betas.tsv", [{"frequency_hz": f, "beta": b} for f, b in rows])
        analysis.plot_betas(rows, out / "betas.png")
    print(f"wrote {args.what} analysis to {out}")
    return 0


def cmd_export_betas(args) -> int:
    rows = analysis.export_betas(_model(args))
    lines = ["frequency_hz,beta"] + [f"{f:.4f},{b:.8f}" for f, b in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="speechrestore", description=__doc__)
    p.add_argument("--config", help="training config file (YAML)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", help="generator checkpoint file or ckpt_{step} directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def corpus_args(sp):
        sp.add_argument("--clean-manifest", required=True)
        sp.add_argument("--noise-manifest")
        sp.add_argument("--rir-manifest")

    sp = sub.add_parser("simulate", help="write degraded copies of a clean corpus")
    corpus_args(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="adversarial training; --ckpt resumes from a checkpoint dir")
    corpus_args(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--desk", action="store_true", help="small preset: 2 epochs, 50 items, batch 2")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("enhance", help="restore waveforms")
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--in", dest="in_path", help="input WAV file or directory tree")
    sp.add_argument("--out", required=True, help="output .wav (single input) or directory")
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("eval", help="LSD and SI-SNR over a degraded/clean pair manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--identity", action="store_true", help="score the degraded input itself")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="interpretability analyses")
    sp.add_argument("what", choices=["gradients", "iou", "glp-ratio", "betas"])
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--compare-ckpt", help="second checkpoint for the IoU Wilcoxon test")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("export-betas", help="learnable softplus betas per frequency (CSV)")
    sp.add_argument("--out", help="CSV path; stdout when omitted")
    sp.set_defaults(func=cmd_export_betas)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze" and args.what != "betas" and not args.inputs:
        print(f"error: analyze {args.what} needs input files", file=sys.stderr)
        return 2
    torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
