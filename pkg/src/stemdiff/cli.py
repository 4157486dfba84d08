"""Command-line interface.

Subcommands: make-corpus, train-vae, train-ldm, separate, generate,
inpaint, evaluate. Exit codes: 0 success, 2 configuration error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, reporting
from .audio import load_stems, mix_stack, read_wav, write_corpus, write_wav
from .audio.corpus import ToyCorpusSpec
from .diffusion import SamplerRun, TrackMask
from .errors import CompatibilityError, ConfigError, FormatError, NumericError
from .pipeline.config import ExperimentConfig, load_config
from .pipeline.tasks import Pipeline, TaskResult
from .pipeline.training import train_ldm, train_vae

log = logging.getLogger("stemdiff")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--profile", choices=("paper", "toy"), default=None,
                   help="base profile (default: config file's, else toy)")


def _resolve_config(args, overrides: dict | None = None) -> ExperimentConfig:
    return load_config(path=args.config, profile=args.profile, overrides=overrides)


def _write_manifest(out_dir: Path, payload: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _save_result_wavs(out_dir: Path, result: TaskResult, sample_rate: int,
                      mixture: bool = False) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for s, name in enumerate(result.stems.stem_names):
        path = out_dir / f"{name}.wav"
        write_wav(path, result.stems.samples[s], sample_rate)
        files[name] = path.name
    if mixture and result.mixture is not None:
        path = out_dir / "mixture.wav"
        write_wav(path, result.mixture, sample_rate)
        files["mixture"] = path.name
    return files


def _progress(quiet: bool):
    if quiet:
        return None
    from tqdm import tqdm

    return tqdm


# -- subcommands ---------------------------------------------------------


def cmd_make_corpus(args) -> int:
    overrides = {}
    if args.n_examples is not None:
        overrides = {"corpus": {"n_examples": args.n_examples}}
    if args.seed is not None:
        overrides.setdefault("corpus", {})["seed"] = args.seed
    cfg = _resolve_config(args, overrides)
    if cfg.corpus is None:
        raise ConfigError("the resolved config has no synthetic corpus section")
    manifest = write_corpus(cfg.corpus, args.out)
    print(f"wrote {cfg.corpus.n_examples} examples under {args.out} ({manifest})")
    return 0


def cmd_train_vae(args) -> int:
    overrides = {"vae_training": {"epochs": args.epochs}} if args.epochs else None
    cfg = _resolve_config(args, overrides)
    path, trace = train_vae(cfg, args.out, progress=_progress(args.quiet))
    trace_dir = Path(args.out).parent
    reporting.write_csv(
        trace_dir / "vae_loss_trace.csv",
        ["epoch", "reconstruction_loss", "kl_loss"],
        [[r["epoch"], r["reconstruction_loss"], r["kl_loss"]] for r in trace],
    )
    reporting.loss_curve_figure(trace, trace_dir / "vae_loss_curve.png", "codec training")
    print(f"codec checkpoint: {path} (final recon {trace[-1]['reconstruction_loss']:.5f})")
    return 0


def cmd_train_ldm(args) -> int:
    overrides = {"ldm_training": {"epochs": args.epochs}} if args.epochs else None
    cfg = _resolve_config(args, overrides)
    path, trace = train_ldm(
        cfg,
        codec_checkpoint=args.codec,
        out_path=args.out,
        resume=args.resume,
        progress=_progress(args.quiet),
        checkpoint_every_epochs=args.checkpoint_every,
    )
    trace_dir = Path(args.out).parent
    reporting.write_csv(
        trace_dir / "ldm_loss_trace.csv",
        ["epoch", "loss"],
        [[r["epoch"], r["loss"]] for r in trace],
    )
    if trace:
        reporting.loss_curve_figure(trace, trace_dir / "ldm_loss_curve.png", "diffusion training")
        print(f"bundle checkpoint: {path} (final loss {trace[-1]['loss']:.5f})")
    return 0


def cmd_separate(args) -> int:
    pipeline = Pipeline.from_checkpoint(args.checkpoint)
    mixture, rate = read_wav(args.mixture)
    if rate != pipeline.config.mel.sample_rate:
        from .audio import resample

        mixture = resample(mixture, rate, pipeline.config.mel.sample_rate)
    run = SamplerRun(
        steps=args.steps or pipeline.config.inference.steps,
        eta=args.eta,
        seed=args.seed,
        w=args.w if args.w is not None else pipeline.config.inference.w_separate,
    )
    result = pipeline.separate(mixture, w=run.w, run=run)
    out_dir = Path(args.out)
    files = _save_result_wavs(out_dir, result, pipeline.config.mel.sample_rate)
    _write_manifest(out_dir, {
        "task": "separate",
        "checkpoint_fingerprint": pipeline.fingerprint,
        "seed": result.seed,
        "w": run.w,
        "steps": run.steps,
        "eta": run.eta,
        "clipped_samples": result.clipped_samples,
        "diagnostics": result.diagnostics,
        "files": files,
    })
    print(f"separated {len(files)} stems into {out_dir}")
    return 0


def cmd_generate(args) -> int:
    pipeline = Pipeline.from_checkpoint(args.checkpoint)
    run = SamplerRun(steps=args.steps or pipeline.config.inference.steps,
                     eta=args.eta, seed=args.seed, w=0.0)
    results = pipeline.generate_total(args.count, run=run)
    out_dir = Path(args.out)
    entries = []
    for i, result in enumerate(results):
        files = _save_result_wavs(out_dir / f"gen{i:04d}", result,
                                  pipeline.config.mel.sample_rate, mixture=True)
        entries.append({"seed": result.seed, "clipped_samples": result.clipped_samples,
                        "files": files})
    _write_manifest(out_dir, {
        "task": "generate",
        "checkpoint_fingerprint": pipeline.fingerprint,
        "w": 0.0,
        "steps": run.steps,
        "eta": run.eta,
        "examples": entries,
    })
    print(f"generated {len(results)} examples into {out_dir}")
    return 0


def cmd_inpaint(args) -> int:
    pipeline = Pipeline.from_checkpoint(args.checkpoint)
    cfg = pipeline.config
    given_names = [s.strip() for s in args.given.split(",") if s.strip()]
    mask = TrackMask.from_names(cfg.stem_names, given_names)
    stack = load_stems(
        args.stems,
        expected_stems=cfg.stem_names,
        sample_rate=cfg.mel.sample_rate,
        clip_samples=cfg.clip_samples,
    )
    run = SamplerRun(steps=args.steps or cfg.inference.steps,
                     eta=cfg.inference.eta_inpaint, seed=args.seed, w=0.0)
    result = pipeline.generate_partial(stack, mask, run=run, resample=args.resample)
    out_dir = Path(args.out)
    files = _save_result_wavs(out_dir, result, cfg.mel.sample_rate)
    _write_manifest(out_dir, {
        "task": "inpaint",
        "checkpoint_fingerprint": pipeline.fingerprint,
        "seed": result.seed,
        "steps": run.steps,
        "eta": run.eta,
        "given": given_names,
        "generated": [n for n in cfg.stem_names if n not in given_names],
        "clipped_samples": result.clipped_samples,
        "diagnostics": result.diagnostics,
        "files": files,
    })
    print(f"inpainted {len(cfg.stem_names) - len(given_names)} stems into {out_dir}")
    return 0


def _eval_examples(cfg: ExperimentConfig, count: int, seed: int):
    """Held-out examples: a fresh corpus seed, or the first stem dirs."""
    from .pipeline import data

    if cfg.corpus is not None:
        spec = replace(cfg.corpus, n_examples=count, seed=seed)
        return [data.example_stack(replace(cfg, corpus=spec), i) for i in range(count)]
    return [data.example_stack(cfg, i) for i in range(count)]


def cmd_evaluate(args) -> int:
    pipeline = Pipeline.from_checkpoint(args.checkpoint)
    cfg = pipeline.config
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    embedder = evaluation.ToyEmbedder(cfg.mel)
    eval_seed = args.eval_seed if args.eval_seed is not None else (
        cfg.corpus.seed + 1 if cfg.corpus else 0
    )
    examples = _eval_examples(cfg, args.eval_count, eval_seed)
    stem_names = cfg.stem_names
    manifest: dict = {
        "task": "evaluate",
        "checkpoint_fingerprint": pipeline.fingerprint,
        "embedder_id": embedder.identifier,
        "eval_count": len(examples),
        "eval_seed": eval_seed,
        "seed": args.seed,
        "inference_steps": cfg.inference.steps,
        "metrics": {},
        "note": "FAD uses the built-in toy embedder; values are not comparable "
                "to published scores from reference embedders",
    }

    # separation: mean per-stem mel MSE at several guidance weights
    weights = [0.0, 1.0, cfg.inference.w_separate]
    per_w: dict[float, np.ndarray] = {}
    for w in weights:
        scores = []
        for i, ref in enumerate(examples):
            mixture = mix_stack(ref)
            result = pipeline.separate(mixture, w=w, seed=args.seed + i)
            scores.append(evaluation.mel_mse(result.stems, ref, cfg.mel))
        per_w[w] = np.mean(scores, axis=0)
    rows = [[w] + list(np.round(per_w[w], 6)) + [round(float(per_w[w].mean()), 6)]
            for w in weights]
    reporting.write_csv(out_dir / "separation_mel_mse.csv",
                        ["w"] + [f"mse_{n}" for n in stem_names] + ["mse_mean"], rows)
    reporting.stem_bar_figure(
        {f"w={w:g}": list(per_w[w]) for w in weights},
        stem_names, out_dir / "separation_mel_mse.png",
        ylabel="Mel MSE", title="separation error by guidance weight",
    )
    manifest["metrics"]["separation_mel_mse"] = {
        f"w={w:g}": [float(v) for v in per_w[w]] for w in weights
    }

    # total generation FAD vs a white-noise baseline
    real_mixes = [mix_stack(ex) for ex in examples]
    gen = pipeline.generate_total(args.gen_count, seed=args.seed)
    gen_mixes = [r.mixture for r in gen]
    ref_stats = evaluation.embed_stats(real_mixes, embedder)
    fad_model = evaluation.frechet_distance(evaluation.embed_stats(gen_mixes, embedder), ref_stats)
    noise = evaluation.noise_mixtures_like(real_mixes, seed=args.seed)
    fad_noise = evaluation.frechet_distance(evaluation.embed_stats(noise, embedder), ref_stats)
    reporting.write_csv(out_dir / "total_generation_fad.csv",
                        ["source", "fad"],
                        [["model", round(fad_model, 6)], ["white_noise", round(fad_noise, 6)]])
    manifest["metrics"]["total_generation_fad"] = {"model": fad_model, "white_noise": fad_noise}

    # arrangement FAD over all nonempty proper subsets
    if not args.skip_arrangement:
        subset_examples = examples[: args.arrangement_count]
        labels, values = [], []
        for mask in evaluation.proper_given_subsets(stem_names):
            def gen_fn(example, m, i):
                return pipeline.generate_partial(example, m, seed=args.seed + 31 * i).stems

            fad = evaluation.arrangement_fad(gen_fn, subset_examples, mask, embedder)
            labels.append(evaluation.subset_label(mask, stem_names))
            values.append(round(float(fad), 6))
        reporting.write_csv(out_dir / "arrangement_fad.csv", ["given_subset", "fad"],
                            list(map(list, zip(labels, values))))
        reporting.subset_bar_figure(labels, values, out_dir / "arrangement_fad.png")
        manifest["metrics"]["arrangement_fad"] = dict(zip(labels, values))

    # one qualitative panel: reference mixture vs separated stems
    from .audio import mel_forward

    example = examples[0]
    sep = pipeline.separate(mix_stack(example),
                            w=cfg.inference.w_separate, seed=args.seed)
    mels = {"reference mixture": mel_forward(example, cfg.mel).values.sum(axis=0)}
    sep_mels = mel_forward(sep.stems, cfg.mel).values
    for s, name in enumerate(stem_names):
        mels[f"separated {name}"] = sep_mels[s]
    reporting.mel_grid_figure(mels, out_dir / "example_spectrograms.png")

    _write_manifest(out_dir, manifest)
    print(f"evaluation report written to {out_dir}")
    for w in weights:
        print(f"  mel-MSE (w={w:g}): {per_w[w].mean():.4f}")
    print(f"  total-generation FAD: {fad_model:.4f} (white-noise baseline {fad_noise:.4f})")
    return 0


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stemdiff",
        description="Multi-track latent diffusion: separate, generate, inpaint stems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="render the synthetic corpus to WAV files")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-examples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_make_corpus)

    p = sub.add_parser("train-vae", help="train the mel codec")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train_vae)

    p = sub.add_parser("train-ldm", help="train the latent diffusion model")
    _add_config_flags(p)
    p.add_argument("--codec", type=Path, required=True, help="trained codec checkpoint")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=0, help="epochs between saves")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train_ldm)

    p = sub.add_parser("separate", help="split a mixture WAV into stems")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mixture", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--w", type=float, default=None, help="CFG weight (default from config)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_separate)

    p = sub.add_parser("generate", help="unconditional multi-stem generation")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("inpaint", help="generate missing stems given others")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--stems", type=Path, required=True, help="song directory with given stems")
    p.add_argument("--given", type=str, required=True, help="comma-separated given stem names")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resample", type=int, default=None, help="harmonization iterations per step")
    p.set_defaults(fn=cmd_inpaint)

    p = sub.add_parser("evaluate", help="write the metric report (CSV + figures)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--eval-count", type=int, default=16)
    p.add_argument("--gen-count", type=int, default=16)
    p.add_argument("--arrangement-count", type=int, default=6)
    p.add_argument("--eval-seed", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-arrangement", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, CompatibilityError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
