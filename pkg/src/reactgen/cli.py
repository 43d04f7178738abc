"""Command-line surface tying the pipeline stages together.

Exit codes: 0 success, 2 invalid arguments/config, 3 missing input,
4 output exists (pass --force to overwrite), 5 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_EXISTS = 4
EXIT_RUNTIME = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_MISSING)
        try:
            return RunConfig.load(path)
        except ConfigError as exc:
            raise CliError(f"invalid config: {exc}", EXIT_USAGE) from exc
    return RunConfig.toy_profile().with_env_overrides()


def _check_out(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise CliError(f"{path} already exists; pass --force to overwrite",
                       EXIT_EXISTS)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"{what} not found: {path} (run the earlier pipeline "
                       "stage or fix the path)", EXIT_MISSING)
    return path


def _cmd_synth_data(args) -> int:
    from .dataset import synth_corpus
    from .skeleton import skeleton_for
    cfg = _load_config(args)
    out = Path(args.out)
    if (out / "manifest.jsonl").exists() and not args.force:
        raise CliError(f"{out / 'manifest.jsonl'} already exists; pass --force",
                       EXIT_EXISTS)
    entries = synth_corpus(
        n_pairs=args.pairs or cfg.data.n_pairs,
        n_categories=args.categories or cfg.data.n_categories,
        seed=args.seed if args.seed is not None else cfg.seed,
        out_dir=out, skeleton=skeleton_for(cfg.data.n_joints),
        video_frames=cfg.data.video_frames, video_dim=cfg.data.video_dim,
        min_frames=cfg.data.min_frames, max_frames=cfg.data.max_frames)
    n_train = sum(e.split == "train" for e in entries)
    print(f"wrote {len(entries)} pairs ({n_train} train / "
          f"{len(entries) - n_train} test) under {out}")
    return EXIT_OK


def _cmd_split(args) -> int:
    from .dataset import load_manifest, save_manifest, split_manifest
    manifest = _require(args.manifest, "manifest")
    out = _check_out(args.out, args.force)
    entries = split_manifest(load_manifest(manifest), seed=args.seed)
    save_manifest(out, entries)
    print(f"re-split {len(entries)} entries -> {out}")
    return EXIT_OK


def _cmd_train_tokenizer(args) -> int:
    from .pipeline import train_tokenizer
    cfg = _load_config(args)
    data = _require(args.data, "corpus directory")
    _require(Path(data) / "manifest.jsonl", "manifest")
    out = _check_out(args.out, args.force)
    history = train_tokenizer(cfg, data, out, max_steps=args.steps, log=print)
    print(f"tokenizer saved to {out} (final recon {history[-1]:.5f})")
    return EXIT_OK


def _cmd_train_base(args) -> int:
    from .pipeline import train_base
    cfg = _load_config(args)
    data = _require(args.data, "corpus directory")
    tok = _require(args.tokenizer, "tokenizer checkpoint")
    out = _check_out(args.out, args.force)
    history = train_base(cfg, data, tok, out, max_steps=args.steps, log=print)
    print(f"base transformer saved to {out} (final loss {history[-1]:.4f})")
    return EXIT_OK


def _cmd_train_residual(args) -> int:
    from .pipeline import train_residual
    cfg = _load_config(args)
    data = _require(args.data, "corpus directory")
    tok = _require(args.tokenizer, "tokenizer checkpoint")
    out = _check_out(args.out, args.force)
    history = train_residual(cfg, data, tok, out, max_steps=args.steps, log=print)
    print(f"residual transformer saved to {out} (final loss {history[-1]:.4f})")
    return EXIT_OK


def _cmd_generate(args) -> int:
    from .motion_tokenizer import load_tokenizer
    from .pipeline import generate_reaction
    from .pose_codec import NormStats, save_motion
    from .reaction_model import load_reaction_model
    from .video_features import load_features
    feats = load_features(_require(args.features, "feature file"))
    tokenizer, mean, std = load_tokenizer(_require(args.tokenizer,
                                                   "tokenizer checkpoint"))
    base = load_reaction_model(_require(args.base, "base checkpoint"))
    residual = (load_reaction_model(_require(args.residual, "residual checkpoint"))
                if args.residual else None)
    out = _check_out(args.out, args.force)
    motion = generate_reaction(
        feats.local, args.length, tokenizer, NormStats(mean, std), base,
        residual, iterations=args.steps, temperature=args.temperature,
        seed=args.seed)
    save_motion(out, motion)
    print(f"wrote {motion.n_frames}x{motion.dim} motion to {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .eval_metrics import reports_to_json, reports_to_table
    from .pipeline import evaluate
    cfg = _load_config(args)
    data = _require(args.data, "corpus directory")
    tok = _require(args.tokenizer, "tokenizer checkpoint")
    base = _require(args.base, "base checkpoint")
    residual = _require(args.residual, "residual checkpoint") if args.residual else None
    out = _check_out(args.out, args.force)
    reports = evaluate(cfg, data, tok, base, residual,
                       repetitions=args.repetitions)
    out.write_text(reports_to_json(reports))
    print(reports_to_table(reports))
    print(f"report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reactgen",
        description="Video-conditioned human reaction synthesis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, force=True):
        if config:
            p.add_argument("--config", help="RunConfig JSON (default: toy profile)")
        if force:
            p.add_argument("--force", action="store_true",
                           help="overwrite existing outputs")

    p = sub.add_parser("synth-data", help="generate the synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int)
    p.add_argument("--categories", type=int)
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("split", help="re-split a manifest 4:1 per subcategory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p, config=False)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train-tokenizer", help="train the motion tokenizer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="override the step count")
    common(p)
    p.set_defaults(func=_cmd_train_tokenizer)

    p = sub.add_parser("train-base", help="train the masked base transformer")
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    common(p)
    p.set_defaults(func=_cmd_train_base)

    p = sub.add_parser("train-residual", help="train the residual transformer")
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    common(p)
    p.set_defaults(func=_cmd_train_residual)

    p = sub.add_parser("generate", help="generate a reaction for one feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--length", type=int, required=True,
                   help="target motion length in frames (<= 200)")
    p.add_argument("--steps", type=int, default=10, help="decoding iterations")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--residual")
    common(p, config=False)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="run the repetition metric protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--residual")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", required=True, help="report JSON path")
    common(p)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
