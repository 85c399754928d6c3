"""Command-line front end: synth, train, eval, gradcheck, ablate.

Configuration resolves in three layers: dataclass defaults, then a JSON
config file, then explicit flags. Exactly two seeds exist: the data seed
drives generation, shuffling, and subsampling; the model seed drives
initialization and dropout. Every command writes a run manifest into its
output directory before doing any real work, and a finished run is fully
reproducible from that manifest. Exit codes: 0 success, 1 invalid input
or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
from pathlib import Path

from . import __version__
from .data import (
    Dataset,
    SynthSpec,
    filter_one_sentence,
    generate_synthetic_with_manifest,
    load_jsonl,
    save_jsonl,
    vocab_fingerprint,
)
from .embedding import load_pretrained_words
from .errors import DataError, SegError, ValidationError
from .evaluation import build_eval_report, score_decisions, write_pr_csv, write_report_json
from .model import (
    VARIANTS,
    ModelConfig,
    load_checkpoint,
    run_gradcheck,
    save_checkpoint,
)
from .training import TrainConfig, save_history_csv, train

ABLATION_ORDER = (
    "seg",
    "seg_wo_ent",
    "seg_wo_gate",
    "seg_wo_gate_wo_attn",
    "seg_wo_all",
    "seg_attn_wo_gate",
    "seg_attn",
    "seg_stack",
)


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on bad arguments, per our contract."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _seg_threads() -> int:
    raw = os.environ.get("SEG_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"SEG_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValidationError(f"SEG_THREADS must be at least 1, got {value}")
    return value


def _write_manifest(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "git_describe": _git_describe(),
        "seg_threads": _seg_threads(),
    }
    manifest.update(payload)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _load_config_file(path: str | None, cls, what: str):
    """Apply a JSON object file over the dataclass defaults."""
    base = cls()
    if path is None:
        return base
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what} config file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{what} config file {p} is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{what} config file {p} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValidationError(
            f"{what} config file {p} has unknown keys: {', '.join(unknown)}; "
            f"known keys: {', '.join(sorted(known))}"
        )
    return dataclasses.replace(base, **obj)


def _apply_flags(config, pairs):
    """Overlay (field, value) pairs where the value is not None."""
    updates = {field: value for field, value in pairs if value is not None}
    return dataclasses.replace(config, **updates) if updates else config


_MODEL_FLAG_FIELDS = (
    ("word_dim", int), ("pos_dim", int), ("conv_channels", int), ("embed_dim", int),
    ("kernel_width", int), ("pos_clip", int), ("gate_smoothing", float),
    ("l2_coef", float), ("dropout_p", float), ("cls_hidden", int),
)
_TRAIN_FLAG_FIELDS = (
    ("lr0", float), ("decay_every", int), ("decay_factor", float), ("max_steps", int),
    ("batch_size", int), ("eval_every", int), ("clip_norm", float),
)
_SYNTH_FLAG_FIELDS = (
    ("num_relations", int), ("num_entities", int), ("vocab_size", int), ("num_bags", int),
    ("one_sentence_fraction", float), ("noise_rate", float), ("max_len", int),
)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model-config", metavar="JSON", help="model config file")
    for name, typ in _MODEL_FLAG_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--scalar-gate", action="store_const", const=True, default=None,
                   help="collapse each gate vector to its mean")
    p.add_argument("--model-seed", type=int, default=None,
                   help="seed for initialization and dropout")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-config", metavar="JSON", help="train config file")
    for name, typ in _TRAIN_FLAG_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    p.add_argument("--data-seed", type=int, default=None,
                   help="seed for shuffling and subsampling")


def _resolve_model_config(args, num_relations: int) -> ModelConfig:
    config = _load_config_file(args.model_config, ModelConfig, "model")
    pairs = [(name, getattr(args, name)) for name, _ in _MODEL_FLAG_FIELDS]
    pairs += [("variant", args.variant), ("scalar_gate", args.scalar_gate),
              ("seed", args.model_seed)]
    config = _apply_flags(config, pairs)
    if config.num_relations != num_relations:
        config = dataclasses.replace(config, num_relations=num_relations)
    return config


def _resolve_train_config(args, out_dir: Path) -> TrainConfig:
    config = _load_config_file(args.train_config, TrainConfig, "train")
    pairs = [(name, getattr(args, name)) for name, _ in _TRAIN_FLAG_FIELDS]
    pairs += [("seed", args.data_seed)]
    config = _apply_flags(config, pairs)
    if config.checkpoint_dir is None:
        config = dataclasses.replace(config, checkpoint_dir=str(out_dir / "checkpoints"))
    return config


def _dataset_meta(ds: Dataset) -> dict:
    return {
        "relation_names": ds.relation_names,
        "word_vocab": ds.word_vocab,
        "entity_vocab": ds.entity_vocab,
        "fingerprint": vocab_fingerprint(ds.relation_names, ds.word_vocab, ds.entity_vocab),
    }


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = _load_config_file(args.spec_file, SynthSpec, "synth")
    pairs = [(name, getattr(args, name)) for name, _ in _SYNTH_FLAG_FIELDS]
    pairs += [("seed", args.data_seed)]
    spec = _apply_flags(spec, pairs)

    out_dir = Path(args.out_dir)
    _write_manifest(out_dir, "synth", {
        "resolved": {"synth_spec": dataclasses.asdict(spec)},
        "seeds": {"data_seed": spec.seed},
        "outputs": {
            "train": str(out_dir / "train.jsonl"),
            "test": str(out_dir / "test.jsonl"),
            "sidecar": str(out_dir / "synth_manifest.json"),
        },
    })
    train_ds, test_ds, sidecar = generate_synthetic_with_manifest(spec)
    save_jsonl(train_ds, out_dir / "train.jsonl")
    save_jsonl(test_ds, out_dir / "test.jsonl")
    (out_dir / "synth_manifest.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {len(train_ds.bags)} train bags and {len(test_ds.bags)} test bags "
          f"to {out_dir}")
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    start_step = 0
    resume_params = None
    if args.resume:
        resume_params, model_config, manifest = load_checkpoint(args.resume)
        start_step = int(manifest.get("step", 0))
        meta = manifest["dataset"]
        try:
            train_ds = load_jsonl(
                args.train_data,
                relation_names=meta["relation_names"],
                word_vocab=meta["word_vocab"],
                entity_vocab=meta["entity_vocab"],
                max_len=args.max_len,
                bag_cap=args.bag_cap,
            )
        except DataError as e:
            standalone = load_jsonl(args.train_data, max_len=args.max_len,
                                    bag_cap=args.bag_cap)
            got = vocab_fingerprint(standalone.relation_names, standalone.word_vocab,
                                    standalone.entity_vocab)
            raise ValidationError(
                f"training data does not match the checkpoint vocabulary "
                f"(checkpoint fingerprint {meta['fingerprint']}, standalone data "
                f"fingerprint {got}): {e}"
            ) from None
    else:
        train_ds = load_jsonl(args.train_data, max_len=args.max_len, bag_cap=args.bag_cap)
        model_config = _resolve_model_config(args, len(train_ds.relation_names))

    train_config = _resolve_train_config(args, out_dir)
    if args.resume and start_step >= train_config.max_steps:
        raise ValidationError(
            f"checkpoint is already at step {start_step}; raise --max-steps to continue"
        )

    eval_ds = None
    if args.eval_data:
        eval_ds = load_jsonl(
            args.eval_data,
            relation_names=train_ds.relation_names,
            word_vocab=train_ds.word_vocab,
            entity_vocab=train_ds.entity_vocab,
            max_len=args.max_len,
            bag_cap=args.bag_cap,
        )

    _write_manifest(out_dir, "train", {
        "inputs": {"train_data": args.train_data, "eval_data": args.eval_data,
                   "resume": args.resume},
        "config_files": {"model": args.model_config, "train": args.train_config},
        "resolved": {
            "model_config": dataclasses.asdict(model_config),
            "train_config": dataclasses.asdict(train_config),
        },
        "seeds": {"data_seed": train_config.seed, "model_seed": model_config.seed},
        "dataset_fingerprint": vocab_fingerprint(
            train_ds.relation_names, train_ds.word_vocab, train_ds.entity_vocab
        ),
        "outputs": {
            "checkpoint": str(out_dir / "ckpt_final.json"),
            "history": str(out_dir / "history.csv"),
        },
    })

    if args.pretrained_embeddings and not args.resume:
        from .model import SegParams

        resume_params = SegParams(model_config, len(train_ds.word_vocab))
        vectors, found = load_pretrained_words(
            args.pretrained_embeddings, train_ds.word_vocab, model_config.word_dim
        )
        resume_params.tables.word.data[found] = vectors[found]
        print(f"loaded pretrained vectors for {int(found.sum())} of "
              f"{len(train_ds.word_vocab)} words")

    params, history = train(
        train_ds, model_config, train_config,
        eval_ds=eval_ds, params=resume_params, start_step=start_step,
    )
    save_checkpoint(out_dir / "ckpt_final", params, model_config,
                    _dataset_meta(train_ds), train_config.max_steps)
    save_history_csv(history, out_dir / "history.csv")
    final_loss = history[-1]["loss"] if history else float("nan")
    print(f"trained {model_config.variant} for "
          f"{train_config.max_steps - start_step} step(s); final loss {final_loss:.4f}; "
          f"checkpoint at {out_dir / 'ckpt_final.json'}")
    return 0


def cmd_eval(args) -> int:
    params, model_config, manifest = load_checkpoint(args.checkpoint)
    meta = manifest["dataset"]
    try:
        test_ds = load_jsonl(
            args.test_data,
            relation_names=meta["relation_names"],
            word_vocab=meta["word_vocab"],
            entity_vocab=meta["entity_vocab"],
            max_len=args.max_len,
            bag_cap=args.bag_cap,
        )
    except DataError as e:
        standalone = load_jsonl(args.test_data, max_len=args.max_len, bag_cap=args.bag_cap)
        got = vocab_fingerprint(standalone.relation_names, standalone.word_vocab,
                                standalone.entity_vocab)
        raise ValidationError(
            f"evaluation data does not match the checkpoint vocabulary "
            f"(checkpoint fingerprint {meta['fingerprint']}, standalone data "
            f"fingerprint {got}): {e}"
        ) from None
    if args.one_sentence_only:
        test_ds = filter_one_sentence(test_ds)
        if not test_ds.bags:
            raise ValidationError("no single-sentence bags left after filtering")

    out_dir = Path(args.out_dir)
    _write_manifest(out_dir, "eval", {
        "inputs": {"checkpoint": args.checkpoint, "test_data": args.test_data,
                   "one_sentence_only": bool(args.one_sentence_only)},
        "resolved": {"model_config": dataclasses.asdict(model_config)},
        "seeds": {"data_seed": args.subsample_seed, "model_seed": model_config.seed},
        "checkpoint_fingerprint": meta["fingerprint"],
        "outputs": {
            "report": str(out_dir / "report.json"),
            "pr_curve": str(out_dir / "pr_curve.csv"),
        },
    })

    report = build_eval_report(
        test_ds, params, model_config,
        subsample_seed=args.subsample_seed,
        extra_metadata={
            "checkpoint_fingerprint": meta["fingerprint"],
            "checkpoint_step": manifest.get("step"),
            "one_sentence_only": bool(args.one_sentence_only),
            "seeds": {"data_seed": args.subsample_seed, "model_seed": model_config.seed},
        },
    )
    write_report_json(report, out_dir / "report.json")
    decisions = score_decisions(test_ds, params, model_config)
    positives = sum(1 for b in test_ds.bags if b.label != 0)
    write_pr_csv(decisions, positives, out_dir / "pr_curve.csv")
    print(f"auc {report.auc:.4f}  non_na_acc {report.non_na_acc:.4f}  "
          f"({len(test_ds.bags)} bags)")
    return 0


def cmd_gradcheck(args) -> int:
    if args.dropout_p:
        raise ValidationError(
            "gradient checking requires a deterministic objective; dropout stays off"
        )
    variants = list(VARIANTS) if args.variant == "all" else [args.variant]
    out_dir = Path(args.out_dir)
    _write_manifest(out_dir, "gradcheck", {
        "resolved": {"variants": variants, "eps": args.eps, "tol": args.tol},
        "seeds": {"model_seed": args.model_seed},
    })
    all_ok = True
    for variant in variants:
        report = run_gradcheck(variant, eps=args.eps, tol=args.tol, seed=args.model_seed)
        worst = max(e.max_rel_err for e in report.entries)
        status = "PASS" if report.passed else "FAIL"
        print(f"{variant:<22} worst_rel_err={worst:.3e}  {status}")
        if not report.passed:
            all_ok = False
            for entry in report.entries:
                if not entry.ok:
                    print(f"  {entry.name}: max_rel_err={entry.max_rel_err:.3e}")
    print("gradcheck:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 2


def cmd_ablate(args) -> int:
    train_ds = load_jsonl(args.train_data, max_len=args.max_len, bag_cap=args.bag_cap)
    test_ds = load_jsonl(
        args.test_data,
        relation_names=train_ds.relation_names,
        word_vocab=train_ds.word_vocab,
        entity_vocab=train_ds.entity_vocab,
        max_len=args.max_len,
        bag_cap=args.bag_cap,
    )
    out_dir = Path(args.out_dir)
    base_model = _resolve_model_config(args, len(train_ds.relation_names))
    train_config = _resolve_train_config(args, out_dir)
    train_config = dataclasses.replace(train_config, checkpoint_dir=None)

    _write_manifest(out_dir, "ablate", {
        "inputs": {"train_data": args.train_data, "test_data": args.test_data},
        "config_files": {"model": args.model_config, "train": args.train_config},
        "resolved": {
            "model_config": dataclasses.asdict(base_model),
            "train_config": dataclasses.asdict(train_config),
            "variant_order": list(ABLATION_ORDER),
        },
        "seeds": {"data_seed": train_config.seed, "model_seed": base_model.seed},
        "outputs": {"table": str(out_dir / "ablation.csv")},
    })

    rows = []
    for variant in ABLATION_ORDER:
        model_config = dataclasses.replace(base_model, variant=variant)
        params, _ = train(train_ds, model_config, train_config)
        report = build_eval_report(test_ds, params, model_config,
                                   subsample_seed=train_config.seed)
        vdir = out_dir / "variants" / variant
        write_report_json(report, vdir / "report.json")
        save_checkpoint(vdir / "ckpt_final", params, model_config,
                        _dataset_meta(train_ds), train_config.max_steps)
        means = {m: report.p_at_n[m]["mean"] for m in ("One", "Two", "All")}
        rows.append((variant, report.auc, report.non_na_acc, means))
        print(f"{variant:<22} auc={report.auc:.4f}  non_na_acc={report.non_na_acc:.4f}")

    table = out_dir / "ablation.csv"
    with table.open("w", newline="") as fh:
        fh.write("variant,auc,non_na_acc,p_mean_one,p_mean_two,p_mean_all\n")
        for variant, auc, acc, means in rows:
            cells = [variant, f"{auc:.6f}", f"{acc:.6f}"]
            cells += ["" if means[m] is None else f"{means[m]:.6f}"
                      for m in ("One", "Two", "All")]
            fh.write(",".join(cells) + "\n")
    print(f"wrote {table}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="seg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"seg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic noisy-bag corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--spec-file", metavar="JSON", help="synth spec file")
    for name, typ in _SYNTH_FLAG_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    p.add_argument("--data-seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one variant on a JSONL corpus")
    p.add_argument("--train-data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--eval-data", help="optional held-out JSONL for periodic AUC")
    p.add_argument("--resume", metavar="CKPT",
                   help="continue from a checkpoint; model config comes from it")
    p.add_argument("--pretrained-embeddings", metavar="TXT",
                   help="text file of word vectors to overwrite matching rows "
                        "of the initial word table (ignored with --resume)")
    p.add_argument("--max-len", type=int, default=120)
    p.add_argument("--bag-cap", type=int, default=20)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--one-sentence-only", action="store_true",
                   help="keep only single-sentence bags")
    p.add_argument("--subsample-seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=120)
    p.add_argument("--bag-cap", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every variant")
    p.add_argument("--variant", choices=("all",) + VARIANTS, default="all")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--model-seed", type=int, default=2)
    p.add_argument("--dropout-p", type=float, default=0.0,
                   help="must stay 0; present so the refusal is explicit")
    p.add_argument("--out-dir", default="gradcheck_out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and evaluate all variants, one CSV")
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-len", type=int, default=120)
    p.add_argument("--bag-cap", type=int, default=20)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SegError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # anything unexpected is a runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
