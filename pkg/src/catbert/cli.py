"""Command-line front end: the full pipeline as subcommands.

Logs go to stderr (set the level with the CATBERT_LOG environment variable);
data goes to files or stdout. Every run that writes files drops a
``run_manifest.json`` next to them recording the resolved config, the seed,
input/output checksums, and timing. Re-running with the same inputs and seed
reproduces every artifact byte for byte; only the manifest's ``timing`` block
differs.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .attacks import KINDS, AttackSpec, accuracy_under_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .explain import explain_record
from .mail import load_dataset_with_report, save_dataset
from .metrics import DEFAULT_FPRS, group_metrics, roc_auc, roc_curve, time_inference, tpr_at_fpr
from .model import ModelConfig, count_params, init_random, millions, surgery_from_donor
from .pipeline import encode_records, make_model_scorer, score_dataset
from .tokenizer import load_vocab
from .train import TrainConfig, split_by_time, train

log = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for runtime errors
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _setup_logging() -> None:
    name = os.environ.get("CATBERT_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# ------------------------------------------------------------- manifests


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _file_entry(path: str) -> dict:
    if os.path.isdir(path):
        files = {}
        for root, _, names in os.walk(path):
            for name in sorted(names):
                full = os.path.join(root, name)
                rel = os.path.relpath(full, path)
                files[rel] = {"sha256": _sha256(full), "bytes": os.path.getsize(full)}
        return {"path": path, "files": files}
    return {"path": path, "sha256": _sha256(path), "bytes": os.path.getsize(path)}


def _write_manifest(where: str, subcommand: str, config: dict, seed,
                    inputs: dict, outputs: dict, started: float) -> str:
    """Write the run manifest next to the outputs and return its path.

    ``where`` is the output directory, or an output file whose sibling the
    manifest becomes. All fields except ``timing`` are reproducible.
    """
    if os.path.isdir(where):
        path = os.path.join(where, MANIFEST_NAME)
    else:
        path = where + ".manifest.json"
    manifest = {
        "tool": "catbert",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "inputs": {k: _file_entry(v) for k, v in inputs.items() if v},
        "outputs": {k: _file_entry(v) for k, v in outputs.items() if v},
        "timing": {"started_unix": started, "duration_s": time.time() - started},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_json(obj: dict, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------- config plumbing


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return obj


def _override(base: dict, **flags) -> dict:
    out = dict(base)
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} wants comma-separated integers, got {text!r}")


def _load_records(path: str, strict: bool = True):
    records, errors = load_dataset_with_report(path, strict=strict)
    if not strict:
        for msg in errors:
            log.warning("%s: skipped %s", path, msg)
    return records, errors


def _encode_args(parser: _Parser) -> None:
    parser.add_argument("--vocab", required=True, help="vocabulary file, one token per line")
    parser.add_argument("--max-len", type=int, default=128)
    parser.add_argument("--truncate", choices=("head", "tail"), default="head")


def _model_io_args(parser: _Parser) -> None:
    parser.add_argument("--model", required=True, help="checkpoint directory")
    parser.add_argument("--in", dest="inp", required=True, help="JSONL dataset")
    _encode_args(parser)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--no-context", action="store_true",
                        help="zero the header context features")


# ------------------------------------------------------------ subcommands


def _cmd_ingest(args) -> int:
    started = time.time()
    records, errors = _load_records(args.inp, strict=args.strict)
    save_dataset(records, args.out)
    print(f"ingested {len(records)} records, skipped {len(errors)}", file=sys.stderr)
    _write_manifest(args.out, "ingest",
                    {"strict": args.strict, "skipped": errors},
                    None, {"dataset": args.inp}, {"dataset": args.out}, started)
    return 0


def _cmd_split(args) -> int:
    started = time.time()
    fractions = tuple(float(p) for p in args.fractions.split(","))
    records, _ = _load_records(args.inp)
    parts = split_by_time(records, fractions=fractions)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {}
    for name, part in zip(("train", "val", "test"), parts):
        path = os.path.join(args.out_dir, f"{name}.jsonl")
        save_dataset(part, path)
        outputs[name] = path
        print(f"{name}: {len(part)} records", file=sys.stderr)
    _write_manifest(args.out_dir, "split", {"fractions": list(fractions)},
                    None, {"dataset": args.inp}, outputs, started)
    return 0


def _resolved_model_config(args, file_cfg: dict, vocab_size: int) -> ModelConfig:
    cfg = _override(
        file_cfg.get("model", {}),
        hidden=args.hidden, ffn_dim=args.ffn_dim, heads=args.heads,
        max_positions=args.max_positions, context_dim=args.context_dim,
        cls_from=args.cls_from, seed=args.seed,
        block_plan=args.plan.split(",") if args.plan else None,
    )
    if cfg.get("vocab_size", vocab_size) != vocab_size:
        log.warning("config vocab_size %s overridden by vocabulary file (%d tokens)",
                    cfg["vocab_size"], vocab_size)
    cfg["vocab_size"] = vocab_size
    return ModelConfig.from_dict(cfg)


def _cmd_train(args) -> int:
    started = time.time()
    file_cfg = _load_json(args.config)
    vocab = load_vocab(args.vocab)
    max_len = args.max_len if args.max_len is not None else file_cfg.get("max_len", 128)
    truncate = args.truncate or file_cfg.get("truncate", "head")

    try:
        model_cfg = _resolved_model_config(args, file_cfg, len(vocab))
        train_cfg = TrainConfig.from_dict(_override(
            file_cfg.get("train", {}),
            epochs=args.epochs, batch_size=args.batch_size,
            learning_rate=args.learning_rate, seed=args.seed,
            bec_weight=args.bec_weight, freeze=args.freeze,
            balanced=False if args.unbalanced else None,
        ))
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad config: {e}")

    train_records, _ = _load_records(args.train)
    train_set = encode_records(train_records, vocab, max_len=max_len, truncate=truncate)
    val_set = None
    if args.val:
        val_records, _ = _load_records(args.val)
        val_set = encode_records(val_records, vocab, max_len=max_len, truncate=truncate)

    model = init_random(model_cfg, seed=train_cfg.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    history = train(model, train_set, train_cfg, val_set=val_set, out_dir=args.out_dir)

    history_path = os.path.join(args.out_dir, "history.json")
    _write_json(history.to_dict(), history_path)
    resolved = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                "max_len": max_len, "truncate": truncate}
    _write_manifest(args.out_dir, "train", resolved, train_cfg.seed,
                    {"train": args.train, "val": args.val, "vocab": args.vocab},
                    {"checkpoint": os.path.join(args.out_dir, "best"),
                     "history": history_path},
                    started)
    last = history.epochs[-1]
    print(json.dumps({"final": last, "best_epoch": history.best_epoch,
                      "best_val_auc": history.best_val_auc}), file=sys.stderr)
    return 0


def _cmd_surgery(args) -> int:
    started = time.time()
    donor = load_checkpoint(args.donor)
    keep = _parse_int_list(args.keep, "--keep") if args.keep else None
    model = surgery_from_donor(donor, keep=keep, context_dim=args.context_dim,
                               seed=args.seed, cls_from=args.cls_from)
    os.makedirs(args.out_dir, exist_ok=True)
    save_checkpoint(model, args.out_dir)
    copied = sum(1 for v in model.provenance.values() if v.startswith("copied"))
    print(f"kept blocks {keep or 'every other'}: {copied} tensors copied, "
          f"{len(model.provenance) - copied} fresh", file=sys.stderr)
    _write_manifest(args.out_dir, "surgery",
                    {"keep": keep, "context_dim": args.context_dim,
                     "cls_from": args.cls_from,
                     "model": model.config.to_dict()},
                    args.seed, {"donor": args.donor}, {"checkpoint": args.out_dir},
                    started)
    return 0


def _cmd_params(args) -> int:
    started = time.time()
    file_cfg = _load_json(args.config)
    try:
        cfg = ModelConfig.from_dict(file_cfg.get("model", file_cfg))
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad model config in {args.config}: {e}")
    report = count_params(cfg)
    payload = {
        "config": cfg.to_dict(),
        "exact": {
            "embedding": report.embedding,
            "non_embedding": report.non_embedding,
            "per_transformer": report.per_transformer,
            "per_adapter": report.per_adapter,
            "classifier": report.classifier,
            "total": report.total,
        },
        "millions": {
            "embedding": millions(report.embedding),
            "non_embedding": millions(report.non_embedding),
            "total": millions(report.total),
        },
    }
    _write_json(payload, args.out)
    if args.out:
        _write_manifest(args.out, "params", cfg.to_dict(), None,
                        {"config": args.config}, {"report": args.out}, started)
    return 0


def _load_scoring_inputs(args):
    vocab = load_vocab(args.vocab)
    model = load_checkpoint(args.model)
    records, _ = _load_records(args.inp)
    ds = encode_records(records, vocab, max_len=args.max_len, truncate=args.truncate)
    return vocab, model, records, ds


def _cmd_eval(args) -> int:
    started = time.time()
    fprs = [float(p) for p in args.fprs.split(",")] if args.fprs else list(DEFAULT_FPRS)
    vocab, model, records, ds = _load_scoring_inputs(args)
    scores = score_dataset(model, ds, batch_size=args.batch_size,
                           use_context=not args.no_context)
    labels = ds.labels
    payload = {
        "n": len(ds),
        "n_pos": int((labels == 1).sum()),
        "n_neg": int((labels == 0).sum()),
        "auc": roc_auc(scores, labels),
        "tpr_at_fpr": {str(f): t for f, t in zip(fprs, tpr_at_fpr(scores, labels, fprs))},
        "use_context": not args.no_context,
    }
    if args.groups:
        payload["groups"] = group_metrics(scores, labels, ds.groups, fprs=fprs)
    outputs = {"metrics": args.out}
    _write_json(payload, args.out)
    if args.roc:
        with open(args.roc, "w", encoding="utf-8") as f:
            f.write("fpr,tpr,threshold\n")
            for fpr, tpr, thr in roc_curve(scores, labels):
                f.write(f"{fpr!r},{tpr!r},{thr!r}\n")
        outputs["roc"] = args.roc
    if args.out:
        _write_manifest(args.out, "eval",
                        {"fprs": fprs, "batch_size": args.batch_size,
                         "max_len": args.max_len, "use_context": not args.no_context},
                        None,
                        {"dataset": args.inp, "model": args.model, "vocab": args.vocab},
                        outputs, started)
    return 0


def _cmd_predict(args) -> int:
    started = time.time()
    vocab, model, records, ds = _load_scoring_inputs(args)
    scores = score_dataset(model, ds, batch_size=args.batch_size,
                           use_context=not args.no_context)
    lines = [json.dumps({"index": i, "prob": float(p), "label": int(l)})
             for i, (p, l) in enumerate(zip(scores, ds.labels))]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        _write_manifest(args.out, "predict",
                        {"batch_size": args.batch_size, "max_len": args.max_len,
                         "use_context": not args.no_context},
                        None,
                        {"dataset": args.inp, "model": args.model, "vocab": args.vocab},
                        {"predictions": args.out}, started)
    else:
        sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _cmd_attack(args) -> int:
    started = time.time()
    vocab, model, records, _ = _load_scoring_inputs(args)
    synonyms = _load_json(args.synonyms) if args.synonyms else {}
    spec = AttackSpec(kind=args.kind, rate=args.rate, seed=args.seed, synonyms=synonyms)
    scorer = make_model_scorer(model, vocab, max_len=args.max_len,
                               truncate=args.truncate,
                               use_context=not args.no_context)
    report = accuracy_under_attack(scorer, records, spec, threshold=args.threshold)
    _write_json(report, args.out)
    if args.out:
        _write_manifest(args.out, "attack",
                        {"kind": args.kind, "rate": args.rate,
                         "threshold": args.threshold, "max_len": args.max_len,
                         "use_context": not args.no_context},
                        args.seed,
                        {"dataset": args.inp, "model": args.model,
                         "vocab": args.vocab, "synonyms": args.synonyms},
                        {"report": args.out}, started)
    return 0


def _cmd_explain(args) -> int:
    started = time.time()
    vocab = load_vocab(args.vocab)
    model = load_checkpoint(args.model)
    records, _ = _load_records(args.inp)
    if not 0 <= args.index < len(records):
        raise UsageError(f"--index {args.index} out of range for {len(records)} records")
    attribution = explain_record(model, vocab, records[args.index],
                                 n_samples=args.n_samples, seed=args.seed,
                                 max_len=args.max_len,
                                 use_context=not args.no_context)
    _write_json(attribution.to_dict(), args.out)
    if args.out:
        _write_manifest(args.out, "explain",
                        {"index": args.index, "n_samples": args.n_samples,
                         "max_len": args.max_len, "use_context": not args.no_context},
                        args.seed,
                        {"dataset": args.inp, "model": args.model, "vocab": args.vocab},
                        {"attribution": args.out}, started)
    return 0


def _cmd_bench(args) -> int:
    """Time the full-depth donor against the compressed half-depth model."""
    started = time.time()
    if args.donor_blocks % 2:
        raise UsageError(f"--donor-blocks must be even, got {args.donor_blocks}")
    common = dict(vocab_size=args.vocab_size, hidden=args.hidden,
                  ffn_dim=args.ffn_dim, heads=args.heads,
                  max_positions=max(args.seq_len, 512), context_dim=4)
    donor = init_random(ModelConfig(block_plan=("T",) * args.donor_blocks, **common),
                        seed=args.seed)
    compressed = init_random(
        ModelConfig(block_plan=("T", "A") * (args.donor_blocks // 2), **common),
        seed=args.seed)
    kwargs = dict(batch_sizes=(args.batch,), repetitions=args.repetitions,
                  seq_len=args.seq_len, seed=args.seed)
    donor_report = time_inference(donor, **kwargs)
    compressed_report = time_inference(compressed, **kwargs)
    key = str(args.batch)
    payload = {
        "dims": {"hidden": args.hidden, "ffn_dim": args.ffn_dim,
                 "heads": args.heads, "seq_len": args.seq_len,
                 "batch": args.batch, "vocab_size": args.vocab_size,
                 "donor_blocks": args.donor_blocks},
        "donor": donor_report["timings"][key],
        "compressed": compressed_report["timings"][key],
        "speedup_p50": donor_report["timings"][key]["p50_ms"]
        / compressed_report["timings"][key]["p50_ms"],
        "speedup_mean": donor_report["timings"][key]["mean_ms"]
        / compressed_report["timings"][key]["mean_ms"],
    }
    _write_json(payload, args.out)
    if args.out:
        _write_manifest(args.out, "bench", payload["dims"], args.seed,
                        {}, {"report": args.out}, started)
    return 0


# --------------------------------------------------------------- parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="catbert",
                     description="Train, compress, evaluate, attack, and explain "
                                 "a transformer+adapter phishing email detector.")
    parser.add_argument("--version", action="version", version=f"catbert {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (recorded; compute here is single-threaded)")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate and normalize a JSONL dataset")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true", help="fail on the first bad line")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="time-ordered train/val/test split")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fractions", default="0.7,0.15,0.15")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model on a JSONL dataset")
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--val", help="validation JSONL (best-epoch tracking)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON config: {model: {...}, train: {...}, max_len, truncate}")
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--truncate", choices=("head", "tail"), default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--bec-weight", type=float)
    p.add_argument("--freeze", help="freeze preset name, e.g. partial-finetune")
    p.add_argument("--unbalanced", action="store_true", help="plain shuffled batches")
    p.add_argument("--hidden", type=int)
    p.add_argument("--ffn-dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--max-positions", type=int)
    p.add_argument("--context-dim", type=int)
    p.add_argument("--cls-from", choices=("last_block", "last_transformer"))
    p.add_argument("--plan", help="block plan, e.g. T,A,T,A")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("surgery", help="compress a donor checkpoint into T+A form")
    p.add_argument("--donor", required=True, help="donor checkpoint directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--keep", help="donor transformer indices to keep, e.g. 0,2,4")
    p.add_argument("--context-dim", type=int, default=4)
    p.add_argument("--cls-from", choices=("last_block", "last_transformer"),
                   default="last_block")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_surgery)

    p = sub.add_parser("params", help="parameter count report for a config")
    p.add_argument("--config", required=True, help="JSON with model config fields")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_params)

    p = sub.add_parser("eval", help="AUC / TPR-at-FPR metrics on a dataset")
    _model_io_args(p)
    p.add_argument("--out", help="metrics JSON (stdout if omitted)")
    p.add_argument("--roc", help="also write the full ROC curve as CSV")
    p.add_argument("--fprs", help="comma-separated FPR targets")
    p.add_argument("--groups", action="store_true", help="per-group breakdown")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="score records, one JSON line each")
    _model_io_args(p)
    p.add_argument("--out", help="predictions JSONL (stdout if omitted)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("attack", help="accuracy drop under text perturbation")
    _model_io_args(p)
    p.add_argument("--kind", required=True, choices=tuple(KINDS))
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--synonyms", help="JSON file: word -> replacement list")
    p.add_argument("--out", help="report JSON (stdout if omitted)")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("explain", help="per-word attribution for one record")
    _model_io_args(p)
    p.add_argument("--index", type=int, default=0, help="record index to explain")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="attribution JSON (stdout if omitted)")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("bench", help="donor vs compressed inference latency")
    p.add_argument("--hidden", type=int, default=768)
    p.add_argument("--ffn-dim", type=int, default=3072)
    p.add_argument("--heads", type=int, default=12)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--donor-blocks", type=int, default=6)
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing JSON (stdout if omitted)")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        print(parser.format_help(), file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    if getattr(args, "func", None) is None:
        print(parser.format_help(), file=sys.stderr)
        return 1
    if args.threads is not None:
        log.info("thread cap %d recorded; compute in this build is single-threaded",
                 args.threads)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime errors -> exit 2, message on stderr
        log.debug("unhandled error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
