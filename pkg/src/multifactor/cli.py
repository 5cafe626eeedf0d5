"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import metrics, pet, pipeline
from .corpus import (
    CorpusError,
    DataError,
    Example,
    KBConfig,
    Vocabulary,
    generate_corpus,
    read_jsonl,
    tokenize,
    write_jsonl,
)
from .fullanswer import coverage_report
from .numerics import CheckpointError, NumericError
from .pipeline import Checkpoint, ConfigError, PipelineConfig

log = logging.getLogger("multifactor")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults <- --config JSON file <- --set key=value <- dedicated flags."""
    data: dict = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        data[key.strip().replace("-", "_")] = _parse_value(value.strip())
    for key in ("epochs", "lr", "batch_size", "d_model", "beam_width", "oracle_k"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "kb_config", None):
        data["kb_config"] = Path(args.kb_config).read_text(encoding="utf-8")
    return PipelineConfig.from_dict({**PipelineConfig().to_dict(), **data})


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with pipeline settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--d-model", type=int)


def _load_split(data: Path, split: str) -> list[Example]:
    path = data / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"missing {path}")
    return read_jsonl(path)


def _load_vocab(data: Path, train: list[Example] | None = None) -> Vocabulary:
    path = data / "vocab.txt"
    if path.exists():
        return Vocabulary.load(path)
    return pipeline.build_vocab(train if train is not None else _load_split(data, "train"))


# --- subcommands ----------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    kb = KBConfig.from_text(Path(args.kb_config).read_text(encoding="utf-8")) if args.kb_config else KBConfig()
    corpus = generate_corpus(args.seed, args.size, kb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in corpus.splits().items():
        write_jsonl(out / f"{name}.jsonl", rows)
    pipeline.build_vocab(corpus.train).save(out / "vocab.txt")
    (out / "kb_config.txt").write_text(kb.to_text(), encoding="utf-8")
    cov = {name: coverage_report(rows).as_dict() for name, rows in corpus.splits().items()}
    (out / "coverage.json").write_text(json.dumps(cov, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for name, rep in cov.items():
        comp = rep["by_type"].get("comparison", {"converted": 0, "skipped": 0})
        print(f"{name}: {rep['converted']} with full answer, {rep['skipped']} without "
              f"(comparison converted {comp['converted']}/{comp['converted'] + comp['skipped']})")
    print(f"corpus hash {pipeline.corpus_hash(corpus)}")
    return EXIT_OK


def cmd_train_fa(args) -> int:
    cfg = load_config(args)
    data = Path(args.data)
    train, dev = _load_split(data, "train"), _load_split(data, "dev")
    vocab = _load_vocab(data, train)
    ck = pipeline.train_fa(train, dev, vocab, cfg, args.seed, mode=args.mode)
    ck.save(args.out)
    print(f"saved {args.out} (best epoch {ck.best_epoch}, dev loss {ck.history[ck.best_epoch]['dev_loss']:.4f})")
    return EXIT_OK


def cmd_train_q(args) -> int:
    cfg = load_config(args)
    data = Path(args.data)
    train, dev = _load_split(data, "train"), _load_split(data, "dev")
    vocab = _load_vocab(data, train)
    layout = "FA" if args.single_stage else ("Q-no-context" if args.no_context else "Q")
    fa_ckpt = Checkpoint.load(args.fa_ckpt) if args.fa_ckpt else None
    ck = pipeline.train_q(train, dev, vocab, cfg, args.seed, mode=args.mode, layout=layout,
                          fa_source=args.fa_source, fa_ckpt=fa_ckpt)
    ck.save(args.out)
    print(f"saved {args.out} (layout {layout}, best epoch {ck.best_epoch})")
    return EXIT_OK


def _examples_for_generate(args) -> list[Example]:
    if args.input:
        return read_jsonl(args.input)
    if args.context is None or args.answer is None:
        raise ConfigError("generate needs --input FILE or both --context and --answer")
    return [Example("input-0", args.context, args.answer, args.question or "", None, [], "bridge")]


def cmd_generate(args) -> int:
    cfg = load_config(args)
    examples = _examples_for_generate(args)
    for ex in examples:
        ex.validate()
    vocab = Vocabulary.load(args.vocab)
    q_ckpt = Checkpoint.load(args.q_ckpt)
    if q_ckpt.layout == "FA":
        gens = pipeline.generate_questions(examples, q_ckpt, vocab, cfg, mode=args.mode,
                                           diagnostics=args.show_phrases)
    else:
        if not args.fa_ckpt:
            raise ConfigError(f"a {q_ckpt.layout} question model needs --fa-ckpt")
        fa_ckpt = Checkpoint.load(args.fa_ckpt)
        if args.oracle_k:
            if any(not (e.full_answer or e.question) for e in examples):
                raise DataError("oracle selection needs gold references in the input")
            gens = pipeline.infer_oracle_fa(examples, fa_ckpt, q_ckpt, vocab, cfg, args.oracle_k)
        else:
            gens = pipeline.infer(examples, fa_ckpt, q_ckpt, vocab, cfg, diagnostics=args.show_phrases)
    rows = [g.as_dict(diagnostics=args.show_phrases) for g in gens]
    for g, ex in zip(rows, examples):
        g["reference"] = ex.question
    text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    unfinished = sum(not g.finished for g in gens)
    if unfinished:
        log.warning("%d output(s) hit the length limit before <eos>", unfinished)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    hyps, refs = [], []
    path = Path(args.predictions)
    if not path.exists():
        raise DataError(f"missing {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        for key in ("id", "hypothesis", "reference"):
            if key not in row:
                raise DataError(f"{path}:{lineno}: missing required field {key!r}")
        hyps.append(tokenize(row["hypothesis"]))
        refs.append(tokenize(row["reference"]))
    if not hyps:
        raise DataError(f"{path}: no predictions")
    rep = metrics.evaluate(hyps, refs, beta=args.beta)
    table = metrics.format_table({args.name: rep})
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.with_suffix(".txt").write_text(table, encoding="utf-8")
        out.with_suffix(".json").write_text(json.dumps(rep.as_dict(per_example=True), indent=1) + "\n",
                                             encoding="utf-8")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    worst_overall = 0.0
    for mode in args.modes:
        errs = pet.micro_gradient_check(seed=args.seed, mode=mode, h=args.h)
        worst = max(errs, key=errs.get)
        worst_overall = max(worst_overall, errs[worst])
        print(f"{mode:<11} {len(errs):>3} parameters  max relative error {errs[worst]:.3e}  ({worst})")
        if args.verbose:
            for name in sorted(errs):
                print(f"    {name:<40} {errs[name]:.3e}")
    ok = worst_overall < args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst_overall:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablation(args) -> int:
    cfg = load_config(args)
    if args.size is not None:
        cfg = cfg.replace(corpus_size=args.size)
    modes = args.modes or list(pipeline.MODES)
    manifest, reports = pipeline.run_ablation(cfg, args.seed, modes, args.out)
    sys.stdout.write(metrics.format_table(reports, f"test split, seed {args.seed}"))
    if "answer_in_fa" in manifest.diagnostics:
        print(f"answer present in generated full answer: {100 * manifest.diagnostics['answer_in_fa']:.1f}%")
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multifactor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic train/dev/test corpus")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--size", type=int, default=2000, help="training examples; dev and test get size/10")
    p.add_argument("--kb-config", help="key=value generator settings")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-fa", help="train the full-answer model")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--mode", choices=pet.MODES, default="pet")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_fa)

    p = sub.add_parser("train-q", help="train a question model")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=pet.MODES, default="pet")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--single-stage", action="store_true", help="input is answer + context only")
    group.add_argument("--no-context", action="store_true", help="input is answer + full answer only")
    p.add_argument("--fa-source", choices=("gold", "generated"), default="gold")
    p.add_argument("--fa-ckpt", help="FA checkpoint (needed with --fa-source generated)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_q)

    p = sub.add_parser("generate", help="generate questions (and full answers)")
    _add_config_flags(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--q-ckpt", required=True)
    p.add_argument("--fa-ckpt")
    p.add_argument("--input", help="JSONL examples")
    p.add_argument("--context")
    p.add_argument("--answer")
    p.add_argument("--question", help="gold question, copied to the output as the reference")
    p.add_argument("--mode", choices=pet.MODES, help="override the checkpoint's inference mode")
    p.add_argument("--beam-width", type=int)
    p.add_argument("--oracle-k", type=int, help="pick the FA among the top k closest to the gold reference")
    p.add_argument("--show-phrases", action="store_true", help="include phrase probabilities and delta")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU-1..4 and ROUGE-L for JSONL {id, hypothesis, reference}")
    p.add_argument("predictions")
    p.add_argument("--name", default="system")
    p.add_argument("--beta", type=float, default=1.0, help="ROUGE-L recall weight")
    p.add_argument("--out", help="report path stem; writes .txt and .json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference gradient check of a micro PET")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--modes", nargs="+", choices=pet.MODES, default=["pet"])
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("ablation", help="train and score every mode on one corpus")
    _add_config_flags(p)
    p.add_argument("--size", type=int, help="training examples in the generated corpus")
    p.add_argument("--modes", nargs="+", choices=pipeline.MODES)
    p.add_argument("--out", help="directory for checkpoints, predictions and the run manifest")
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
