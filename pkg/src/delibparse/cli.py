"""Command-line entry point.

Commands: ``datagen``, ``build-vocab``, ``train``, ``eval``, ``matrix``,
``gradcheck``, ``em``, ``inspect``. Every command that produces files
writes them under ``--out DIR`` together with a copy of the resolved
configuration; rerunning from that copy reproduces the outputs. Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import annotations as anno
from . import asr_stub, config as config_mod, datagen, evaluate as eval_mod
from . import harness, persist, training, vocab as vocab_mod
from .model import PRESETS
from .records import load_records, save_records
from .seeding import derive_seed


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_common(p: CliParser):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--jobs", type=int, help="parallel workers where supported")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="named model preset applied over the config")


def _resolve(args) -> config_mod.RunConfig:
    cfg = config_mod.load_config(args.config) if args.config else config_mod.RunConfig()
    if args.preset:
        cfg.model = PRESETS[args.preset](cfg.model.modality)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if getattr(args, "modality", None):
        cfg.model = replace(cfg.model, modality=args.modality)
    if getattr(args, "strategy", None):
        cfg.train = replace(cfg.train, strategy=args.strategy)
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "lr", None) is not None:
        cfg.train = replace(cfg.train, lr=args.lr)
    if getattr(args, "wer", None) is not None:
        cfg.channel = replace(cfg.channel, wer=args.wer)
    if getattr(args, "channel", None):
        cfg.channel = replace(cfg.channel, train_channel=args.channel)
    if getattr(args, "tier", None) is not None:
        cfg.channel = replace(cfg.channel, tier=args.tier)
    if getattr(args, "n", None) is not None:
        n = args.n
        cfg.corpus = replace(cfg.corpus, n_train=n - 2 * max(1, n // 7),
                             n_valid=max(1, n // 7), n_test=max(1, n // 7))
    if getattr(args, "target_pieces", None) is not None:
        cfg.target_pieces = args.target_pieces
    return cfg


def _need_out(args) -> Path:
    if not args.out:
        raise SystemExit(_usage_error("--out is required for this command"))
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# -- commands ---------------------------------------------------------------


def cmd_datagen(args) -> int:
    cfg = _resolve(args)
    out = _need_out(args)
    grammar = datagen.default_grammar()
    c = cfg.corpus
    n = c.n_train + c.n_valid + c.n_test
    base = datagen.generate_corpus(grammar, n, c.compositional_fraction, cfg.seed)
    ratios = (c.n_train / n, c.n_valid / n, c.n_test / n)
    parts = datagen.split(base, ratios, cfg.seed)
    pools = datagen.build_confusion_pools(grammar, cfg.seed)
    err = asr_stub.AsrErrorModel.for_target_wer(cfg.channel.wer, pools)
    names = ("train", "valid", "test")
    channels = (cfg.channel.train_channel, cfg.channel.train_channel, "natural")
    for i, (name, part, chan_name) in enumerate(zip(names, parts, channels)):
        recs = datagen.attach_hypotheses(part, err, derive_seed(cfg.seed, "asr", cfg.channel.tier))
        chan = datagen.CHANNELS[chan_name](c.feat_dim)
        recs = datagen.attach_features(recs, chan, derive_seed(cfg.seed, "feat", i))
        save_records(out / f"{name}.jsonl", recs)
    asr_stub.save_pools(out / "pools.tsv", pools)
    config_mod.write_resolved(cfg, out)
    print(f"wrote {', '.join(n + '.jsonl' for n in names)} to {out}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = _resolve(args)
    out = _need_out(args)
    records = load_records(args.dataset)
    corpus = sorted({r.ref_text for r in records})
    ontology = vocab_mod.ontology_tokens_from_annotations(r.annotation for r in records)
    vocab = vocab_mod.build_vocab(corpus, cfg.target_pieces, ontology)
    vocab.save(out / "vocab.txt")
    config_mod.write_resolved(cfg, out)
    print(f"wrote vocab.txt ({vocab.size} ids, {vocab.output_units} output units)")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _need_out(args)
    data_dir = Path(args.data)
    train_recs = load_records(data_dir / "train.jsonl")
    valid_recs = load_records(data_dir / "valid.jsonl")
    vocab_path = args.vocab or data_dir / "vocab.txt"
    vocab = vocab_mod.Vocabulary.load(vocab_path)
    model_cfg = cfg.model.with_vocab(vocab.size)
    tier = cfg.channel.tier
    feat_dim = cfg.corpus.feat_dim
    stub_text_seed = derive_seed(cfg.seed, "stub-text", tier)
    stub_audio_seed = derive_seed(cfg.seed, "stub-audio", tier)
    text_enc = (asr_stub.FrozenTextEncoder(vocab.size, model_cfg.text_source_dim, stub_text_seed)
                if model_cfg.uses_text else None)
    audio_enc = (asr_stub.make_audio_encoder(tier, feat_dim, model_cfg.audio_source_dim, stub_audio_seed)
                 if model_cfg.uses_audio else None)
    from .model import DeliberationModel

    model = DeliberationModel(model_cfg, vocab, text_enc, audio_enc,
                              seed=derive_seed(cfg.seed, "model"))
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train"))
    result = training.train(model, train_recs, valid_recs, tcfg,
                            log_path=out / "metrics.log")
    persist.save_model(out, model, tier, feat_dim, stub_text_seed,
                       stub_audio_seed,
                       extra={"best_epoch": result.best_epoch,
                              "best_valid_em": result.best_em})
    config_mod.write_resolved(cfg, out)
    print(f"trained {model_cfg.modality} model: best valid EM "
          f"{result.best_em:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_eval(args) -> int:
    model, meta = persist.load_model(args.model)
    records = load_records(args.dataset)
    sibling = Path(args.dataset).parent / "vocab.txt"
    expected = None
    if sibling.exists():
        expected = vocab_mod.Vocabulary.load(sibling).digest()
    report = eval_mod.evaluate(model, records,
                               expected_vocab_digest=expected,
                               meta={"tier": meta["tier"],
                                     "modality": model.config.modality,
                                     "strategy": "-",
                                     "channel": "-",
                                     "seed": "-"})
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        import json

        with open(args.out / "eval.json", "w", encoding="utf-8") as f:
            json.dump(report.as_row(), f, indent=2, sort_keys=True)
            f.write("\n")
    def show(x):
        return "n/a" if x is None else f"{x:.4f}"
    print(f"EM {report.em_overall:.4f} "
          f"(no-error {show(report.em_no_error)} on {report.n_no_error}, "
          f"error {show(report.em_error)} on {report.n_error})")
    return 0


def cmd_matrix(args) -> int:
    cfg = _resolve(args)
    out = _need_out(args)
    m = cfg.matrix
    spec = eval_mod.MatrixSpec(
        n_train=cfg.corpus.n_train, n_valid=cfg.corpus.n_valid,
        n_test=cfg.corpus.n_test,
        compositional_fraction=cfg.corpus.compositional_fraction,
        feat_dim=cfg.corpus.feat_dim, target_pieces=cfg.target_pieces,
        tier_wer={1: m.tier1_wer, 2: m.tier2_wer},
        tiers=m.tiers, modalities=m.modalities, strategies=m.strategies,
        channels=m.channels, seeds=m.seeds, root_seed=cfg.seed,
        model=cfg.model, train=cfg.train,
    )
    rows = eval_mod.run_matrix(spec, out, jobs=cfg.jobs)
    config_mod.write_resolved(cfg, out)
    done = sum(1 for r in rows if "error" not in r)
    print(f"matrix complete: {done}/{len(rows)} cells ok; see {out / 'report.txt'}")
    return 0 if done == len(rows) else 2


def cmd_gradcheck(args) -> int:
    err = harness.full_loss_gradcheck(
        modality=args.modality, seed=args.seed if args.seed is not None else 0
    )
    verdict = "PASS" if err < 1e-3 else "FAIL"
    print(f"max rel error {err:.3e} {verdict}")
    return 0 if verdict == "PASS" else 2


def cmd_em(args) -> int:
    hyps = anno.read_anno_file(args.hyp)
    refs = anno.read_anno_file(args.ref)
    if len(hyps) != len(refs):
        raise ValueError(f"line counts differ: {len(hyps)} vs {len(refs)}")
    print(f"EM {anno.em_score(list(zip(hyps, refs))):.4f}")
    return 0


def cmd_inspect(args) -> int:
    model, _ = persist.load_model(args.model)
    records = load_records(args.dataset)
    if not 0 <= args.index < len(records):
        raise ValueError(f"--index {args.index} outside dataset of {len(records)}")
    rec = records[args.index]
    print(f"id:         {rec.id}")
    print(f"reference:  {rec.ref_text}")
    print(f"hypothesis: {rec.hyp_text}")
    print(f"target:     {rec.annotation}")
    steps = model.trace_decode(rec, use_hyp=True)
    vocab = model.vocab

    def top(dist, k=3):
        if dist is None:
            return "-"
        idx = np.argsort(dist)[::-1][:k]
        return " ".join(f"{vocab.surface(int(i))!r}:{dist[int(i)]:.3f}"
                        for i in idx if dist[int(i)] > 0)

    out_ids = []
    for t, (chosen, step) in enumerate(steps):
        pc = "-" if step.p_copy is None else f"{step.p_copy:.3f}"
        print(f"step {t:>2}: -> {vocab.surface(chosen)!r}  p_copy={pc}")
        print(f"         g: {top(step.g)}")
        print(f"         c: {top(step.c)}")
        if chosen != vocab_mod.EOS:
            out_ids.append(chosen)
    decoded = vocab_mod.decode(out_ids, vocab)
    print(f"decoded:    {decoded}")
    print(f"exact match: {anno.exact_match(decoded, rec.annotation)}")
    return 0


def build_parser() -> CliParser:
    parser = CliParser(prog="delibparse",
                       description="deliberation-style spoken-language parser workflows")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", parents=[], help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="total corpus size (5:1:1 split)")
    p.add_argument("--wer", type=float, help="target corpus word error rate")
    p.add_argument("--channel", choices=sorted(datagen.CHANNELS),
                   help="feature channel for train/valid files")
    p.add_argument("--tier", type=int, choices=(1, 2), help="first-pass tier")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("build-vocab", help="build the subword+ontology vocabulary")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True, help="train.jsonl path")
    p.add_argument("--target-pieces", type=int, dest="target_pieces")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train one model variant")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--vocab", type=Path, help="vocab.txt (default: data dir)")
    p.add_argument("--modality", choices=("fusion", "text", "audio"))
    p.add_argument("--strategy", choices=training.STRATEGIES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tier", type=int, choices=(1, 2))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a dataset")
    _add_common(p)
    p.add_argument("--model", type=Path, required=True, help="model directory")
    p.add_argument("--dataset", type=Path, required=True, help="jsonl dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the tier x modality x strategy matrix")
    _add_common(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    _add_common(p)
    p.add_argument("--modality", choices=("fusion", "text", "audio"),
                   default="fusion")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("em", help="score two annotation files")
    p.add_argument("--hyp", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.set_defaults(func=cmd_em)

    p = sub.add_parser("inspect", help="decode one utterance verbosely")
    _add_common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
