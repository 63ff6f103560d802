"""Evaluation reports and the experiment matrix runner.

``evaluate`` scores one model on one dataset with exact match, overall and
split into error/no-error buckets. ``run_matrix`` trains and evaluates a
grid of (stub tier x modality x text strategy x feature channel x seed)
cells on shared synthetic corpora, caching finished cells by config digest
so a rerun reuses them verbatim.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import annotations as anno
from . import asr_stub, datagen, training
from . import vocab as vocab_mod
from .model import DeliberationModel, ModelConfig
from .records import UtteranceRecord
from .seeding import derive_seed


class VocabMismatch(ValueError):
    pass


@dataclass
class EvalReport:
    n_total: int
    n_no_error: int
    n_error: int
    em_overall: float
    em_no_error: float | None
    em_error: float | None
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = dict(self.meta)
        row.update(
            em_overall=self.em_overall,
            em_no_error=self.em_no_error,
            em_error=self.em_error,
            n_no_error=self.n_no_error,
            n_error=self.n_error,
        )
        return row


def evaluate(model: DeliberationModel, records: list[UtteranceRecord],
             use_hyp: bool = True, batch_size: int = 256,
             expected_vocab_digest: str | None = None,
             meta: dict | None = None) -> EvalReport:
    """Greedy-decode every record and score exact match per bucket."""
    if expected_vocab_digest is not None:
        got = model.vocab.digest()
        if got != expected_vocab_digest:
            raise VocabMismatch(
                f"model vocabulary digest {got[:12]} != dataset digest "
                f"{expected_vocab_digest[:12]}"
            )
    hits = {False: 0, True: 0}
    counts = {False: 0, True: 0}
    for at in range(0, len(records), batch_size):
        chunk = records[at : at + batch_size]
        outs = model.greedy_decode_batch(chunk, use_hyp=use_hyp)
        for rec, ids in zip(chunk, outs):
            pred = vocab_mod.decode(ids, model.vocab)
            bucket = bool(rec.has_asr_error)
            counts[bucket] += 1
            hits[bucket] += anno.exact_match(pred, rec.annotation)
    total = counts[False] + counts[True]
    matched = hits[False] + hits[True]
    return EvalReport(
        n_total=total,
        n_no_error=counts[False],
        n_error=counts[True],
        em_overall=matched / total if total else 0.0,
        em_no_error=hits[False] / counts[False] if counts[False] else None,
        em_error=hits[True] / counts[True] if counts[True] else None,
        meta=dict(meta or {}),
    )


# -- experiment matrix -----------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    tier: int
    modality: str
    strategy: str  # "-" for the audio-only variant
    channel: str   # training feature channel; test features stay natural
    seed: int


@dataclass
class MatrixSpec:
    """Everything a matrix run needs, resolvable to a cell list."""

    n_train: int = 2000
    n_valid: int = 400
    n_test: int = 400
    compositional_fraction: float = 0.3
    feat_dim: int = 16
    target_pieces: int = 160
    tier_wer: dict = field(default_factory=lambda: {1: 0.20, 2: 0.35})
    tiers: tuple = (1,)
    modalities: tuple = ("text", "fusion", "audio")
    strategies: tuple = ("hyp", "ref", "union")
    channels: tuple = ("natural",)
    extra_cells: tuple = ()
    seeds: tuple = (0, 1, 2)
    root_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: training.TrainConfig = field(default_factory=training.TrainConfig)

    def cells(self) -> list[MatrixCell]:
        out = []
        for tier in self.tiers:
            for channel in self.channels:
                for modality in self.modalities:
                    for strategy in self.strategies:
                        for seed in self.seeds:
                            eff = "-" if modality == "audio" else strategy
                            out.append(MatrixCell(tier, modality, eff, channel, seed))
        out.extend(self.extra_cells)
        return out


def _cell_digest(spec: MatrixSpec, cell: MatrixCell) -> str:
    payload = {
        "cell": asdict(cell),
        "corpus": [spec.n_train, spec.n_valid, spec.n_test,
                   spec.compositional_fraction, spec.feat_dim,
                   spec.target_pieces, spec.root_seed],
        "wer": spec.tier_wer[cell.tier],
        "model": asdict(spec.model),
        "train": {k: v for k, v in asdict(spec.train).items()},
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class _MatrixData:
    """Deterministic shared datasets for a matrix run, built lazily."""

    def __init__(self, spec: MatrixSpec):
        self.spec = spec
        self.grammar = datagen.default_grammar()
        n = spec.n_train + spec.n_valid + spec.n_test
        base = datagen.generate_corpus(
            self.grammar, n, spec.compositional_fraction, spec.root_seed
        )
        ratios = (spec.n_train / n, spec.n_valid / n, spec.n_test / n)
        self._splits = datagen.split(base, ratios, spec.root_seed)
        self.pools = datagen.build_confusion_pools(self.grammar, spec.root_seed)
        self._cache: dict = {}
        self.vocab = vocab_mod.build_vocab(
            sorted({r.ref_text for r in self._splits[0]}),
            spec.target_pieces,
            self.grammar.ontology_tokens(),
        )

    def _with_hyps(self, records, tier: int):
        model = asr_stub.AsrErrorModel.for_target_wer(
            self.spec.tier_wer[tier], self.pools
        )
        return datagen.attach_hypotheses(
            records, model, derive_seed(self.spec.root_seed, "asr", tier)
        )

    def splits(self, tier: int, channel: str):
        """(train, valid, test); train/valid features come from ``channel``,
        test features are always natural."""
        key = (tier, channel)
        if key not in self._cache:
            chans = {
                name: datagen.CHANNELS[name](self.spec.feat_dim)
                for name in ("natural", channel)
            }
            out = []
            for i, (part, chan_name) in enumerate(
                zip(self._splits, (channel, channel, "natural"))
            ):
                recs = self._with_hyps(part, tier)
                recs = datagen.attach_features(
                    recs, chans[chan_name],
                    derive_seed(self.spec.root_seed, "feat", i),
                )
                out.append(recs)
            self._cache[key] = tuple(out)
        return self._cache[key]

    def stubs(self, tier: int):
        key = ("stubs", tier)
        if key not in self._cache:
            text_enc = asr_stub.FrozenTextEncoder(
                self.vocab.size, self.spec.model.text_source_dim,
                derive_seed(self.spec.root_seed, "stub-text", tier),
            )
            audio_enc = asr_stub.make_audio_encoder(
                tier, self.spec.feat_dim, self.spec.model.audio_source_dim,
                derive_seed(self.spec.root_seed, "stub-audio", tier),
            )
            self._cache[key] = (text_enc, audio_enc)
        return self._cache[key]


def run_cell(spec: MatrixSpec, cell: MatrixCell, data: _MatrixData | None = None) -> dict:
    """Train and evaluate one cell; returns the report row."""
    data = data or _MatrixData(spec)
    t0 = time.perf_counter()
    train_recs, valid_recs, test_recs = data.splits(cell.tier, cell.channel)
    text_enc, audio_enc = data.stubs(cell.tier)
    cfg = replace(spec.model, modality=cell.modality, vocab_size=data.vocab.size)
    model = DeliberationModel(
        cfg, data.vocab, text_enc, audio_enc,
        seed=derive_seed(spec.root_seed, "model", cell.tier, cell.modality,
                         cell.strategy, cell.channel, cell.seed),
    )
    strategy = "ref" if cell.strategy == "-" else cell.strategy
    tcfg = replace(
        spec.train, strategy=strategy,
        seed=derive_seed(spec.root_seed, "train", cell.tier, cell.modality,
                         cell.strategy, cell.channel, cell.seed),
    )
    result = training.train(model, train_recs, valid_recs, tcfg)
    report = evaluate(
        model, test_recs,
        meta={
            "tier": cell.tier,
            "modality": cell.modality,
            "strategy": cell.strategy,
            "channel": cell.channel,
            "seed": cell.seed,
        },
    )
    row = report.as_row()
    row["best_epoch"] = result.best_epoch
    row["valid_em"] = result.best_em
    row["wall_s"] = round(time.perf_counter() - t0, 2)
    return row


_WORKER_STATE: dict = {}


def _pool_init(spec: MatrixSpec):
    _WORKER_STATE["spec"] = spec
    _WORKER_STATE["data"] = _MatrixData(spec)


def _safe_run(spec: MatrixSpec, cell: MatrixCell, data) -> dict:
    try:
        return run_cell(spec, cell, data)
    except Exception as exc:  # keep the rest of the matrix alive
        return {
            "tier": cell.tier, "modality": cell.modality,
            "strategy": cell.strategy, "channel": cell.channel,
            "seed": cell.seed, "error": repr(exc),
        }


def _pool_run(cell: MatrixCell) -> dict:
    return _safe_run(_WORKER_STATE["spec"], cell, _WORKER_STATE["data"])


CSV_COLUMNS = ["tier", "modality", "strategy", "channel", "seed",
               "em_overall", "em_no_error", "em_error", "n_no_error", "n_error"]

#: large-scale reference anchors carried along with every matrix report
REFERENCE_ANCHORS = [
    "fusion+union vs text+union, overall EM: 73.87 vs 73.22 (tier 1)",
    "error bucket EM: audio 38.10 / fusion 31.42 / text 30.32 / pipeline 24.49",
    "mismatched-channel training deltas: fusion -1.91/-1.56, audio -2.89/-5.32",
]


def run_matrix(spec: MatrixSpec, out_dir, jobs: int = 1) -> list[dict]:
    """Run every cell (cached by digest), then write report.csv/report.txt.

    A failed cell is recorded as a row with an ``error`` field; it never
    aborts the rest of the matrix.
    """
    out = Path(out_dir)
    cache = out / "cache"
    cache.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    digests = [_cell_digest(spec, c) for c in cells]

    todo = []
    rows: dict[str, dict] = {}
    for cell, digest in zip(cells, digests):
        path = cache / f"{digest}.json"
        if path.exists():
            rows[digest] = json.loads(path.read_text())
        elif digest not in rows:
            rows[digest] = {}
            todo.append((cell, digest))

    def finish(digest: str, row: dict):
        rows[digest] = row
        (cache / f"{digest}.json").write_text(json.dumps(row, sort_keys=True))

    if jobs > 1 and len(todo) > 1:
        import multiprocessing as mp

        # fork keeps the parent's imports and state; spawn would re-execute
        # __main__, which breaks for stdin-driven scripts
        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods()
                             else "spawn")
        with ctx.Pool(jobs, initializer=_pool_init, initargs=(spec,)) as pool:
            results = pool.map(_pool_run, [c for c, _ in todo])
        for (cell, digest), row in zip(todo, results):
            finish(digest, row)
    else:
        data = _MatrixData(spec) if todo else None
        for cell, digest in todo:
            finish(digest, _safe_run(spec, cell, data))

    ordered = [dict(rows[d]) for d in digests]
    _write_reports(out, ordered)
    return ordered


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def _write_reports(out: Path, rows: list[dict]) -> None:
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if "error" in row:
            continue
        key = (row["tier"], row["modality"], row["strategy"], row["channel"])
        groups.setdefault(key, []).append(row)

    lines = []
    header = (f"{'tier':>4} {'modality':>8} {'strategy':>8} {'channel':>10} "
              f"{'seeds':>5} {'em':>7} {'em_clean':>8} {'em_err':>7}")
    lines.append(header)
    lines.append("-" * len(header))

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    for key in sorted(groups, key=lambda k: (k[0], k[3], k[1], k[2])):
        g = groups[key]
        lines.append(
            f"{key[0]:>4} {key[1]:>8} {key[2]:>8} {key[3]:>10} "
            f"{len(g):>5} {_fmt(mean([r['em_overall'] for r in g])):>7} "
            f"{_fmt(mean([r['em_no_error'] for r in g])):>8} "
            f"{_fmt(mean([r['em_error'] for r in g])):>7}"
        )
    failed = [r for r in rows if "error" in r]
    if failed:
        lines.append("")
        lines.append("failed cells:")
        for r in failed:
            lines.append(f"  {r['tier']}/{r['modality']}/{r['strategy']}"
                         f"/{r['channel']}/seed{r['seed']}: {r['error']}")
    lines.append("")
    lines.append("directional anchors (large-scale reference):")
    for a in REFERENCE_ANCHORS:
        lines.append("  " + a)
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def seed_mean(rows: list[dict], key: str, **filters) -> float | None:
    """Mean of ``key`` over rows matching the filters (None values dropped)."""
    vals = [
        r[key]
        for r in rows
        if "error" not in r
        and all(r.get(k) == v for k, v in filters.items())
        and r.get(key) is not None
    ]
    return sum(vals) / len(vals) if vals else None
