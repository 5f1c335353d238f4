"""End-to-end pipeline stages (corpus stats, extract, build-vocab,
prepare, train, decode, evaluate) plus one-dimensional sweeps.

Every stage writes its outputs atomically (temp file + rename) and
records a manifest with the configuration hash and input-file hashes,
so artifacts are reproducible and attributable. All stage randomness
derives from the master seed plus the stage name.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, replace

from . import metrics
from .corpus import (
    corpus_stats,
    drop_clones,
    load_corpus,
    split_for_id,
    write_stats_csv,
)
from .decoding import DecodeConfig, beam_search, greedy_decode
from .errors import DataError, UsageError
from .extract import build_input_text, rank, split_paragraphs
from .model import ModelConfig, MoEConfig, TransformerDecoderModel
from .subword import (
    SEP_ID,
    Vocabulary,
    assemble_example,
    build_vocab,
    load_vocab,
    save_vocab,
    split_assembled,
    truncate_input,
)
from .training import TrainConfig, train
from .words import word_tokens

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass
class PipelineConfig:
    corpus: str = ""
    workdir: str = ""
    seed: int = 0
    # extraction
    method: str = "tfidf"
    drop_clones: bool = True
    # tokenization
    vocab_size: int = 1000
    input_budget: int = 500  # L
    # model
    layer_pattern: str = "LMLML"
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 256
    block_size: int = 16
    compress_kernel: int = 3
    compress_stride: int = 3
    max_len: int = 0  # 0: size to the prepared data + decode budget
    moe_experts: int = 0  # 0: plain feed-forward everywhere
    moe_top_k: int = 2
    moe_layer_index: int = -1  # -1: middle layer
    # training
    steps: int = 500
    batch_size: int = 8
    base_lr: float = 0.05
    warmup_steps: int = 400
    train_scope: str = "all_positions"
    checkpoint_every: int = 0
    # decoding / evaluation
    decoder: str = "beam"
    beam_size: int = 4
    alpha: float = 0.6
    max_output_len: int = 64
    eval_split: str = "test"
    eval_scope: str = "output_only"


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


def _coerce(value: str, target_type):
    if target_type is bool:
        lowered = value.strip().lower()
        if lowered not in _BOOL_VALUES:
            raise UsageError(f"expected a boolean, got {value!r}")
        return _BOOL_VALUES[lowered]
    return target_type(value)


def config_to_kv(cfg: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def load_pipeline_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = {}
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{line_number}: expected `key = value`")
                key, value = line.split("=", 1)
                raw[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return apply_overrides(PipelineConfig(), raw)


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply key -> value overrides (values may be strings); unknown
    keys are usage errors."""
    types = {f.name: f.type for f in dataclasses.fields(cfg)}
    python_types = {"int": int, "float": float, "str": str, "bool": bool}
    updates = {}
    for key, value in overrides.items():
        if key not in types:
            raise UsageError(f"unknown configuration key {key!r}")
        target = python_types[types[key]] if isinstance(types[key], str) else types[key]
        updates[key] = _coerce(value, target) if isinstance(value, str) else value
    return replace(cfg, **updates)


def stage_seed(master_seed: int, stage: str) -> int:
    digest = hashlib.blake2b(f"{master_seed}\x1f{stage}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# artifact bookkeeping


def _path(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.workdir, name)


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(config_to_kv(cfg).encode()).hexdigest()


def _write_manifest(cfg: PipelineConfig, stage: str, inputs: list[str], outputs: list[str]):
    manifest_dir = _path(cfg, "manifests")
    os.makedirs(manifest_dir, exist_ok=True)
    record = {
        "stage": stage,
        "config_hash": _config_hash(cfg),
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs if os.path.isfile(p)},
        "outputs": [os.path.basename(p) for p in outputs],
    }
    atomic_write_text(
        os.path.join(manifest_dir, f"{stage}.json"), json.dumps(record, indent=2) + "\n"
    )


def _require(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run the `{produced_by}` stage first")
    return path


# ---------------------------------------------------------------------------
# stages


def stage_corpus_stats(cfg: PipelineConfig) -> dict:
    os.makedirs(cfg.workdir, exist_ok=True)
    table = corpus_stats(load_corpus(_require(cfg.corpus, "(corpus file)")))
    out = _path(cfg, "corpus_stats.csv")
    tmp = f"{out}.tmp"
    write_stats_csv(table, tmp)
    os.replace(tmp, out)
    _write_manifest(cfg, "build-corpus-stats", [cfg.corpus], [out])
    return table


def stage_extract(cfg: PipelineConfig) -> str:
    """Rank paragraphs per example and write one record per example:
    id, method, ranked paragraph references with scores, and the
    assembled abstractive-stage input text."""
    os.makedirs(cfg.workdir, exist_ok=True)
    _require(cfg.corpus, "(corpus file)")
    lines = []
    seen_ids = set()
    for example in load_corpus(cfg.corpus):
        if example.example_id in seen_ids:
            raise DataError(f"duplicate example id {example.example_id!r} in corpus")
        seen_ids.add(example.example_id)
        if cfg.drop_clones:
            example = drop_clones(example)
        paragraphs = split_paragraphs(example)
        if not paragraphs:
            log.warning("skipping %r: no paragraphs", example.title)
            continue
        ranking = rank(cfg.method, example, paragraphs)
        record = {
            "id": example.example_id,
            "method": cfg.method,
            "ranked_paragraphs": [
                {"doc_id": p.doc_id, "index": p.index, "score": s} for p, s in ranking.items
            ],
            "input_text": build_input_text(example.title, ranking),
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    out = _path(cfg, "extract.jsonl")
    atomic_write_text(out, "".join(line + "\n" for line in lines))
    _write_manifest(cfg, "extract", [cfg.corpus], [out])
    return out


def _read_extract(cfg: PipelineConfig) -> list[dict]:
    path = _require(_path(cfg, "extract.jsonl"), "extract")
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def stage_build_vocab(cfg: PipelineConfig) -> Vocabulary:
    """Shared input/target vocabulary, trained on the extracted input
    texts and the lead texts."""
    records = _read_extract(cfg)
    leads = {ex.example_id: ex.lead for ex in load_corpus(cfg.corpus)}
    texts = [r["input_text"] for r in records]
    texts += [leads[r["id"]] for r in records if r["id"] in leads]
    vocab = build_vocab(texts, cfg.vocab_size)
    out = _path(cfg, "vocab.txt")
    tmp = f"{out}.tmp"
    save_vocab(vocab, tmp)
    os.replace(tmp, out)
    _write_manifest(cfg, "build-vocab", [cfg.corpus, _path(cfg, "extract.jsonl")], [out])
    return vocab


def stage_prepare(cfg: PipelineConfig) -> dict[str, int]:
    """Tokenize, truncate inputs to the token budget, assemble combined
    sequences, and write per-split id-sequence, reference, and
    example-id files."""
    records = _read_extract(cfg)
    vocab = load_vocab(_require(_path(cfg, "vocab.txt"), "build-vocab"))
    leads = {ex.example_id: ex.lead for ex in load_corpus(cfg.corpus)}
    prepared = {split: [] for split in SPLITS}
    refs = {split: [] for split in SPLITS}
    ids = {split: [] for split in SPLITS}
    for record in records:
        example_id = record["id"]
        lead = leads.get(example_id, "")
        if not lead.strip():
            log.warning("skipping %r: empty lead", example_id)
            continue
        m = truncate_input(vocab.encode(record["input_text"]), cfg.input_budget)
        y = vocab.encode(lead)
        combined = assemble_example(m, y)
        split = split_for_id(example_id, cfg.seed)
        prepared[split].append(" ".join(str(t) for t in combined))
        refs[split].append(" ".join(lead.split()))
        ids[split].append(example_id)
    outputs = []
    for split in SPLITS:
        for stem, rows in (("prepared", prepared), ("refs", refs), ("ids", ids)):
            out = _path(cfg, f"{stem}.{split}.txt")
            atomic_write_text(out, "".join(r + "\n" for r in rows[split]))
            outputs.append(out)
    _write_manifest(
        cfg,
        "prepare",
        [cfg.corpus, _path(cfg, "extract.jsonl"), _path(cfg, "vocab.txt")],
        outputs,
    )
    return {split: len(prepared[split]) for split in SPLITS}


def read_prepared(path) -> list[tuple[list[int], int]]:
    """Parse prepared lines into (ids, n_input) pairs; n_input is the
    separator's position."""
    dataset = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ids = [int(t) for t in line.split()]
            if ids.count(SEP_ID) != 1:
                raise DataError(f"{path}:{line_number}: expected exactly one separator token")
            dataset.append((ids, ids.index(SEP_ID)))
    return dataset


def model_config_from(cfg: PipelineConfig, vocab_size: int, max_len: int) -> ModelConfig:
    moe = None
    if cfg.moe_experts > 0:
        moe = MoEConfig(
            num_experts=cfg.moe_experts,
            top_k=cfg.moe_top_k,
            replace_layer_index=None if cfg.moe_layer_index < 0 else cfg.moe_layer_index,
        )
    return ModelConfig(
        vocab_size=vocab_size,
        layer_pattern=cfg.layer_pattern,
        d_model=cfg.d_model,
        num_heads=cfg.num_heads,
        d_ff=cfg.d_ff,
        max_len=max_len,
        block_size=cfg.block_size,
        compress_kernel=cfg.compress_kernel,
        compress_stride=cfg.compress_stride,
        moe=moe,
        seed=stage_seed(cfg.seed, "model-init"),
    )


def _auto_max_len(cfg: PipelineConfig, datasets: list[list[tuple[list[int], int]]]) -> int:
    if cfg.max_len > 0:
        return cfg.max_len
    longest = max((len(ids) for ds in datasets for ids, _ in ds), default=2)
    decode_ceiling = cfg.input_budget + 1 + cfg.max_output_len + 1
    return max(longest, decode_ceiling)


def stage_train(cfg: PipelineConfig) -> float:
    """Train on the prepared train split; returns the final loss."""
    train_set = read_prepared(_require(_path(cfg, "prepared.train.txt"), "prepare"))
    if not train_set:
        raise DataError("prepared train split is empty")
    others = [
        read_prepared(_path(cfg, f"prepared.{s}.txt"))
        for s in ("dev", "test")
        if os.path.exists(_path(cfg, f"prepared.{s}.txt"))
    ]
    vocab = load_vocab(_require(_path(cfg, "vocab.txt"), "build-vocab"))
    model_cfg = model_config_from(cfg, vocab.size, _auto_max_len(cfg, [train_set] + others))
    model = TransformerDecoderModel(model_cfg)
    train_cfg = TrainConfig(
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        base_lr=cfg.base_lr,
        warmup_steps=cfg.warmup_steps,
        scope=cfg.train_scope,
        checkpoint_every=cfg.checkpoint_every,
        seed=stage_seed(cfg.seed, "train"),
    )
    checkpoint_dir = _path(cfg, "checkpoint")
    tmp_dir = f"{checkpoint_dir}.tmp"
    if os.path.exists(tmp_dir):
        shutil.rmtree(tmp_dir)
    train_log = train(model, train_set, train_cfg, checkpoint_dir=tmp_dir)
    if os.path.exists(checkpoint_dir):
        shutil.rmtree(checkpoint_dir)
    os.replace(tmp_dir, checkpoint_dir)
    log_path = _path(cfg, "train_log.csv")
    tmp = f"{log_path}.tmp"
    train_log.write_csv(tmp)
    os.replace(tmp, log_path)
    _write_manifest(
        cfg,
        "train",
        [_path(cfg, "prepared.train.txt"), _path(cfg, "vocab.txt")],
        [checkpoint_dir, log_path],
    )
    return train_log.final_loss


def _decode_config(cfg: PipelineConfig) -> DecodeConfig:
    return DecodeConfig(
        beam_size=cfg.beam_size, alpha=cfg.alpha, max_output_len=cfg.max_output_len
    )


def stage_decode(cfg: PipelineConfig) -> str:
    """Generate one detokenized output line per prepared example of the
    evaluation split."""
    split = cfg.eval_split
    prepared = read_prepared(_require(_path(cfg, f"prepared.{split}.txt"), "prepare"))
    vocab = load_vocab(_require(_path(cfg, "vocab.txt"), "build-vocab"))
    model = TransformerDecoderModel.load(_require(_path(cfg, "checkpoint"), "train"))
    decode_cfg = _decode_config(cfg)
    outputs = []
    for ids, _ in prepared:
        m, _ = split_assembled(ids)
        if cfg.decoder == "greedy" or cfg.beam_size == 1:
            out_ids = greedy_decode(model, m, decode_cfg)
        else:
            out_ids = beam_search(model, m, decode_cfg)
        outputs.append(" ".join(vocab.decode(out_ids).split()))
    out = _path(cfg, f"outputs.{split}.txt")
    atomic_write_text(out, "".join(line + "\n" for line in outputs))
    _write_manifest(
        cfg,
        "decode",
        [_path(cfg, f"prepared.{split}.txt"), _path(cfg, "vocab.txt")],
        [out],
    )
    return out


def stage_evaluate(cfg: PipelineConfig) -> dict:
    """ROUGE against references plus, when a checkpoint exists,
    per-wordpiece log-perplexity on the evaluation split."""
    split = cfg.eval_split
    outputs_path = _require(_path(cfg, f"outputs.{split}.txt"), "decode")
    refs_path = _require(_path(cfg, f"refs.{split}.txt"), "prepare")
    ids_path = _require(_path(cfg, f"ids.{split}.txt"), "prepare")
    with open(outputs_path, encoding="utf-8") as fh:
        outputs = fh.read().splitlines()
    with open(refs_path, encoding="utf-8") as fh:
        refs = fh.read().splitlines()
    with open(ids_path, encoding="utf-8") as fh:
        example_ids = fh.read().splitlines()

    nll_rows = None
    summary: dict = {}
    checkpoint_dir = _path(cfg, "checkpoint")
    if os.path.exists(checkpoint_dir):
        model = TransformerDecoderModel.load(checkpoint_dir)
        prepared = read_prepared(_path(cfg, f"prepared.{split}.txt"))
        nll_rows = []
        for ids, n_input in prepared:
            mask = metrics.scope_mask(len(ids), n_input, cfg.eval_scope)
            nll = float(model.loss(ids, n_input, scope=cfg.eval_scope).values)
            nll_rows.append((nll, int(mask.sum())))
        total_tokens = sum(count for _, count in nll_rows)
        if total_tokens:
            mean_nll = sum(nll * count for nll, count in nll_rows) / total_tokens
            summary["log_perplexity"] = mean_nll
            summary["perplexity"] = math.exp(mean_nll)

    report = metrics.evaluate_run(outputs, refs, example_ids, nll_rows)
    out = _path(cfg, "report.csv")
    tmp = f"{out}.tmp"
    metrics.write_report_csv(report, tmp)
    os.replace(tmp, out)
    summary["rouge_l_f1"] = report.mean_rouge_l_f1
    summary["rouge_1_f1"] = report.mean_rouge1_f1
    _write_manifest(cfg, "evaluate", [outputs_path, refs_path], [out])
    return summary


def extraction_recall(cfg: PipelineConfig, budget: int | None = None) -> float:
    """Mean unigram recall of the leads against the first L word tokens
    of the extracted input texts (an extraction-only quality signal)."""
    records = _read_extract(cfg)
    leads = {ex.example_id: ex.lead for ex in load_corpus(cfg.corpus)}
    budget = budget if budget is not None else cfg.input_budget
    recalls = []
    for record in records:
        lead = leads.get(record["id"], "")
        if not word_tokens(lead):
            continue
        candidate = " ".join(word_tokens(record["input_text"])[:budget])
        if not candidate:
            recalls.append(0.0)
            continue
        recalls.append(metrics.rouge_n(candidate, lead, 1).recall)
    if not recalls:
        raise DataError("extraction_recall: no scoreable examples")
    return float(sum(recalls) / len(recalls))


# ---------------------------------------------------------------------------
# pipeline driver and sweeps

STAGE_ORDER = ("extract", "build-vocab", "prepare", "train", "decode", "evaluate")

SWEEP_DIMENSIONS = {
    "L": "input_budget",
    "method": "method",
    "pattern": "layer_pattern",
}


def run_pipeline(cfg: PipelineConfig, until: str = "evaluate") -> dict:
    """Run stages in order up to and including ``until``."""
    if until not in STAGE_ORDER:
        raise UsageError(f"unknown stage {until!r}")
    results: dict = {}
    stage_fns = {
        "extract": stage_extract,
        "build-vocab": stage_build_vocab,
        "prepare": stage_prepare,
        "train": stage_train,
        "decode": stage_decode,
        "evaluate": stage_evaluate,
    }
    for stage in STAGE_ORDER:
        value = stage_fns[stage](cfg)
        if stage == "evaluate":
            results.update(value)
        if stage == until:
            break
    if until == "extract":
        results["extraction_recall"] = extraction_recall(cfg)
    return results


def sweep(
    cfg: PipelineConfig, dimension: str, values: list, until: str = "evaluate"
) -> list[dict]:
    """Run the pipeline once per value of one experiment dimension and
    collate comparison rows; failed cells are recorded and the sweep
    continues."""
    if dimension not in SWEEP_DIMENSIONS:
        raise UsageError(f"sweep dimension must be one of {sorted(SWEEP_DIMENSIONS)}")
    field_name = SWEEP_DIMENSIONS[dimension]
    rows = []
    for value in values:
        cell_dir = _path(cfg, os.path.join("sweep", f"{dimension}_{value}"))
        os.makedirs(cell_dir, exist_ok=True)
        coerced = int(value) if field_name == "input_budget" else str(value)
        cell_cfg = replace(cfg, workdir=cell_dir, **{field_name: coerced})
        row = {"dimension": dimension, "value": value, "status": "ok"}
        try:
            results = run_pipeline(cell_cfg, until=until)
            row["extraction_recall"] = extraction_recall(cell_cfg)
            row["log_perplexity"] = results.get("log_perplexity", "")
            row["rouge_l_f1"] = results.get("rouge_l_f1", "")
        except Exception as exc:  # record and continue
            log.warning("sweep cell %s=%s failed: %s", dimension, value, exc)
            row["status"] = f"error: {exc}"
        rows.append(row)
    out = _path(cfg, "sweep.csv")
    header = ["dimension", "value", "extraction_recall", "log_perplexity", "rouge_l_f1", "status"]
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    for row in rows:
        writer.writerow([row.get(h, "") for h in header])
    atomic_write_text(out, buffer.getvalue())
    return rows
