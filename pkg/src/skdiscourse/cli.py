"""Command-line pipeline: every stage from raw posts to the final
report, driven by one validated YAML config.

Artifacts land under the config's workdir: checkpoints/ for model
weights, exports/ for CSV/JSON outputs, manifests/ for run manifests
that tie each artifact back to the config hash. All CSV floats are
written with six decimals, so re-running a stage with the same config
and seed reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analytics import (
    InsufficientSideError,
    build_retweet_events,
    event_cutoff_epoch,
    fit_multinomial_logit,
    latency_rdd,
    loess_fit,
    weekly_prevalence,
    write_loess_csv,
    write_rdd_csv,
    write_timeline_csv,
)
from .annotation import (
    AnnotationStore,
    cohen_kappa,
    draw_training_sample,
    harmonize,
    label_distribution,
    read_labels_csv,
    write_labels_csv,
)
from .categories import CATEGORIES, COVERT, OVERT
from .checkpoints import Checkpoint, EncoderConfig
from .classify import (
    BiLSTMClassifier,
    CNNClassifier,
    EncoderClassifier,
    FinetuneConfig,
    TfidfLinearClassifier,
    finetune as finetune_checkpoint,
    load_model,
    predict_posts,
    prevalence_counts,
    read_predictions_csv,
    write_predictions_csv,
)
from .config import ConfigError, PipelineConfig, write_run_manifest
from .corpus import Corpus, ingest_posts
from .embeddings import EmbeddingTable
from .encoder import build_base_checkpoint
from .evaluation import repeated_kfold
from .network import (
    CommunityResult,
    assign_display_names,
    build_retweet_graph,
    engagement_by_community,
    walktrap_communities,
    write_edges_csv,
    write_nodes_csv,
)
from .pretraining import (
    PretrainConfig,
    extend_vocabulary,
    init_added_embeddings,
    load_token_specs,
    run_domain_pretraining,
)


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(),
    default=None,
    help="Pipeline YAML config (required by every command except demo-data).",
)
@click.version_option(version=__version__, prog_name="skdiscourse")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Three-class discourse classification pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


def _config(ctx: click.Context) -> PipelineConfig:
    path = ctx.obj.get("config_path")
    if not path:
        raise click.UsageError("a config file is required: skdiscourse -c config.yaml ...")
    try:
        return PipelineConfig.load(path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))


def _store_dir(cfg: PipelineConfig) -> Path:
    return cfg.workdir / cfg.section("corpus").get("store", "store")


def _open_store(cfg: PipelineConfig) -> Corpus:
    store = _store_dir(cfg)
    if not (store / "posts.jsonl").exists():
        raise click.ClickException(
            f"no corpus store at {store}; run 'ingest' first"
        )
    return Corpus.open(store)


def _exports(cfg: PipelineConfig) -> Path:
    path = cfg.workdir / "exports"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _checkpoint_dir(cfg: PipelineConfig, name: str) -> Path:
    return cfg.workdir / "checkpoints" / name


def _load_stage_checkpoint(cfg: PipelineConfig, preferred: list[str]) -> tuple[Checkpoint, Path]:
    for name in preferred:
        directory = _checkpoint_dir(cfg, name)
        if (directory / "manifest.json").exists():
            return Checkpoint.load(directory), directory
    raise click.ClickException(
        f"no checkpoint found under {cfg.workdir / 'checkpoints'}; "
        f"looked for {preferred}; run the earlier stages first"
    )


def _annotation_store(cfg: PipelineConfig) -> AnnotationStore:
    directory = cfg.workdir / cfg.section("annotation").get("store", "annotation")
    return AnnotationStore(directory)


def _load_labels_into_store(cfg: PipelineConfig, store: AnnotationStore) -> None:
    """Import offline coder labels (CSV) into the annotation store,
    creating rounds from the records when the store has none."""
    labels_csv = cfg.section("annotation").get("labels_csv")
    if not labels_csv:
        return
    records = read_labels_csv(cfg.resolve(labels_csv))
    coders = cfg.section("annotation").get("coders") or sorted(
        {r.coder_id for r in records}
    )
    by_round: dict[str, list] = {}
    for record in records:
        by_round.setdefault(record.round, []).append(record)
    for round_id, round_records in by_round.items():
        if round_id not in store.rounds:
            post_ids = list(dict.fromkeys(r.post_id for r in round_records))
            store.create_round(round_id, post_ids, coders)
        existing = {
            (r.coder_id, r.post_id, r.label, r.labeled_at)
            for r in store.rounds[round_id].events
        }
        for r in round_records:
            if (r.coder_id, r.post_id, r.label, r.labeled_at) not in existing:
                store.record_label(
                    round_id, r.coder_id, r.post_id, r.label, r.labeled_at
                )


def _gold_labels_path(cfg: PipelineConfig) -> Path:
    return _exports(cfg) / "gold_labels.csv"


def _read_gold(cfg: PipelineConfig) -> dict[str, str]:
    path = _gold_labels_path(cfg)
    if not path.exists():
        raise click.ClickException(f"no gold labels at {path}; run 'harmonize' first")
    gold: dict[str, str] = {}
    with path.open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            gold[row["post_id"]] = row["label"]
    return gold


def _predictions_path(cfg: PipelineConfig) -> Path:
    return _exports(cfg) / "predictions.csv"


def _read_predictions_map(cfg: PipelineConfig) -> dict[str, str]:
    path = _predictions_path(cfg)
    if not path.exists():
        raise click.ClickException(f"no predictions at {path}; run 'predict' first")
    return {p.post_id: p.label for p in read_predictions_csv(path)}


def _communities_path(cfg: PipelineConfig) -> Path:
    return _exports(cfg) / "communities.json"


def _read_communities(cfg: PipelineConfig) -> tuple[CommunityResult, dict[int, str]]:
    path = _communities_path(cfg)
    if not path.exists():
        raise click.ClickException(
            f"no community assignment at {path}; run 'communities' first"
        )
    data = json.loads(path.read_text(encoding="utf-8"))
    result = CommunityResult(
        assignment={k: int(v) for k, v in data["assignment"].items()},
        n_communities=data["n_communities"],
        modularity=data["modularity"],
        steps=data["steps"],
        seed=data.get("seed"),
    )
    names = {int(k): v for k, v in data["names"].items()}
    return result, names


def _cutoff_epoch(cfg: PipelineConfig) -> int:
    cutoff = cfg.section("analytics").get("cutoff") or {}
    if "epoch" in cutoff:
        return int(cutoff["epoch"])
    if "local_time" in cutoff and "timezone" in cutoff:
        return event_cutoff_epoch(cutoff["local_time"], cutoff["timezone"])
    raise click.ClickException(
        "analytics.cutoff needs either an epoch or local_time + timezone"
    )


# ---------------------------------------------------------------------------
# pipeline commands


@main.command()
@click.pass_context
def ingest(ctx: click.Context) -> None:
    """Load posts into the corpus store, validating every record."""
    cfg = _config(ctx)
    section = cfg.section("corpus")
    source = cfg.resolve(section["path"])
    fmt = section.get("format", "jsonl")
    store = Corpus.open(_store_dir(cfg))
    corpus = ingest_posts(source, fmt=fmt, store=store)
    report = corpus.ingest_report
    window = section.get("time_window")
    n_outside = 0
    if window:
        # the store keeps everything; stages read the filtered view
        inside = corpus.filter_by_time(window["start"], window["end"])
        n_outside = len(corpus) - len(inside)
    stats = corpus.stats()
    click.echo(f"accepted {report.accepted} posts ({report.duplicates} duplicates)")
    if report.malformed:
        click.echo(f"rejected {len(report.malformed)} malformed records:")
        for bad in report.malformed[:10]:
            click.echo(f"  line {bad.line}: {bad.reason}")
        if len(bad_rest := report.malformed[10:]) > 0:
            click.echo(f"  ... and {len(bad_rest)} more")
    if window:
        click.echo(f"{n_outside} posts outside the configured time window")
    click.echo(
        f"store now holds {stats.total_posts} posts, {stats.unique_posts} unique "
        f"content items, {stats.total_users} users"
    )
    write_run_manifest(cfg, "ingest", {"source": source}, [_store_dir(cfg) / "posts.jsonl"])


@main.command()
@click.pass_context
def sample(ctx: click.Context) -> None:
    """Draw the stratified training sample and set up labeling rounds."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    section = cfg.section("sample")
    fractions = section.get("fractions", (1 / 3, 1 / 3, 1 / 3))
    result = draw_training_sample(
        corpus,
        n_total=section["n_total"],
        keywords=section.get("keywords", ()),
        markers=section.get("markers", ()),
        seed=cfg.seed,
        fractions=fractions,
    )
    out = _exports(cfg) / "sample.csv"
    with out.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("post_id", "stratum"))
        for item in result.items:
            writer.writerow((item.post_id, item.stratum))
    click.echo(f"quotas {result.quotas}; drawn {result.drawn}")
    for stratum, short in result.shortfalls.items():
        if short:
            click.echo(f"stratum {stratum!r} short by {short}; moved to random")

    annotation = cfg.section("annotation")
    store = _annotation_store(cfg)
    round_sizes = annotation.get("rounds", [len(result.items)])
    coders = annotation.get("coders", ["coder_a", "coder_b"])
    post_ids = result.post_ids
    cursor = 0
    created = []
    for i, size in enumerate(round_sizes, start=1):
        if cursor >= len(post_ids):
            break
        take = post_ids[cursor : cursor + size]
        if i == len(round_sizes):
            take = post_ids[cursor:]  # final round absorbs the remainder
        round_id = f"round{i}"
        if round_id not in store.rounds:
            store.create_round(round_id, take, coders)
            created.append((round_id, len(take)))
        cursor += len(take)
    for round_id, size in created:
        click.echo(f"created {round_id} with {size} posts for {coders}")
    write_run_manifest(cfg, "sample", {"store": _store_dir(cfg) / "posts.jsonl"}, [out])


@main.command("annotate-serve")
@click.option("--host", default=None, help="Bind host (default from config or 127.0.0.1).")
@click.option("--port", default=None, type=int, help="Bind port (default from config or 8765).")
@click.pass_context
def annotate_serve(ctx: click.Context, host: str | None, port: int | None) -> None:
    """Serve the annotation HTTP API for the configured rounds."""
    import uvicorn

    from .server import create_app

    cfg = _config(ctx)
    corpus = _open_store(cfg)
    store = _annotation_store(cfg)
    _load_labels_into_store(cfg, store)
    if not store.rounds:
        raise click.ClickException("no annotation rounds; run 'sample' first")
    codebook_path = cfg.section("annotation").get("codebook")
    codebook = None
    if codebook_path:
        import yaml as _yaml

        codebook = _yaml.safe_load(
            cfg.resolve(codebook_path).read_text(encoding="utf-8")
        )
    app = create_app(store, corpus, codebook)
    serve = cfg.section("serve")
    uvicorn.run(
        app,
        host=host or serve.get("host", "127.0.0.1"),
        port=port or serve.get("port", 8765),
        log_level="warning",
    )


@main.command()
@click.pass_context
def kappa(ctx: click.Context) -> None:
    """Inter-coder agreement per round and pooled."""
    cfg = _config(ctx)
    store = _annotation_store(cfg)
    _load_labels_into_store(cfg, store)
    if not store.rounds:
        raise click.ClickException("no labeled rounds found")
    rows = []
    pooled_a: list[str] = []
    pooled_b: list[str] = []
    for round_id in sorted(store.rounds):
        rnd = store.rounds[round_id]
        if len(rnd.coders) != 2:
            continue
        by_coder = rnd.labels_by_coder()
        first, second = rnd.coders
        shared = [
            p
            for p in rnd.post_ids
            if p in by_coder[first] and p in by_coder[second]
        ]
        if not shared:
            click.echo(f"{round_id}: no posts labeled by both coders yet")
            continue
        a = [by_coder[first][p] for p in shared]
        b = [by_coder[second][p] for p in shared]
        result = cohen_kappa(a, b)
        pooled_a.extend(a)
        pooled_b.extend(b)
        rows.append((round_id, result))
        degenerate = " (degenerate marginals)" if result.degenerate else ""
        click.echo(
            f"{round_id}: kappa={result.kappa:.6f} "
            f"(observed={result.observed_agreement:.6f}, "
            f"expected={result.expected_agreement:.6f}, n={result.n_items})"
            + degenerate
        )
    if pooled_a:
        pooled = cohen_kappa(pooled_a, pooled_b)
        click.echo(f"pooled: kappa={pooled.kappa:.6f} (n={pooled.n_items})")
        rows.append(("pooled", pooled))
    out = _exports(cfg) / "kappa.csv"
    with out.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("round", "kappa", "observed", "expected", "n_items", "degenerate"))
        for round_id, result in rows:
            writer.writerow(
                (
                    round_id,
                    f"{result.kappa:.6f}",
                    f"{result.observed_agreement:.6f}",
                    f"{result.expected_agreement:.6f}",
                    result.n_items,
                    "true" if result.degenerate else "false",
                )
            )
    write_run_manifest(cfg, "kappa", {}, [out])


@main.command("harmonize")
@click.pass_context
def harmonize_cmd(ctx: click.Context) -> None:
    """Merge the two coders' labels into gold labels (unanimity rule)."""
    cfg = _config(ctx)
    store = _annotation_store(cfg)
    _load_labels_into_store(cfg, store)
    if not store.rounds:
        raise click.ClickException("no labeled rounds found")
    gold_rows: list[tuple[str, str, str]] = []
    queue_rows: list[tuple[str, str, str, str]] = []
    n_excluded = 0
    for round_id in sorted(store.rounds):
        rnd = store.rounds[round_id]
        result = harmonize(rnd.post_ids, rnd.labels_by_coder())
        for post_id in rnd.post_ids:
            if post_id in result.gold:
                g = result.gold[post_id]
                gold_rows.append((post_id, g.label, g.origin))
        for disagreement in result.adjudication_queue:
            coders = sorted(disagreement.labels)
            queue_rows.append(
                (
                    disagreement.post_id,
                    coders[0],
                    disagreement.labels[coders[0]],
                    f"{coders[1]}={disagreement.labels[coders[1]]}",
                )
            )
        n_excluded += len(result.excluded)

    gold_path = _gold_labels_path(cfg)
    with gold_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("post_id", "label", "origin"))
        writer.writerows(gold_rows)
    queue_path = _exports(cfg) / "adjudication.csv"
    with queue_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("post_id", "coder", "label", "other"))
        writer.writerows(queue_rows)

    distribution = label_distribution([label for _, label, _ in gold_rows])
    click.echo(f"gold labels: {len(gold_rows)} posts ({n_excluded} excluded)")
    for row in distribution:
        click.echo(f"  {row.category}: {row.count} ({row.percent:.1f}%)")
    click.echo(f"adjudication queue: {len(queue_rows)} disagreements (defaulted)")
    write_run_manifest(cfg, "harmonize", {}, [gold_path, queue_path])


# ---------------------------------------------------------------------------
# model stages


@main.command("init-base")
@click.pass_context
def init_base(ctx: click.Context) -> None:
    """Build the base checkpoint: vocabulary + fresh encoder weights."""
    cfg = _config(ctx)
    vocab_cfg = cfg.section("vocab")
    source = vocab_cfg.get("base_corpus")
    if not source:
        raise click.ClickException("vocab.base_corpus is required for init-base")
    texts = [
        line
        for line in cfg.resolve(source).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    encoder_cfg = EncoderConfig(**cfg.section("encoder")) if cfg.get("encoder") else EncoderConfig()
    ckpt = build_base_checkpoint(
        texts,
        vocab_size=vocab_cfg.get("size", 2000),
        config=encoder_cfg,
        seed=cfg.seed,
    )
    out = _checkpoint_dir(cfg, "base")
    ckpt.save(out)
    click.echo(
        f"base checkpoint {ckpt.checkpoint_id} with {len(ckpt.vocab)} tokens -> {out}"
    )
    write_run_manifest(cfg, "init-base", {"base_corpus": cfg.resolve(source)}, [out])


@main.command("extend-vocab")
@click.pass_context
def extend_vocab(ctx: click.Context) -> None:
    """Add domain terms as whole tokens, donor-seeding their embeddings."""
    cfg = _config(ctx)
    specs_path = cfg.section("vocab").get("token_specs")
    if not specs_path:
        raise click.ClickException("vocab.token_specs is required for extend-vocab")
    specs = load_token_specs(cfg.resolve(specs_path))
    ckpt, _ = _load_stage_checkpoint(cfg, ["base"])
    before = len(ckpt.vocab)
    extended, report = extend_vocabulary(ckpt, specs, seed=cfg.seed)
    accepted_specs = [s for s in specs if s.surface in set(report.accepted)]
    extended = init_added_embeddings(extended, accepted_specs)
    out = _checkpoint_dir(cfg, "extended")
    extended.save(out)
    click.echo(f"vocabulary {before} -> {len(extended.vocab)} tokens")
    for surface in report.accepted:
        click.echo(f"  added {surface!r}")
    for surface, reason in report.rejected:
        click.echo(f"  rejected {surface!r}: {reason}")
    write_run_manifest(
        cfg, "extend-vocab", {"token_specs": cfg.resolve(specs_path)}, [out]
    )


@main.command()
@click.pass_context
def pretrain(ctx: click.Context) -> None:
    """Masked-language-model pretraining on the in-domain corpus."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    texts = [p.text for p in corpus.originals()]
    ckpt, _ = _load_stage_checkpoint(cfg, ["extended", "base"])
    section = dict(cfg.section("pretrain"))
    section.setdefault("seed", cfg.seed)
    config = PretrainConfig(**section)
    pretrained, log = run_domain_pretraining(ckpt, texts, config)
    out = _checkpoint_dir(cfg, "pretrained")
    pretrained.save(out)
    for warning in log.warnings:
        click.echo(f"warning: {warning}")
    click.echo(
        f"{len(log.steps)} steps; held-out MLM loss "
        f"{log.heldout_before:.4f} -> {log.heldout_after:.4f}"
    )
    write_run_manifest(cfg, "pretrain", {"store": _store_dir(cfg) / "posts.jsonl"}, [out])


@main.command("finetune")
@click.pass_context
def finetune_cmd(ctx: click.Context) -> None:
    """Fine-tune the encoder on the harmonized gold labels."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    gold = _read_gold(cfg)
    texts, labels = [], []
    missing = []
    for post_id, label in gold.items():
        post = corpus.get(post_id)
        if post is None:
            missing.append(post_id)
            continue
        texts.append(post.text)
        labels.append(label)
    if missing:
        click.echo(f"warning: {len(missing)} gold posts missing from the corpus")
    ckpt, _ = _load_stage_checkpoint(cfg, ["pretrained", "extended", "base"])
    section = dict(cfg.section("finetune"))
    section.setdefault("seed", cfg.seed)
    config = FinetuneConfig(**section)
    tuned, log = finetune_checkpoint(ckpt, texts, labels, config)
    out = _checkpoint_dir(cfg, "finetuned")
    tuned.save(out)
    for entry in log:
        click.echo(
            f"epoch {entry['epoch']}: loss={entry['loss']:.4f} "
            f"train_accuracy={entry['train_accuracy']:.4f}"
        )
    write_run_manifest(cfg, "finetune", {"gold": _gold_labels_path(cfg)}, [out])


def _build_estimator(cfg: PipelineConfig, name: str, texts: list[str]):
    seed = cfg.seed
    finetune_section = dict(cfg.section("finetune"))
    overrides = cfg.section("evaluate").get("overrides", {}).get(name, {})
    if name == "logistic":
        return TfidfLinearClassifier(kind="logistic", seed=seed)
    if name == "svm":
        return TfidfLinearClassifier(kind="svm", seed=seed)
    if name in ("cnn", "bilstm"):
        emb_cfg = cfg.section("embeddings")
        if emb_cfg.get("path"):
            table = EmbeddingTable.load_word2vec_text(cfg.resolve(emb_cfg["path"]))
        else:
            table = EmbeddingTable.from_texts(
                texts, dim=emb_cfg.get("dim", 50), seed=seed
            )
        cls = CNNClassifier if name == "cnn" else BiLSTMClassifier
        epochs = overrides.get("epochs", 30)
        return cls(embeddings=table, epochs=epochs, seed=seed)
    if name == "encoder":
        ckpt, _ = _load_stage_checkpoint(cfg, ["pretrained", "extended", "base"])
        params = {
            "batch_size": finetune_section.get("batch_size", 32),
            "learning_rate": finetune_section.get("learning_rate", 2e-5),
            "max_seq_len": finetune_section.get("max_seq_len", 85),
            "epochs": overrides.get("epochs", finetune_section.get("epochs", 4)),
            "class_weighting": finetune_section.get("class_weighting", False),
            "seed": seed,
        }
        return EncoderClassifier(checkpoint=ckpt, **params)
    raise click.ClickException(f"unknown model {name!r}")


@main.command()
@click.pass_context
def evaluate(ctx: click.Context) -> None:
    """Repeated stratified k-fold cross-validation for the configured
    models."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    gold = _read_gold(cfg)
    texts, labels = [], []
    for post_id, label in gold.items():
        post = corpus.get(post_id)
        if post is not None:
            texts.append(post.text)
            labels.append(label)
    section = cfg.section("evaluate")
    k = section.get("k", 10)
    repeats = section.get("repeats", 10)
    models = section.get("models", ["logistic", "svm", "cnn", "bilstm", "encoder"])
    rows = []
    detail: dict[str, dict] = {}
    for name in models:
        overrides = section.get("overrides", {}).get(name, {})
        model_k = overrides.get("k", k)
        model_repeats = overrides.get("repeats", repeats)
        estimator = _build_estimator(cfg, name, texts)
        click.echo(f"evaluating {name} ({model_k}-fold x {model_repeats})...")
        report = repeated_kfold(
            texts, labels, estimator, k=model_k, repeats=model_repeats, seed=cfg.seed
        )
        agg = report.aggregate
        for category in CATEGORIES:
            scores = agg.per_class[category]
            rows.append(
                (
                    name,
                    category,
                    scores.precision,
                    scores.recall,
                    scores.f1,
                    scores.accuracy,
                )
            )
        rows.append(
            (name, "macro", agg.macro_precision, agg.macro_recall, agg.macro_f1, agg.overall_accuracy)
        )
        click.echo(
            f"  macro F1 {agg.macro_f1:.4f}, overall accuracy {agg.overall_accuracy:.4f}"
        )
        for note in report.notes:
            click.echo(f"  note: {note}")
        detail[name] = {
            "k": model_k,
            "repeats": model_repeats,
            "stratified": report.stratified,
            "notes": report.notes,
            "folds": [
                {
                    "repeat": f.repeat,
                    "fold": f.fold,
                    "n_test": f.n_test,
                    "macro_f1": f.metrics.macro_f1,
                    "overall_accuracy": f.metrics.overall_accuracy,
                }
                for f in report.folds
            ],
        }
    out = _exports(cfg) / "evaluation.csv"
    with out.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("model", "category", "precision", "recall", "f1", "accuracy"))
        for name, category, precision, recall, f1, accuracy in rows:
            writer.writerow(
                (
                    name,
                    category,
                    f"{precision:.6f}",
                    f"{recall:.6f}",
                    f"{f1:.6f}",
                    f"{accuracy:.6f}",
                )
            )
    detail_path = _exports(cfg) / "evaluation.json"
    detail_path.write_text(
        json.dumps(detail, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    write_run_manifest(cfg, "evaluate", {"gold": _gold_labels_path(cfg)}, [out, detail_path])


@main.command()
@click.option(
    "--model",
    "model_dir",
    default=None,
    help="Model directory (default: the fine-tuned checkpoint).",
)
@click.pass_context
def predict(ctx: click.Context, model_dir: str | None) -> None:
    """Classify every unique content post and export the probabilities."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    directory = Path(model_dir) if model_dir else _checkpoint_dir(cfg, "finetuned")
    if not (directory / "manifest.json").exists():
        raise click.ClickException(f"no model at {directory}")
    model = load_model(directory)
    originals = corpus.originals()
    predictions = predict_posts(model, originals)
    out = _predictions_path(cfg)
    write_predictions_csv(predictions, out)
    counts = prevalence_counts(predictions)
    total = sum(counts.values())
    prevalence_path = _exports(cfg) / "prevalence.csv"
    with prevalence_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("category", "count", "share"))
        for category in CATEGORIES:
            writer.writerow(
                (category, counts[category], f"{counts[category] / total:.6f}")
            )
    n_empty = sum(1 for p in predictions if p.empty_input)
    click.echo(f"predicted {total} posts ({n_empty} with empty tokenization)")
    for category in CATEGORIES:
        click.echo(f"  {category}: {counts[category]} ({100 * counts[category] / total:.1f}%)")
    write_run_manifest(cfg, "predict", {"model": directory / "manifest.json"}, [out, prevalence_path])


# ---------------------------------------------------------------------------
# network + analytics stages


@main.command()
@click.pass_context
def graph(ctx: click.Context) -> None:
    """Build the directed weighted retweet graph."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    section = cfg.section("network")
    rg = build_retweet_graph(
        corpus, include_isolated=section.get("include_isolated", False)
    )
    edges_path = _exports(cfg) / "edges.csv"
    nodes_path = _exports(cfg) / "nodes.csv"
    write_edges_csv(rg, edges_path)
    write_nodes_csv(rg, nodes_path)
    click.echo(
        f"{rg.digraph.number_of_nodes()} nodes, {rg.digraph.number_of_edges()} edges; "
        f"dropped {rg.dropped_dangling} dangling retweets; "
        f"{len(rg.self_loop_users)} self-retweeting users"
    )
    for node, in_degree in rg.influence_ranking(top=5):
        click.echo(f"  {node}: weighted in-degree {in_degree:.0f}")
    write_run_manifest(
        cfg, "graph", {"store": _store_dir(cfg) / "posts.jsonl"}, [edges_path, nodes_path]
    )


@main.command()
@click.pass_context
def communities(ctx: click.Context) -> None:
    """Random-walk community detection on the retweet graph."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    section = cfg.section("network")
    rg = build_retweet_graph(
        corpus, include_isolated=section.get("include_isolated", False)
    )
    result = walktrap_communities(rg, steps=section.get("steps", 4), seed=cfg.seed)
    seed_accounts = section.get("seed_accounts", {})
    names = assign_display_names(result, seed_accounts)
    out = _communities_path(cfg)
    out.write_text(
        json.dumps(
            {
                "assignment": result.assignment,
                "names": {str(k): v for k, v in names.items()},
                "n_communities": result.n_communities,
                "modularity": result.modularity,
                "steps": result.steps,
                "seed": result.seed,
                "sizes": result.sizes(),
            },
            indent=2,
            ensure_ascii=False,
        )
        + "\n",
        encoding="utf-8",
    )
    nodes_path = _exports(cfg) / "nodes.csv"
    write_nodes_csv(rg, nodes_path, communities=result)
    click.echo(
        f"{result.n_communities} communities, modularity {result.modularity:.4f}"
    )
    sizes = result.sizes()
    for cid, size in sorted(enumerate(sizes), key=lambda x: -x[1])[:6]:
        click.echo(f"  {names.get(cid, cid)}: {size} members")
    write_run_manifest(cfg, "communities", {}, [out, nodes_path])


@main.command()
@click.pass_context
def mnl(ctx: click.Context) -> None:
    """Multinomial logit: category odds vs author influence and
    community."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    labels = _read_predictions_map(cfg)
    result, names = _read_communities(cfg)
    rg = build_retweet_graph(corpus)
    log_indegree, community, outcome = [], [], []
    for post in corpus.originals():
        label = labels.get(post.post_id)
        if label is None:
            continue
        cid = result.assignment.get(post.author_id)
        community.append(names.get(cid, "unassigned") if cid is not None else "unassigned")
        in_deg = rg.in_degree(post.author_id) if post.author_id in rg.digraph else 0.0
        log_indegree.append(float(np.log1p(in_deg)))
        outcome.append(label)
    model = fit_multinomial_logit(log_indegree, community, outcome)
    out = _exports(cfg) / "mnl_coefficients.csv"
    with out.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("term", "category", "estimate", "se", "z", "p_value"))
        for coefficient in model.table:
            writer.writerow(
                (
                    coefficient.term,
                    coefficient.category,
                    f"{coefficient.estimate:.6f}",
                    f"{coefficient.se:.6f}",
                    f"{coefficient.z:.6f}",
                    f"{coefficient.p_value:.6f}",
                )
            )
    summary = {
        "n_obs": model.n_obs,
        "converged": model.converged,
        "criterion": model.criterion,
        "n_iter": model.n_iter,
        "loglik": model.loglik,
        "reference": model.reference,
        "community_levels": model.community_levels,
        "separation_flag": model.separation_flag,
    }
    summary_path = _exports(cfg) / "mnl_summary.json"
    summary_path.write_text(
        json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    click.echo(
        f"fit on {model.n_obs} posts; converged={model.converged} "
        f"({model.criterion}, {model.n_iter} iterations)"
    )
    if model.separation_flag:
        click.echo("warning: possible separation; estimates flagged unstable")
    for coefficient in model.table:
        if coefficient.term != "intercept":
            click.echo(
                f"  {coefficient.category} ~ {coefficient.term}: "
                f"{coefficient.estimate:+.4f} (se {coefficient.se:.4f}, p {coefficient.p_value:.4f})"
            )
    write_run_manifest(cfg, "mnl", {"predictions": _predictions_path(cfg)}, [out, summary_path])


@main.command()
@click.pass_context
def timeline(ctx: click.Context) -> None:
    """Weekly covert/overt prevalence timeline."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    labels = _read_predictions_map(cfg)
    created_at = {p.post_id: p.created_at for p in corpus}
    points = weekly_prevalence(labels, created_at)
    out = _exports(cfg) / "timeline.csv"
    write_timeline_csv(points, out)
    click.echo(f"{len(points)} weeks with classified posts")
    for point in points[:5]:
        click.echo(
            f"  {point.iso_label}: covert {point.pct_covert:.1f}%, "
            f"overt {point.pct_overt:.1f}% of {point.n_posts}"
        )
    write_run_manifest(cfg, "timeline", {"predictions": _predictions_path(cfg)}, [out])


@main.command()
@click.pass_context
def rdd(ctx: click.Context) -> None:
    """Discontinuity in retweet latency at the event cutoff."""
    cfg = _config(ctx)
    corpus = _open_store(cfg)
    labels = _read_predictions_map(cfg)
    communities_result, names = _read_communities(cfg)
    section = cfg.section("analytics")
    cutoff = _cutoff_epoch(cfg)
    window = section.get("window_seconds", 4 * 3600)
    display_window = section.get("display_window_seconds", 6 * 3600)
    span = section.get("loess_span", 0.75)
    min_side = section.get("min_side", 2)

    events, report = build_retweet_events(corpus, labels, communities_result)
    click.echo(
        f"{report.n_events} retweet events "
        f"({report.n_negative_latency} negative-latency, "
        f"{report.n_missing_source} missing-source, "
        f"{report.n_unlabeled_source} unlabeled excluded)"
    )

    name_by_id = dict(names)
    community_ids = sorted(name_by_id)
    rows = []
    for category in (COVERT, OVERT):
        cells: list[tuple[str, int | None]] = [("all", None)]
        cells += [(name_by_id[cid], cid) for cid in community_ids]
        for display, cid in cells:
            try:
                result = latency_rdd(
                    events, cutoff, window, category=category,
                    community=cid, min_side=min_side,
                )
                rows.append(
                    {
                        "category": category,
                        "community": display,
                        "estimate": result.estimate,
                        "se": result.se,
                        "p_value": result.p_value,
                        "n_left": result.n_left,
                        "n_right": result.n_right,
                    }
                )
                rel = (
                    f", {result.relative_change_pct:+.1f}% of baseline"
                    if result.relative_change_pct is not None
                    else ""
                )
                click.echo(
                    f"  {category}/{display}: {result.estimate:+.2f}s "
                    f"(se {result.se:.2f}, p {result.p_value:.4f}, "
                    f"n {result.n_left}+{result.n_right}{rel})"
                )
            except InsufficientSideError as exc:
                rows.append(
                    {
                        "category": category,
                        "community": display,
                        "n_left": exc.n_left,
                        "n_right": exc.n_right,
                    }
                )
                click.echo(f"  {category}/{display}: insufficient data ({exc})")
    out = _exports(cfg) / "rdd.csv"
    write_rdd_csv(rows, out)

    # display smoother per side for each analyzed category
    loess_rows: list[tuple[float, float, str]] = []
    for category in (COVERT, OVERT):
        selected = [
            e
            for e in events
            if e.category == category
            and abs(e.retweeted_at - cutoff) <= display_window
        ]
        for side, side_events in (
            ("pre", [e for e in selected if e.retweeted_at < cutoff]),
            ("post", [e for e in selected if e.retweeted_at >= cutoff]),
        ):
            if len(side_events) < 3:
                continue
            offsets = [e.retweeted_at - cutoff for e in side_events]
            latencies = [e.latency_seconds for e in side_events]
            fit = loess_fit(offsets, latencies, span=span)
            for offset, fitted in sorted(zip(offsets, fit.fitted)):
                loess_rows.append((offset, fitted, f"{category}_{side}"))
    loess_path = _exports(cfg) / "latency_loess.csv"
    write_loess_csv(loess_rows, loess_path)
    write_run_manifest(cfg, "rdd", {"predictions": _predictions_path(cfg)}, [out, loess_path])


@main.command()
@click.pass_context
def report(ctx: click.Context) -> None:
    """Collect every produced artifact into one report."""
    cfg = _config(ctx)
    exports = _exports(cfg)
    sections: dict[str, object] = {"config_hash": cfg.config_hash()}
    missing: list[str] = []

    store_path = _store_dir(cfg) / "posts.jsonl"
    if store_path.exists():
        corpus = Corpus.open(_store_dir(cfg))
        stats = corpus.stats()
        sections["corpus"] = {
            "total_posts": stats.total_posts,
            "unique_posts": stats.unique_posts,
            "total_users": stats.total_users,
            "earliest": stats.earliest,
            "latest": stats.latest,
        }
    else:
        missing.append("ingest")

    def read_csv_rows(name: str) -> list[dict] | None:
        path = exports / name
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))

    for key, filename in (
        ("kappa", "kappa.csv"),
        ("evaluation", "evaluation.csv"),
        ("prevalence", "prevalence.csv"),
        ("rdd", "rdd.csv"),
        ("timeline", "timeline.csv"),
    ):
        rows = read_csv_rows(filename)
        if rows is None:
            missing.append(key)
        else:
            sections[key] = rows

    gold_path = _gold_labels_path(cfg)
    if gold_path.exists():
        with gold_path.open("r", encoding="utf-8", newline="") as handle:
            gold_rows = list(csv.DictReader(handle))
        distribution = label_distribution([r["label"] for r in gold_rows])
        sections["gold_distribution"] = [
            {"category": d.category, "count": d.count, "percent": round(d.percent, 6)}
            for d in distribution
        ]
    else:
        missing.append("harmonize")

    communities_path = _communities_path(cfg)
    if communities_path.exists():
        data = json.loads(communities_path.read_text(encoding="utf-8"))
        sections["communities"] = {
            "n_communities": data["n_communities"],
            "modularity": data["modularity"],
            "sizes": data["sizes"],
            "names": data["names"],
        }
        predictions_path = _predictions_path(cfg)
        if predictions_path.exists() and store_path.exists():
            predictions = {
                p.post_id: p.label for p in read_predictions_csv(predictions_path)
            }
            result = CommunityResult(
                assignment={k: int(v) for k, v in data["assignment"].items()},
                n_communities=data["n_communities"],
                modularity=data["modularity"],
                steps=data["steps"],
            )
            names = {int(k): v for k, v in data["names"].items()}
            engagement = {}
            for category in (COVERT, OVERT):
                rows = engagement_by_community(
                    corpus, predictions, result, category, names
                )
                engagement[category] = [
                    {
                        "community": r.display_name,
                        "engaged_users": r.engaged_users,
                        "retweets": r.retweet_count,
                        "share": round(r.share, 6),
                    }
                    for r in rows
                ]
            sections["engagement"] = engagement
    else:
        missing.append("communities")

    mnl_path = exports / "mnl_summary.json"
    if mnl_path.exists():
        sections["mnl"] = json.loads(mnl_path.read_text(encoding="utf-8"))
        sections["mnl_coefficients"] = read_csv_rows("mnl_coefficients.csv")
    else:
        missing.append("mnl")

    sections["missing_stages"] = sorted(set(missing))
    out = exports / "report.json"
    out.write_text(
        json.dumps(sections, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    click.echo(f"report written to {out}")
    if missing:
        click.echo(f"stages without artifacts: {', '.join(sorted(set(missing)))}")
    write_run_manifest(cfg, "report", {}, [out])


# ---------------------------------------------------------------------------
# demo data


@main.command("demo-data")
@click.option("--out", "out_dir", default="demo", help="Output directory.")
@click.option("--seed", default=42, type=int, help="Generator seed.")
def demo_data(out_dir: str, seed: int) -> None:
    """Generate the bundled synthetic demo corpus and a ready config."""
    from .synthetic import DEMO_CUTOFF_LOCAL, DEMO_TIMEZONE, generate_demo_data

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_demo_data(seed=seed)

    corpus = Corpus(data.posts)
    corpus.export_jsonl(out / "corpus.jsonl")
    (out / "base_corpus.txt").write_text(
        "\n".join(data.base_corpus) + "\n", encoding="utf-8"
    )
    write_labels_csv(data.coder_events, out / "coder_labels.csv")
    specs_yaml = "\n".join(
        "- surface: {!r}\n  donors: [{}]".format(
            spec.surface, ", ".join(repr(d) for d in spec.donors)
        )
        for spec in data.token_specs
    )
    (out / "token_specs.yaml").write_text(specs_yaml + "\n", encoding="utf-8")
    (out / "truth.json").write_text(
        json.dumps(
            {
                "true_labels": data.true_labels,
                "true_communities": data.true_communities,
                "cutoff_epoch": data.cutoff_epoch,
            },
            indent=2,
            ensure_ascii=False,
        )
        + "\n",
        encoding="utf-8",
    )

    config = {
        "seed": seed,
        "workdir": "run",
        "corpus": {"path": "corpus.jsonl", "format": "jsonl", "store": "store"},
        "sample": {
            "n_total": 900,
            "keywords": data.keywords,
            "markers": data.markers,
        },
        "annotation": {
            "coders": ["coder_a", "coder_b"],
            "rounds": [300, 300, 300],
            "labels_csv": "coder_labels.csv",
        },
        "vocab": {
            "base_corpus": "base_corpus.txt",
            "size": 600,
            "token_specs": "token_specs.yaml",
        },
        "encoder": {
            "hidden_size": 64,
            "num_layers": 2,
            "num_heads": 4,
            "ffn_size": 128,
            "max_seq_len": 96,
            "dropout": 0.1,
        },
        "pretrain": {
            "epochs": 2,
            "batch_size": 16,
            "learning_rate": 0.001,
            "max_seq_len": 48,
            "mask_rate": 0.15,
        },
        "finetune": {
            "batch_size": 32,
            "learning_rate": 5.0e-04,
            "max_seq_len": 85,
            "epochs": 6,
            "class_weighting": True,
        },
        "evaluate": {
            "k": 3,
            "repeats": 1,
            "models": ["logistic", "svm", "cnn", "bilstm", "encoder"],
            "overrides": {
                "cnn": {"epochs": 12},
                "bilstm": {"epochs": 12},
                "encoder": {"epochs": 4},
            },
        },
        "embeddings": {"dim": 50},
        "network": {
            "steps": 4,
            "include_isolated": False,
            "seed_accounts": data.seed_accounts,
        },
        "analytics": {
            "cutoff": {
                "local_time": DEMO_CUTOFF_LOCAL,
                "timezone": DEMO_TIMEZONE,
            },
            "window_seconds": 14400,
            "display_window_seconds": 21600,
            "loess_span": 0.75,
        },
    }
    import yaml as _yaml

    (out / "demo.yaml").write_text(
        _yaml.safe_dump(config, sort_keys=False, allow_unicode=True), encoding="utf-8"
    )
    click.echo(
        f"wrote {len(data.posts)} posts, {len(data.coder_events)} coder labels, "
        f"config -> {out / 'demo.yaml'}"
    )


if __name__ == "__main__":
    main(sys.argv[1:])
