"""Annotation workflow: sampling, rounds, reliability, harmonization.

Covers the path from corpus to gold labels: drawing the stratified
training sample, running two-coder labeling rounds with an audit
trail, measuring inter-coder agreement (Cohen's kappa), and merging
the two label sets into gold labels under the unanimity rule.
"""

from __future__ import annotations

import csv
import json
import threading
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .categories import CATEGORIES, NON_RACIST, validate_category
from .corpus import Corpus, Post

import numpy as np

STRATA = ("random", "keyword", "marker")


# ---------------------------------------------------------------------------
# quota arithmetic


def largest_remainder_quotas(n_total: int, fractions: Sequence[float]) -> list[int]:
    """Integer quotas summing exactly to n_total.

    Floors each share, then hands leftover units to the largest
    fractional remainders; remainder ties go to the earliest position,
    so the declared stratum order decides exact splits like
    3724 -> [1242, 1241, 1241].
    """
    if n_total < 0:
        raise ValueError("n_total must be non-negative")
    total_frac = sum(fractions)
    if total_frac <= 0:
        raise ValueError("fractions must sum to a positive value")
    shares = [n_total * f / total_frac for f in fractions]
    quotas = [int(s) for s in shares]
    remainders = [s - q for s, q in zip(shares, quotas)]
    leftover = n_total - sum(quotas)
    # stable sort keeps declared order among equal remainders
    order = sorted(range(len(fractions)), key=lambda i: -remainders[i])
    for i in order[:leftover]:
        quotas[i] += 1
    return quotas


# ---------------------------------------------------------------------------
# term matching for keyword / marker strata


def _normalize(text: str) -> str:
    """Case- and diacritic-insensitive form used for term matching only.

    Never applied to stored text; matching must not mutate the corpus.
    """
    decomposed = unicodedata.normalize("NFD", text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return stripped.casefold()


def text_matches_terms(text: str, terms: Sequence[str]) -> bool:
    """True if any term occurs in the text.

    Single-word terms match whole tokens; multi-word terms match as
    normalized substrings.
    """
    norm = _normalize(text)
    tokens = None
    for term in terms:
        term_norm = _normalize(term)
        if not term_norm:
            continue
        if " " in term_norm:
            if term_norm in norm:
                return True
        else:
            if tokens is None:
                tokens = set(norm.split())
            if term_norm in tokens:
                return True
    return False


# ---------------------------------------------------------------------------
# stratified sample


@dataclass(frozen=True)
class SampleItem:
    post_id: str
    stratum: str


@dataclass
class SampleResult:
    items: list[SampleItem]
    quotas: dict[str, int]
    drawn: dict[str, int]
    shortfalls: dict[str, int]
    seed: int

    @property
    def post_ids(self) -> list[str]:
        return [item.post_id for item in self.items]


def draw_training_sample(
    corpus: Corpus,
    n_total: int,
    keywords: Sequence[str],
    markers: Sequence[str],
    seed: int,
    fractions: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
) -> SampleResult:
    """Draw the three-way training sample: random / keyword / marker.

    Quotas come from largest-remainder rounding of *fractions* over
    *n_total*. The marker and keyword strata are drawn first from
    their matching pools (marker first; a post joins one stratum
    only); the random stratum fills from everything not yet drawn.
    When a matching pool is too small the shortfall moves to the
    random stratum and is reported, never silently shrunk.

    Pools hold unique content only: retweets duplicate their source's
    text and are excluded, so no text can be drawn twice through two
    post ids.

    Deterministic for a given (corpus contents, seed): pools are
    sorted by post_id before shuffling, so corpus insertion order does
    not matter.
    """
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    candidates = [p for p in corpus if not p.is_retweet]
    if n_total > len(candidates):
        raise ValueError(
            f"sample size {n_total} exceeds the {len(candidates)} "
            "unique content posts in the corpus"
        )
    if len(fractions) != len(STRATA):
        raise ValueError(f"need {len(STRATA)} fractions, got {len(fractions)}")

    quotas = dict(zip(STRATA, largest_remainder_quotas(n_total, fractions)))
    rng = np.random.default_rng(seed)

    def draw(pool: list[Post], count: int) -> list[str]:
        ids = sorted(p.post_id for p in pool)
        take = min(count, len(ids))
        picked = rng.choice(len(ids), size=take, replace=False) if take else []
        return [ids[i] for i in sorted(picked)]

    taken: set[str] = set()
    items: list[SampleItem] = []
    drawn: dict[str, int] = {}
    shortfalls: dict[str, int] = {}

    marker_pool = [p for p in candidates if text_matches_terms(p.text, markers)]
    marker_ids = draw(marker_pool, quotas["marker"])
    taken.update(marker_ids)

    keyword_pool = [
        p
        for p in candidates
        if p.post_id not in taken and text_matches_terms(p.text, keywords)
    ]
    keyword_ids = draw(keyword_pool, quotas["keyword"])
    taken.update(keyword_ids)

    shortfalls["marker"] = quotas["marker"] - len(marker_ids)
    shortfalls["keyword"] = quotas["keyword"] - len(keyword_ids)
    random_quota = quotas["random"] + shortfalls["marker"] + shortfalls["keyword"]

    random_pool = [p for p in candidates if p.post_id not in taken]
    random_ids = draw(random_pool, random_quota)
    shortfalls["random"] = random_quota - len(random_ids)

    for stratum, ids in (
        ("random", random_ids),
        ("keyword", keyword_ids),
        ("marker", marker_ids),
    ):
        drawn[stratum] = len(ids)
        items.extend(SampleItem(post_id, stratum) for post_id in ids)

    return SampleResult(
        items=items, quotas=quotas, drawn=drawn, shortfalls=shortfalls, seed=seed
    )


# ---------------------------------------------------------------------------
# labeling rounds


@dataclass(frozen=True)
class LabelRecord:
    """One labeling event. Events are never deleted; the latest event
    per (coder, post) is the coder's current label."""

    post_id: str
    coder_id: str
    round: str
    label: str
    labeled_at: int


class AnnotationRound:
    """A batch of posts assigned to a fixed set of coders."""

    def __init__(self, round_id: str, post_ids: Sequence[str], coders: Sequence[str]):
        if not post_ids:
            raise ValueError("round must contain at least one post")
        if len(set(post_ids)) != len(post_ids):
            raise ValueError("round post_ids must be unique")
        if not coders:
            raise ValueError("round must have at least one coder")
        self.round_id = round_id
        self.post_ids: tuple[str, ...] = tuple(post_ids)
        self.coders: tuple[str, ...] = tuple(coders)
        self.events: list[LabelRecord] = []
        self._latest: dict[tuple[str, str], LabelRecord] = {}
        self._post_set = set(post_ids)

    def record_label(
        self, coder_id: str, post_id: str, label: str, labeled_at: int
    ) -> LabelRecord:
        """Record a label. Re-labeling overwrites the current label but
        the earlier event stays in the audit trail."""
        if coder_id not in self.coders:
            raise ValueError(
                f"coder {coder_id!r} is not assigned to round {self.round_id!r}"
            )
        if post_id not in self._post_set:
            raise ValueError(
                f"post {post_id!r} is not part of round {self.round_id!r}"
            )
        validate_category(label)
        record = LabelRecord(post_id, coder_id, self.round_id, label, labeled_at)
        self.events.append(record)
        self._latest[(coder_id, post_id)] = record
        return record

    def replay(self, record: LabelRecord) -> None:
        """Re-apply a stored event (used when reloading a store)."""
        self.record_label(
            record.coder_id, record.post_id, record.label, record.labeled_at
        )

    def current_label(self, coder_id: str, post_id: str) -> str | None:
        record = self._latest.get((coder_id, post_id))
        return record.label if record else None

    def labels_by_coder(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {c: {} for c in self.coders}
        for (coder_id, post_id), record in self._latest.items():
            out[coder_id][post_id] = record.label
        return out

    def current_records(self) -> list[LabelRecord]:
        """Latest label event per (coder, post), in a stable order."""
        return sorted(
            self._latest.values(), key=lambda r: (r.post_id, r.coder_id)
        )

    def next_unlabeled(self, coder_id: str) -> str | None:
        """First post in round order the coder has not labeled yet."""
        if coder_id not in self.coders:
            raise ValueError(
                f"coder {coder_id!r} is not assigned to round {self.round_id!r}"
            )
        for post_id in self.post_ids:
            if (coder_id, post_id) not in self._latest:
                return post_id
        return None

    def progress(self) -> dict[str, int]:
        done = {c: 0 for c in self.coders}
        for coder_id, _post_id in self._latest:
            done[coder_id] += 1
        return done


class AnnotationStore:
    """Rounds plus an append-only label event log, bound to a directory.

    Layout: ``rounds.json`` (round definitions) and ``labels.jsonl``
    (one event per line). Reopening after a restart replays the log,
    so current labels and the audit trail both survive.
    """

    ROUNDS_FILE = "rounds.json"
    LABELS_FILE = "labels.jsonl"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.rounds: dict[str, AnnotationRound] = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        rounds_path = self.directory / self.ROUNDS_FILE
        if rounds_path.exists():
            definitions = json.loads(rounds_path.read_text(encoding="utf-8"))
            for item in definitions:
                rnd = AnnotationRound(
                    item["round_id"], item["post_ids"], item["coders"]
                )
                self.rounds[rnd.round_id] = rnd
        labels_path = self.directory / self.LABELS_FILE
        if labels_path.exists():
            with labels_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    raw = json.loads(line)
                    record = LabelRecord(**raw)
                    self.rounds[record.round].replay(record)

    def _save_rounds(self) -> None:
        definitions = [
            {
                "round_id": rnd.round_id,
                "post_ids": list(rnd.post_ids),
                "coders": list(rnd.coders),
            }
            for rnd in self.rounds.values()
        ]
        path = self.directory / self.ROUNDS_FILE
        path.write_text(
            json.dumps(definitions, ensure_ascii=False, indent=2), encoding="utf-8"
        )

    def create_round(
        self, round_id: str, post_ids: Sequence[str], coders: Sequence[str]
    ) -> AnnotationRound:
        with self._lock:
            if round_id in self.rounds:
                raise ValueError(f"round {round_id!r} already exists")
            rnd = AnnotationRound(round_id, post_ids, coders)
            self.rounds[round_id] = rnd
            self._save_rounds()
            return rnd

    def get_round(self, round_id: str) -> AnnotationRound:
        if round_id not in self.rounds:
            raise KeyError(f"unknown round {round_id!r}")
        return self.rounds[round_id]

    def record_label(
        self, round_id: str, coder_id: str, post_id: str, label: str, labeled_at: int
    ) -> LabelRecord:
        with self._lock:
            record = self.get_round(round_id).record_label(
                coder_id, post_id, label, labeled_at
            )
            path = self.directory / self.LABELS_FILE
            with path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record.__dict__, ensure_ascii=False))
                handle.write("\n")
            return record

    def all_events(self) -> list[LabelRecord]:
        events: list[LabelRecord] = []
        for rnd in self.rounds.values():
            events.extend(rnd.events)
        return events


# ---------------------------------------------------------------------------
# reliability


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    n_items: int
    degenerate: bool = False


def cohen_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> KappaResult:
    """Cohen's kappa between two aligned label sequences.

    kappa = (p_o - p_e) / (1 - p_e) with p_e from the coders'
    marginal distributions. When p_e == 1 (both marginals concentrate
    on one identical category) the ratio is 0/0; agreement is then
    perfect by construction, so kappa is defined as 1.0 and the result
    is flagged degenerate.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError(
            f"label sequences differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    n = len(labels_a)
    if n == 0:
        raise ValueError("cannot compute kappa on zero items")

    agreements = sum(1 for a, b in zip(labels_a, labels_b) if a == b)
    p_o = agreements / n

    marginal_a: dict[str, int] = {}
    marginal_b: dict[str, int] = {}
    for a, b in zip(labels_a, labels_b):
        marginal_a[a] = marginal_a.get(a, 0) + 1
        marginal_b[b] = marginal_b.get(b, 0) + 1
    p_e = sum(
        (marginal_a.get(c, 0) / n) * (marginal_b.get(c, 0) / n)
        for c in set(marginal_a) | set(marginal_b)
    )

    if p_e >= 1.0 - 1e-15:
        return KappaResult(1.0, p_o, 1.0, n, degenerate=True)
    kappa = (p_o - p_e) / (1.0 - p_e)
    return KappaResult(kappa, p_o, p_e, n)


def round_kappa(rnd: AnnotationRound) -> KappaResult:
    """Kappa over the posts both of the round's two coders have labeled."""
    if len(rnd.coders) != 2:
        raise ValueError("round kappa is defined for exactly two coders")
    by_coder = rnd.labels_by_coder()
    first, second = rnd.coders
    shared = [
        p for p in rnd.post_ids if p in by_coder[first] and p in by_coder[second]
    ]
    if not shared:
        raise ValueError("no posts labeled by both coders yet")
    return cohen_kappa(
        [by_coder[first][p] for p in shared],
        [by_coder[second][p] for p in shared],
    )


# ---------------------------------------------------------------------------
# harmonization


@dataclass(frozen=True)
class GoldLabel:
    post_id: str
    label: str
    origin: str  # "unanimous" or "defaulted"


@dataclass(frozen=True)
class Disagreement:
    post_id: str
    labels: dict[str, str]


@dataclass
class HarmonizeResult:
    gold: dict[str, GoldLabel]
    adjudication_queue: list[Disagreement]
    excluded: list[tuple[str, str]]  # (post_id, reason)

    def gold_labels(self) -> dict[str, str]:
        return {pid: g.label for pid, g in self.gold.items()}


def harmonize(
    post_ids: Sequence[str],
    labels_by_coder: Mapping[str, Mapping[str, str]],
) -> HarmonizeResult:
    """Merge two coders' labels into gold labels under the unanimity rule.

    Agreement on any category yields that category (origin
    "unanimous"). Disagreement of any kind defaults to non_racist
    (origin "defaulted") and queues the post for adjudication: only
    unanimous judgments may assert racism. Posts missing a label from
    either coder are excluded and reported.
    """
    if len(labels_by_coder) != 2:
        raise ValueError(
            f"harmonization requires exactly two coders, got {len(labels_by_coder)}"
        )
    coder_a, coder_b = sorted(labels_by_coder)
    gold: dict[str, GoldLabel] = {}
    queue: list[Disagreement] = []
    excluded: list[tuple[str, str]] = []
    for post_id in post_ids:
        label_a = labels_by_coder[coder_a].get(post_id)
        label_b = labels_by_coder[coder_b].get(post_id)
        if label_a is None or label_b is None:
            missing = [
                c
                for c, lab in ((coder_a, label_a), (coder_b, label_b))
                if lab is None
            ]
            excluded.append((post_id, f"missing label from {', '.join(missing)}"))
            continue
        if label_a == label_b:
            gold[post_id] = GoldLabel(post_id, label_a, "unanimous")
        else:
            gold[post_id] = GoldLabel(post_id, NON_RACIST, "defaulted")
            queue.append(Disagreement(post_id, {coder_a: label_a, coder_b: label_b}))
    return HarmonizeResult(gold=gold, adjudication_queue=queue, excluded=excluded)


# ---------------------------------------------------------------------------
# distribution + export


@dataclass(frozen=True)
class DistributionRow:
    category: str
    count: int
    percent: float


def label_distribution(labels: Iterable[str]) -> list[DistributionRow]:
    """Count and percentage per category, in canonical category order."""
    counts = {c: 0 for c in CATEGORIES}
    total = 0
    for label in labels:
        validate_category(label)
        counts[label] += 1
        total += 1
    if total == 0:
        raise ValueError("no labels to summarize")
    return [
        DistributionRow(c, counts[c], 100.0 * counts[c] / total) for c in CATEGORIES
    ]


LABEL_CSV_FIELDS = ("post_id", "coder_id", "round", "label", "labeled_at")


def write_labels_csv(records: Iterable[LabelRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(LABEL_CSV_FIELDS)
        for r in records:
            writer.writerow([r.post_id, r.coder_id, r.round, r.label, r.labeled_at])


def read_labels_csv(path: str | Path) -> list[LabelRecord]:
    records: list[LabelRecord] = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(LABEL_CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"label CSV missing columns: {sorted(missing)}")
        for row in reader:
            records.append(
                LabelRecord(
                    post_id=row["post_id"],
                    coder_id=row["coder_id"],
                    round=row["round"],
                    label=validate_category(row["label"]),
                    labeled_at=int(row["labeled_at"]),
                )
            )
    return records
