"""Synthetic fixtures: a small separable gold set for fast training
checks and a full demo corpus exercising the entire pipeline.

All vocabulary here is invented or neutral. The three toy classes use
disjoint made-up lexicons so that every model family can separate
them; the demo corpus plants known structure (label signal, three
retweet communities, an event-time latency step) that the pipeline
should recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytics import event_cutoff_epoch
from .annotation import LabelRecord
from .categories import CATEGORIES, COVERT, NON_RACIST, OVERT
from .corpus import Post
from .pretraining import TokenSpec

# general-domain words: the base vocabulary source, no domain terms
GENERAL_WORDS = [
    "mañana", "tarde", "noche", "ciudad", "pueblo", "camino", "plaza",
    "mercado", "lluvia", "sol", "música", "fiesta", "trabajo", "escuela",
    "familia", "amigo", "comida", "sopa", "maíz", "montaña", "río",
    "puente", "volcán", "feria", "bus", "tren", "casa", "puerta",
    "ventana", "jardín", "árbol", "flor", "perro", "gato", "libro",
    "radio", "noticia", "partido", "fútbol", "cancha", "niño", "abuela",
    "vecino", "tienda", "pan", "café", "agua", "viento", "nube",
    "estrella", "carta", "reloj", "zapato", "sombrero", "camisa",
]

FILLERS = ["el", "la", "de", "en", "que", "y", "un", "una", "con", "por"]

PROTEST_KEYWORDS = [
    "paro", "protesta", "marcha", "carretera", "gasolina", "decreto",
    "diálogo", "toque",
]

# invented lexicons: covert and overt cue words, disjoint from everything
COVERT_LEXICON = [
    "zumelar", "trapioso", "veleguino", "moscorra", "chivateo", "farullo",
    "pandeque", "resquino",
]
OVERT_LEXICON = [
    "brucanto", "zarpudo", "molendro", "cuscarro", "tiznajo", "perrengue",
    "vardasco", "lombriguero",
]

# invented marker terms added to the vocabulary as whole tokens; one is
# deliberately a two-word phrase
MARKER_TERMS = ["ñacuro", "tisguel", "chamburro", "poncho plomo"]

DEMO_TOKEN_SPECS = [
    TokenSpec("ñacuro", ("perro", "vecino")),
    TokenSpec("tisguel", ("gato", "sombrero")),
    TokenSpec("chamburro", ("zapato", "camisa")),
    TokenSpec("poncho plomo", ("sombrero", "camisa", "reloj")),
]

DEMO_CUTOFF_LOCAL = "2019-10-10T10:30:00"
DEMO_TIMEZONE = "America/Guayaquil"

COMMUNITY_NAMES = ("progov", "indig", "media")


# ---------------------------------------------------------------------------
# toy gold set


def toy_gold_set(
    n_per_class: int = 20, seed: int = 7
) -> tuple[list[str], list[str]]:
    """A small, cleanly separable training fixture.

    Each class draws its content words from its own disjoint lexicon
    (general words for non_racist, the invented covert and overt
    lexicons otherwise) plus shared function-word fillers, so every
    model family can reach high training accuracy quickly.
    """
    rng = np.random.default_rng(seed)
    lexicon = {
        NON_RACIST: GENERAL_WORDS[:12],
        COVERT: COVERT_LEXICON,
        OVERT: OVERT_LEXICON,
    }
    texts: list[str] = []
    labels: list[str] = []
    for category in CATEGORIES:
        for _ in range(n_per_class):
            n_content = int(rng.integers(6, 9))
            n_filler = int(rng.integers(1, 3))
            words = list(rng.choice(lexicon[category], size=n_content)) + list(
                rng.choice(FILLERS, size=n_filler)
            )
            rng.shuffle(words)
            texts.append(" ".join(words))
            labels.append(category)
    return texts, labels


def general_domain_corpus(n_texts: int = 800, seed: int = 11) -> list[str]:
    """Plain general-domain sentences for building the base
    vocabulary; none of the marker terms or cue lexicons appear, so
    they genuinely need vocabulary extension later."""
    rng = np.random.default_rng(seed)
    texts = []
    for _ in range(n_texts):
        n_words = int(rng.integers(5, 12))
        words = [
            str(w)
            for w in rng.choice(GENERAL_WORDS + FILLERS, size=n_words)
        ]
        texts.append(" ".join(words))
    return texts


# ---------------------------------------------------------------------------
# demo corpus


@dataclass
class DemoData:
    posts: list[Post]
    true_labels: dict[str, str]  # original post_id -> planted category
    true_communities: dict[str, str]  # author_id -> community name
    coder_events: list[LabelRecord]
    sample_post_ids: list[str]
    cutoff_epoch: int
    seed_accounts: dict[str, list[str]]
    base_corpus: list[str]
    token_specs: list[TokenSpec] = field(default_factory=lambda: list(DEMO_TOKEN_SPECS))
    markers: list[str] = field(default_factory=lambda: list(MARKER_TERMS))
    keywords: list[str] = field(default_factory=lambda: list(PROTEST_KEYWORDS))


def _make_text(
    rng: np.random.Generator,
    category: str,
    protest: bool,
) -> str:
    words: list[str] = []
    n_general = int(rng.integers(3, 7))
    words += [str(w) for w in rng.choice(GENERAL_WORDS, size=n_general)]
    words += [str(w) for w in rng.choice(FILLERS, size=int(rng.integers(1, 4)))]
    if protest and rng.random() < 0.6:
        words.append(str(rng.choice(PROTEST_KEYWORDS)))
    if category == COVERT:
        words += [str(w) for w in rng.choice(COVERT_LEXICON, size=int(rng.integers(2, 4)))]
        if rng.random() < 0.55:
            words.append(str(rng.choice(MARKER_TERMS)))
    elif category == OVERT:
        words += [str(w) for w in rng.choice(OVERT_LEXICON, size=int(rng.integers(2, 4)))]
        if rng.random() < 0.7:
            words.append(str(rng.choice(MARKER_TERMS)))
    else:
        if rng.random() < 0.12:
            # markers also occur in innocuous mentions
            words.append(str(rng.choice(MARKER_TERMS)))
    rng.shuffle(words)
    return " ".join(words)


def generate_demo_data(seed: int = 42) -> DemoData:
    """Build the ~5,000-post synthetic corpus with planted structure.

    Planted facts the pipeline should recover: three retweet
    communities with seed accounts; covert/overt cue lexicons
    predicting the label; and a sharp drop in covert-content retweet
    latency (factor 0.722 for the progov community) at the event
    cutoff.
    """
    rng = np.random.default_rng(seed)
    cutoff = event_cutoff_epoch(DEMO_CUTOFF_LOCAL, DEMO_TIMEZONE)

    # -- users ---------------------------------------------------------
    community_sizes = {"progov": 180, "indig": 140, "media": 70}
    users: dict[str, str] = {}
    for name, size in community_sizes.items():
        for i in range(size):
            users[f"u_{name}_{i:03d}"] = name
    for i in range(40):
        users[f"u_free_{i:03d}"] = "none"
    user_ids = sorted(users)
    by_community: dict[str, list[str]] = {}
    for uid, c in users.items():
        by_community.setdefault(c, []).append(uid)
    for ids in by_community.values():
        ids.sort()

    seed_accounts = {
        name: by_community[name][:5] for name in COMMUNITY_NAMES
    }
    influencers = {
        name: by_community[name][:12] for name in COMMUNITY_NAMES
    }

    posts: list[Post] = []
    true_labels: dict[str, str] = {}
    post_counter = 0

    def add_post(
        author: str,
        created_at: int,
        category: str | None,
        text: str,
        retweet_of: str | None = None,
    ) -> Post:
        nonlocal post_counter
        post_counter += 1
        post = Post(
            post_id=f"p{post_counter:06d}",
            text=text,
            author_id=author,
            created_at=int(created_at),
            retweet_of=retweet_of,
            author_verified=author in seed_accounts.get(users.get(author, ""), []),
            author_handle=f"@{author}",
        )
        posts.append(post)
        if category is not None and retweet_of is None:
            true_labels[post.post_id] = category
        return post

    def draw_category(author_community: str) -> str:
        # progov authors produce most of the covert/overt content
        if author_community == "progov":
            return str(rng.choice(CATEGORIES, p=[0.62, 0.26, 0.12]))
        if author_community == "media":
            return str(rng.choice(CATEGORIES, p=[0.90, 0.08, 0.02]))
        return str(rng.choice(CATEGORIES, p=[0.95, 0.04, 0.01]))

    # -- background originals over six months --------------------------
    week_start = event_cutoff_epoch("2019-06-03T00:00:00", DEMO_TIMEZONE)
    one_week = 7 * 24 * 3600
    background: list[Post] = []
    for week in range(30):
        for _ in range(30):
            author = str(rng.choice(user_ids))
            created = week_start + week * one_week + int(rng.integers(0, one_week))
            category = draw_category(users[author])
            background.append(
                add_post(author, created, category, _make_text(rng, category, False))
            )

    # -- event-window originals ----------------------------------------
    window = 6 * 3600 + 1800
    event_originals: dict[str, list[Post]] = {c: [] for c in CATEGORIES}
    for _ in range(200):
        community = str(rng.choice(["progov", "media", "indig"], p=[0.55, 0.25, 0.20]))
        author = str(rng.choice(influencers[community]))
        created = cutoff + int(rng.integers(-window, window - 3600))
        category = draw_category(community)
        post = add_post(author, created, category, _make_text(rng, category, True))
        event_originals[category].append(post)
    for category in CATEGORIES:
        if not event_originals[category]:
            # guarantee at least one source per category in the window
            author = influencers["progov"][0]
            post = add_post(
                author,
                cutoff - 3600,
                category,
                _make_text(rng, category, True),
            )
            event_originals[category].append(post)

    # -- ambient retweets (community structure) -------------------------
    def pick_retweeter(author_community: str) -> str:
        if author_community in COMMUNITY_NAMES and rng.random() < 0.9:
            return str(rng.choice(by_community[author_community]))
        return str(rng.choice(user_ids))

    for _ in range(1700):
        source = background[int(rng.integers(0, len(background)))]
        retweeter = pick_retweeter(users[source.author_id])
        latency = float(rng.lognormal(np.log(90.0), 0.8))
        add_post(
            retweeter,
            source.created_at + max(1, int(latency)),
            None,
            source.text,
            retweet_of=source.post_id,
        )

    # -- event retweets with the planted latency step -------------------
    def event_retweets(
        category: str, count: int, shares: dict[str, float], step_for_progov: bool
    ) -> None:
        names = list(shares)
        probs = np.array([shares[n] for n in names])
        probs = probs / probs.sum()
        sources = event_originals[category]
        for _ in range(count):
            source = sources[int(rng.integers(0, len(sources)))]
            community = str(rng.choice(names, p=probs))
            retweeter = (
                str(rng.choice(by_community[community]))
                if community != "none"
                else str(rng.choice(by_community["none"]))
            )
            after = source.created_at >= cutoff
            if step_for_progov and community == "progov" and after:
                latency = rng.normal(72.2, 8.0)
            else:
                latency = rng.normal(100.0, 8.0)
            add_post(
                retweeter,
                source.created_at + max(1, int(round(latency))),
                None,
                source.text,
                retweet_of=source.post_id,
            )

    covert_shares = {"progov": 0.772, "indig": 0.188, "media": 0.03, "none": 0.01}
    overt_shares = {"progov": 0.754, "indig": 0.206, "media": 0.03, "none": 0.01}
    event_retweets(COVERT, 1800, covert_shares, step_for_progov=True)
    event_retweets(OVERT, 420, overt_shares, step_for_progov=False)
    event_retweets(NON_RACIST, 600, {"progov": 0.4, "indig": 0.3, "media": 0.25, "none": 0.05}, False)

    # -- two simulated coders over the same stratified sample the
    # pipeline's sampling stage will draw from this corpus and seed, so
    # the bundled coder labels line up with the generated rounds
    from .annotation import draw_training_sample
    from .corpus import Corpus

    sample_result = draw_training_sample(
        Corpus(posts),
        n_total=900,
        keywords=PROTEST_KEYWORDS,
        markers=MARKER_TERMS,
        seed=seed,
    )
    sample_post_ids = sample_result.post_ids
    sample_size = len(sample_post_ids)
    by_id = {p.post_id: p for p in posts}
    sample_posts = [by_id[pid] for pid in sample_post_ids]

    def coder_label(truth: str, accuracy: float) -> str:
        if rng.random() < accuracy:
            return truth
        others = [c for c in CATEGORIES if c != truth]
        return str(others[int(rng.integers(0, 2))])

    coder_events: list[LabelRecord] = []
    round_edges = [(0, 300, "round1"), (300, 600, "round2"), (600, sample_size, "round3")]
    label_time = cutoff + 30 * 24 * 3600
    for start, end, round_id in round_edges:
        for p in sample_posts[start:end]:
            truth = true_labels[p.post_id]
            for coder, accuracy in (("coder_a", 0.97), ("coder_b", 0.96)):
                coder_events.append(
                    LabelRecord(
                        post_id=p.post_id,
                        coder_id=coder,
                        round=round_id,
                        label=coder_label(truth, accuracy),
                        labeled_at=label_time,
                    )
                )
                label_time += 1

    return DemoData(
        posts=posts,
        true_labels=true_labels,
        true_communities={u: c for u, c in users.items() if c != "none"},
        coder_events=coder_events,
        sample_post_ids=sample_post_ids,
        cutoff_epoch=cutoff,
        seed_accounts=seed_accounts,
        base_corpus=general_domain_corpus(seed=seed + 1),
    )
