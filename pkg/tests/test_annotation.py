import numpy as np
import pytest

from skdiscourse.annotation import (
    AnnotationStore,
    LabelRecord,
    cohen_kappa,
    draw_training_sample,
    harmonize,
    label_distribution,
    largest_remainder_quotas,
    read_labels_csv,
    text_matches_terms,
    write_labels_csv,
)
from skdiscourse.categories import CATEGORIES
from skdiscourse.corpus import Corpus, Post


def brute_force_kappa(a, b):
    """Oracle: kappa from the full contingency table, no shortcuts."""
    cats = sorted(set(a) | set(b))
    idx = {c: i for i, c in enumerate(cats)}
    table = np.zeros((len(cats), len(cats)))
    for x, y in zip(a, b):
        table[idx[x], idx[y]] += 1
    n = table.sum()
    po = np.trace(table) / n
    pe = float((table.sum(axis=1) / n) @ (table.sum(axis=0) / n))
    if pe >= 1.0 - 1e-15:
        return 1.0
    return (po - pe) / (1 - pe)


class TestKappa:
    def test_hand_worked_example(self):
        a = ["non_racist", "non_racist", "covert", "overt"]
        b = ["non_racist", "covert", "covert", "overt"]
        # po = 3/4; pe = (2/4)(1/4) + (1/4)(2/4) + (1/4)(1/4) = 5/16
        result = cohen_kappa(a, b)
        assert result.kappa == pytest.approx((0.75 - 5 / 16) / (1 - 5 / 16), abs=1e-12)
        assert result.kappa == pytest.approx(0.6363636363636364, abs=1e-12)

    def test_perfect_disagreement(self):
        result = cohen_kappa(["non_racist", "covert"], ["covert", "non_racist"])
        assert result.kappa == -1.0

    def test_identical_inputs_exactly_one(self):
        result = cohen_kappa(["covert"] * 7, ["covert"] * 7)
        assert result.kappa == 1.0
        assert result.degenerate

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(2, 40))
            a = [CATEGORIES[i] for i in rng.integers(0, 3, n)]
            b = [CATEGORIES[i] for i in rng.integers(0, 3, n)]
            assert cohen_kappa(a, b).kappa == pytest.approx(
                brute_force_kappa(a, b), abs=1e-12
            )

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cohen_kappa(["covert"], ["covert", "overt"])
        with pytest.raises(ValueError):
            cohen_kappa([], [])


class TestQuotas:
    def test_table_sizes(self):
        assert largest_remainder_quotas(3724, (1 / 3, 1 / 3, 1 / 3)) == [
            1242,
            1241,
            1241,
        ]

    def test_sums_to_total(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 10_000))
            raw = rng.random(3) + 0.01
            fractions = raw / raw.sum()
            quotas = largest_remainder_quotas(n, fractions)
            assert sum(quotas) == n
            assert all(q >= 0 for q in quotas)

    def test_declared_order_breaks_ties(self):
        # 0.5/0.25/0.25 over 5 -> remainders (0.5, 0.25, 0.25); the
        # leftover unit goes to the first-declared stratum
        assert largest_remainder_quotas(5, (0.5, 0.25, 0.25)) == [3, 1, 1]
        assert largest_remainder_quotas(2, (1 / 3, 1 / 3, 1 / 3)) == [1, 1, 0]


class TestTermMatching:
    def test_single_word_is_token_equality(self):
        assert text_matches_terms("el indio dijo", ["indio"])
        assert not text_matches_terms("indios unidos", ["indio"])

    def test_multiword_is_substring(self):
        assert text_matches_terms("lleva un poncho plomo gris", ["poncho plomo"])

    def test_accent_and_case_insensitive(self):
        assert text_matches_terms("El INDÍGENA habló", ["indigena"])


class TestSample:
    def make_corpus(self):
        posts = []
        for i in range(200):
            text = "palabra comun"
            if i % 10 == 0:
                text = "marcha indigena hoy"
            if i % 17 == 0:
                text = "lleva poncho plomo"
            posts.append(
                Post(
                    post_id=f"p{i:03d}",
                    text=text,
                    author_id=f"u{i % 7}",
                    created_at=1000 + i,
                )
            )
        return Corpus(posts)

    def test_reproducible_and_seed_sensitive(self):
        corpus = self.make_corpus()
        kw, mk = ["indigena"], ["poncho plomo"]
        one = draw_training_sample(corpus, 60, kw, mk, seed=5)
        two = draw_training_sample(corpus, 60, kw, mk, seed=5)
        other = draw_training_sample(corpus, 60, kw, mk, seed=6)
        assert one.post_ids == two.post_ids
        assert one.post_ids != other.post_ids

    def test_strata_disjoint_and_sized(self):
        corpus = self.make_corpus()
        result = draw_training_sample(
            corpus, 30, ["indigena"], ["poncho plomo"], seed=0
        )
        ids = result.post_ids
        assert len(ids) == len(set(ids)) == 30
        assert result.quotas == {"random": 10, "keyword": 10, "marker": 10}

    def test_shortfall_moves_to_random(self):
        corpus = self.make_corpus()
        # only 12 marker posts exist (every 17th of 200)
        result = draw_training_sample(
            corpus, 150, ["indigena"], ["poncho plomo"], seed=0
        )
        assert result.drawn["marker"] < 50
        assert result.shortfalls["marker"] == 50 - result.drawn["marker"]
        assert sum(result.drawn.values()) == 150

    def test_excludes_retweets(self):
        posts = [
            Post(post_id="a", text="original", author_id="u1", created_at=1),
            Post(
                post_id="b",
                text="original",
                author_id="u2",
                created_at=2,
                retweet_of="a",
            ),
        ]
        result = draw_training_sample(Corpus(posts), 1, [], [], seed=0)
        assert result.post_ids == ["a"]
        with pytest.raises(ValueError, match="unique content"):
            draw_training_sample(Corpus(posts), 2, [], [], seed=0)

    def test_all_random_fractions(self):
        corpus = self.make_corpus()
        result = draw_training_sample(corpus, 25, [], [], seed=1, fractions=(1, 0, 0))
        assert result.drawn == {"random": 25, "keyword": 0, "marker": 0}


class TestHarmonize:
    def test_unanimity_rule(self):
        labels = {
            "a": {"p1": "covert", "p2": "overt", "p3": "covert", "p4": "non_racist"},
            "b": {"p1": "covert", "p2": "covert", "p3": "covert", "p4": "overt"},
        }
        result = harmonize(["p1", "p2", "p3", "p4"], labels)
        assert result.gold["p1"].label == "covert"
        assert result.gold["p1"].origin == "unanimous"
        assert result.gold["p2"].label == "non_racist"
        assert result.gold["p2"].origin == "defaulted"
        assert {d.post_id for d in result.adjudication_queue} == {"p2", "p4"}

    def test_covert_overt_only_under_unanimity(self):
        rng = np.random.default_rng(3)
        post_ids = [f"p{i}" for i in range(120)]
        labels = {
            coder: {p: CATEGORIES[int(rng.integers(0, 3))] for p in post_ids}
            for coder in ("a", "b")
        }
        result = harmonize(post_ids, labels)
        for post_id, gold in result.gold.items():
            if gold.label != "non_racist":
                assert labels["a"][post_id] == labels["b"][post_id] == gold.label
                assert gold.origin == "unanimous"

    def test_missing_labels_excluded(self):
        labels = {"a": {"p1": "covert"}, "b": {}}
        result = harmonize(["p1"], labels)
        assert result.gold == {}
        assert len(result.excluded) == 1

    def test_needs_exactly_two_coders(self):
        with pytest.raises(ValueError):
            harmonize(["p1"], {"a": {"p1": "covert"}})


class TestDistribution:
    def test_table_proportions(self):
        labels = ["non_racist"] * 2187 + ["covert"] * 1035 + ["overt"] * 501
        rows = label_distribution(labels)
        assert [r.category for r in rows] == list(CATEGORIES)
        assert rows[0].percent == pytest.approx(58.7, abs=0.05)
        assert rows[1].percent == pytest.approx(27.8, abs=0.05)
        assert rows[2].percent == pytest.approx(13.5, abs=0.05)


class TestRounds:
    def test_store_replays_events(self, tmp_path):
        store = AnnotationStore(tmp_path / "ann")
        store.create_round("round1", ["p1", "p2"], ["a", "b"])
        store.record_label("round1", "a", "p1", "covert", 100)
        store.record_label("round1", "a", "p1", "overt", 200)  # correction
        store.record_label("round1", "b", "p1", "covert", 300)
        reopened = AnnotationStore(tmp_path / "ann")
        rnd = reopened.get_round("round1")
        assert rnd.labels_by_coder()["a"]["p1"] == "overt"
        assert len(rnd.events) == 3  # audit trail intact

    def test_next_unlabeled_in_round_order(self, tmp_path):
        store = AnnotationStore(tmp_path / "ann")
        store.create_round("r", ["p2", "p1"], ["a", "b"])
        rnd = store.get_round("r")
        assert rnd.next_unlabeled("a") == "p2"
        store.record_label("r", "a", "p2", "covert", 1)
        assert rnd.next_unlabeled("a") == "p1"
        store.record_label("r", "a", "p1", "covert", 2)
        assert rnd.next_unlabeled("a") is None

    def test_unknown_coder_or_post_rejected(self, tmp_path):
        store = AnnotationStore(tmp_path / "ann")
        store.create_round("r", ["p1"], ["a", "b"])
        with pytest.raises(ValueError):
            store.record_label("r", "zz", "p1", "covert", 1)
        with pytest.raises(ValueError):
            store.record_label("r", "a", "nope", "covert", 1)
        with pytest.raises(ValueError):
            store.record_label("r", "a", "p1", "bogus", 1)

    def test_labels_csv_roundtrip(self, tmp_path):
        records = [
            LabelRecord("p1", "a", "round1", "covert", 10),
            LabelRecord("p2", "b", "round2", "non_racist", 20),
        ]
        path = tmp_path / "labels.csv"
        write_labels_csv(records, path)
        assert read_labels_csv(path) == records
