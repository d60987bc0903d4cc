from decimal import Decimal

import numpy as np
import pytest

from skdiscourse.categories import CATEGORIES
from skdiscourse.classify import (
    BiLSTMClassifier,
    CNNClassifier,
    EncoderClassifier,
    Prediction,
    TfidfLinearClassifier,
    finetune,
    load_model,
    make_prediction,
    predict_texts,
    prevalence_counts,
    read_predictions_csv,
    save_model,
    write_predictions_csv,
)
from skdiscourse.embeddings import EmbeddingTable


@pytest.fixture(scope="module")
def embed_table(toy_data):
    texts, _ = toy_data
    return EmbeddingTable.from_texts(texts, dim=16, seed=0)


@pytest.fixture(scope="module")
def fitted_encoder(pretrained_checkpoint, toy_data):
    texts, labels = toy_data
    est = EncoderClassifier(
        checkpoint=pretrained_checkpoint, epochs=1, batch_size=16,
        learning_rate=1e-3, max_seq_len=48, seed=0,
    )
    return est.fit(texts, labels)


@pytest.fixture(scope="module")
def fitted_tfidf(toy_data):
    texts, labels = toy_data
    return TfidfLinearClassifier(kind="logistic", seed=0).fit(texts, labels)


class TestPrediction:
    def test_rejects_broken_simplex(self):
        with pytest.raises(ValueError, match="sum"):
            Prediction("p1", (0.5, 0.5, 0.5), "covert")

    def test_rejects_negative_probability(self):
        with pytest.raises(ValueError, match="negative"):
            Prediction("p1", (1.2, -0.1, -0.1), "non_racist")

    def test_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            Prediction("p1", (1.0, 0.0, 0.0), "racista")

    def test_argmax_tie_breaks_toward_earlier_category(self):
        assert make_prediction("p1", (0.4, 0.4, 0.2)).label == "non_racist"
        assert make_prediction("p2", (0.2, 0.4, 0.4)).label == "covert"
        assert make_prediction("p3", (0.2, 0.3, 0.5)).label == "overt"


class TestEncoderClassifier:
    def test_predict_proba_is_simplex(self, fitted_encoder, toy_data):
        texts, _ = toy_data
        proba = fitted_encoder.predict_proba(texts[:10])
        assert proba.shape == (10, 3)
        assert np.all(proba >= 0)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)

    def test_batch_invariance(self, fitted_encoder, toy_data):
        texts, _ = toy_data
        together = fitted_encoder.predict_proba(texts[:6])
        alone = np.vstack([fitted_encoder.predict_proba([t]) for t in texts[:6]])
        assert np.allclose(together, alone, atol=1e-5)

    def test_duplicated_input_gets_identical_rows(self, fitted_encoder, toy_data):
        texts, _ = toy_data
        proba = fitted_encoder.predict_proba([texts[0], texts[0]])
        assert np.array_equal(proba[0], proba[1])

    def test_truncation_invariance(self, pretrained_checkpoint, toy_data):
        texts, labels = toy_data
        est = EncoderClassifier(
            checkpoint=pretrained_checkpoint, epochs=0, max_seq_len=6, seed=0
        )
        est.fit(texts, labels)
        base = "uno dos tres cuatro"
        proba = est.predict_proba([base + " cinco seis", base + " siete ocho"])
        assert np.allclose(proba[0], proba[1], atol=1e-6)

    def test_zero_epochs_predicts_near_uniform(self, pretrained_checkpoint, toy_data):
        # the head starts almost-zero, so logits are almost equal
        texts, labels = toy_data
        est = EncoderClassifier(
            checkpoint=pretrained_checkpoint, epochs=0, max_seq_len=48, seed=0
        )
        est.fit(texts, labels)
        proba = est.predict_proba(texts[:8])
        assert np.all(np.abs(proba - 1.0 / 3.0) < 0.01)

    def test_refit_does_not_accumulate(self, pretrained_checkpoint, toy_data):
        texts, labels = toy_data
        est = EncoderClassifier(
            checkpoint=pretrained_checkpoint, epochs=1, batch_size=16,
            learning_rate=1e-3, max_seq_len=48, seed=0,
        )
        first = est.fit(texts, labels).predict_proba(texts[:5])
        second = est.fit(texts, labels).predict_proba(texts[:5])
        assert np.allclose(first, second, atol=1e-6)

    def test_single_class_refused(self, pretrained_checkpoint):
        est = EncoderClassifier(checkpoint=pretrained_checkpoint, epochs=1)
        with pytest.raises(ValueError, match="single class"):
            est.fit(["a", "b", "c"], ["overt", "overt", "overt"])

    def test_empty_training_set_refused(self, pretrained_checkpoint):
        est = EncoderClassifier(checkpoint=pretrained_checkpoint, epochs=1)
        with pytest.raises(ValueError, match="empty"):
            est.fit([], [])

    def test_length_mismatch_refused(self, pretrained_checkpoint):
        est = EncoderClassifier(checkpoint=pretrained_checkpoint, epochs=1)
        with pytest.raises(ValueError, match="length"):
            est.fit(["a", "b", "c"], ["overt", "covert"])

    def test_missing_checkpoint_refused(self):
        with pytest.raises(ValueError, match="checkpoint"):
            EncoderClassifier().fit(["a", "b"], ["overt", "covert"])

    def test_get_params_roundtrip(self, pretrained_checkpoint):
        est = EncoderClassifier(checkpoint=pretrained_checkpoint, epochs=2, seed=5)
        params = est.get_params(deep=False)
        clone = EncoderClassifier(**params)
        assert clone.epochs == 2
        assert clone.seed == 5

    def test_finetune_returns_checkpoint_and_log(self, pretrained_checkpoint, toy_data):
        from skdiscourse.classify import FinetuneConfig

        texts, labels = toy_data
        ckpt, log = finetune(
            pretrained_checkpoint, texts, labels,
            FinetuneConfig(epochs=1, batch_size=16, learning_rate=1e-3,
                           max_seq_len=48, seed=0),
        )
        assert ckpt.kind == "fine_tuned"
        assert ckpt.parent_id == pretrained_checkpoint.checkpoint_id
        assert len(log) == 1
        assert {"epoch", "loss", "train_accuracy"} <= set(log[0])


class TestTfidfLinear:
    def test_logistic_probabilities(self, fitted_tfidf, toy_data):
        texts, _ = toy_data
        proba = fitted_tfidf.predict_proba(texts[:5])
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        assert fitted_tfidf.probabilities_are_scores_ is False

    def test_svm_scores_flagged(self, toy_data):
        texts, labels = toy_data
        svm = TfidfLinearClassifier(kind="svm", seed=0).fit(texts, labels)
        proba = svm.predict_proba(texts[:5])
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        assert svm.probabilities_are_scores_ is True

    def test_idf_matches_hand_computation(self):
        # smooth idf: ln((1 + n_docs) / (1 + df)) + 1
        docs = ["uno dos", "uno tres", "uno cuatro"]
        model = TfidfLinearClassifier(kind="logistic").fit(
            docs, ["non_racist", "covert", "overt"]
        )
        tfidf = model.pipeline_.named_steps["tfidf"]
        vocab = tfidf.vocabulary_
        idf = tfidf.idf_
        assert idf[vocab["uno"]] == pytest.approx(np.log(4 / 4) + 1)
        assert idf[vocab["dos"]] == pytest.approx(np.log(4 / 2) + 1)

    def test_unknown_kind_rejected(self, toy_data):
        texts, labels = toy_data
        with pytest.raises(ValueError, match="kind"):
            TfidfLinearClassifier(kind="forest").fit(texts, labels)

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            TfidfLinearClassifier().predict_proba(["hola"])

    def test_predict_labels_are_canonical(self, fitted_tfidf, toy_data):
        texts, _ = toy_data
        labels = fitted_tfidf.predict(texts[:10])
        assert set(labels) <= set(CATEGORIES)


class TestCNN:
    def test_fit_predict_and_short_input(self, embed_table, toy_data):
        texts, labels = toy_data
        model = CNNClassifier(embeddings=embed_table, epochs=4, seed=0)
        model.fit(texts, labels)
        # one word is narrower than the widest kernel; padding covers it
        proba = model.predict_proba(["hola", texts[0]])
        assert proba.shape == (2, 3)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)

    def test_requires_embeddings(self, toy_data):
        texts, labels = toy_data
        with pytest.raises(ValueError, match="EmbeddingTable"):
            CNNClassifier().fit(texts, labels)


class TestBiLSTM:
    def test_fit_predict(self, embed_table, toy_data):
        texts, labels = toy_data
        model = BiLSTMClassifier(embeddings=embed_table, epochs=4, seed=0)
        model.fit(texts, labels)
        proba = model.predict_proba(texts[:4])
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)

    def test_summary_is_order_sensitive(self, embed_table, toy_data):
        texts, labels = toy_data
        model = BiLSTMClassifier(embeddings=embed_table, epochs=2, seed=0)
        model.fit(texts, labels)
        words = texts[0].split()[:6]
        forward = model.sequence_summary([" ".join(words)])
        backward = model.sequence_summary([" ".join(reversed(words))])
        assert not np.allclose(forward, backward, atol=1e-4)


class TestPredictTexts:
    def test_duplicate_ids_rejected(self, fitted_tfidf):
        with pytest.raises(ValueError, match="duplicates"):
            predict_texts(fitted_tfidf, ["a", "a"], ["x", "y"])

    def test_length_mismatch_rejected(self, fitted_tfidf):
        with pytest.raises(ValueError, match="length"):
            predict_texts(fitted_tfidf, ["a"], ["x", "y"])

    def test_empty_input_flagged(self, fitted_tfidf):
        preds = predict_texts(fitted_tfidf, ["a", "b"], ["", "hola uno"])
        assert preds[0].empty_input is True
        assert preds[1].empty_input is False

    def test_prevalence_counts(self, fitted_tfidf, toy_data):
        texts, _ = toy_data
        preds = predict_texts(
            fitted_tfidf, [f"p{i}" for i in range(len(texts))], texts
        )
        counts = prevalence_counts(preds)
        assert list(counts) == list(CATEGORIES)
        assert sum(counts.values()) == len(texts)


class TestPredictionCsv:
    def test_roundtrip_and_exact_row_sums(self, fitted_tfidf, toy_data, tmp_path):
        texts, _ = toy_data
        preds = predict_texts(fitted_tfidf, [f"p{i}" for i in range(8)], texts[:8])
        path = tmp_path / "predictions.csv"
        write_predictions_csv(preds, path)

        lines = path.read_text(encoding="utf-8").strip().splitlines()
        for line in lines[1:]:
            _, p0, p1, p2, _ = line.split(",")
            assert Decimal(p0) + Decimal(p1) + Decimal(p2) == Decimal("1.000000")

        back = read_predictions_csv(path)
        assert [p.post_id for p in back] == [p.post_id for p in preds]
        assert [p.label for p in back] == [p.label for p in preds]
        for a, b in zip(back, preds):
            assert a.probabilities == pytest.approx(b.probabilities, abs=1e-6)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("post_id,p_non_racist\np1,1.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="missing columns"):
            read_predictions_csv(path)


class TestSaveLoad:
    def check_roundtrip(self, model, texts, directory):
        before = model.predict_proba(texts)
        save_model(model, directory)
        after = load_model(directory).predict_proba(texts)
        assert np.allclose(before, after, atol=1e-6)

    def test_encoder(self, fitted_encoder, toy_data, tmp_path):
        texts, _ = toy_data
        self.check_roundtrip(fitted_encoder, texts[:4], tmp_path / "enc")

    def test_tfidf_logistic(self, fitted_tfidf, toy_data, tmp_path):
        texts, _ = toy_data
        self.check_roundtrip(fitted_tfidf, texts[:4], tmp_path / "lr")

    def test_tfidf_svm(self, toy_data, tmp_path):
        texts, labels = toy_data
        model = TfidfLinearClassifier(kind="svm", seed=0).fit(texts, labels)
        self.check_roundtrip(model, texts[:4], tmp_path / "svm")
        assert load_model(tmp_path / "svm").probabilities_are_scores_ is True

    def test_cnn(self, embed_table, toy_data, tmp_path):
        texts, labels = toy_data
        model = CNNClassifier(embeddings=embed_table, epochs=2, seed=0)
        model.fit(texts, labels)
        self.check_roundtrip(model, texts[:4], tmp_path / "cnn")

    def test_bilstm(self, embed_table, toy_data, tmp_path):
        texts, labels = toy_data
        model = BiLSTMClassifier(embeddings=embed_table, epochs=2, seed=0)
        model.fit(texts, labels)
        self.check_roundtrip(model, texts[:4], tmp_path / "lstm")
