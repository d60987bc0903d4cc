"""The five classification models behind one estimator interface.

All models follow the scikit-learn estimator contract (``fit``,
``predict``, ``predict_proba``, ``get_params``) and emit class
probabilities in canonical category order. The transformer encoder is
the primary model; TF-IDF linear models and two frozen-embedding
neural baselines provide the comparison points.

Ties in the probability vector resolve to the earliest category in
canonical order (non_racist before covert before overt).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import joblib
import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import Pipeline
from sklearn.svm import LinearSVC
from torch import nn

from .categories import CATEGORIES, CATEGORY_INDEX, validate_category
from .checkpoints import (
    Checkpoint,
    KIND_FINETUNED,
    MANIFEST_FILE,
    read_model_manifest,
    write_model_manifest,
)
from .corpus import Post
from .embeddings import EmbeddingTable, word_tokenize
from .encoder import DiscourseEncoder, SequenceClassifier, encoder_from_checkpoint
from .tokenization import Tokenizer

PROBABILITY_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class Prediction:
    """One post's predicted distribution over the three categories.

    ``probabilities`` follows canonical category order and sums to one
    within 1e-6. ``label`` is the argmax with ties broken toward the
    earliest category. ``scores_not_probabilities`` marks values that
    come from mapped decision scores (the SVM) rather than a
    probability model.
    """

    post_id: str
    probabilities: tuple[float, float, float]
    label: str
    empty_input: bool = False
    scores_not_probabilities: bool = False

    def __post_init__(self) -> None:
        total = sum(self.probabilities)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(
                f"probabilities for {self.post_id!r} sum to {total}, not 1"
            )
        if any(p < -PROBABILITY_TOLERANCE for p in self.probabilities):
            raise ValueError(f"negative probability for {self.post_id!r}")
        validate_category(self.label)


def make_prediction(
    post_id: str,
    probabilities: Sequence[float],
    empty_input: bool = False,
    scores_not_probabilities: bool = False,
) -> Prediction:
    probs = tuple(float(p) for p in probabilities)
    label = CATEGORIES[int(np.argmax(probs))]
    return Prediction(
        post_id=post_id,
        probabilities=probs,  # type: ignore[arg-type]
        label=label,
        empty_input=empty_input,
        scores_not_probabilities=scores_not_probabilities,
    )


def _validate_training_labels(y: Sequence[str]) -> np.ndarray:
    if len(y) == 0:
        raise ValueError("training set is empty")
    for label in y:
        validate_category(label)
    codes = np.array([CATEGORY_INDEX[label] for label in y], dtype=np.int64)
    if len(np.unique(codes)) < 2:
        raise ValueError(
            "training set contains a single class; at least two of the three "
            "categories are required"
        )
    return codes


def _as_texts(X: Sequence) -> list[str]:
    texts = list(X)
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise TypeError(f"X[{i}] is not a string")
    return texts


def _class_weights(codes: np.ndarray) -> torch.Tensor:
    counts = np.bincount(codes, minlength=len(CATEGORIES)).astype(np.float64)
    weights = np.where(counts > 0, len(codes) / (len(CATEGORIES) * np.maximum(counts, 1)), 0.0)
    return torch.tensor(weights, dtype=torch.float32)


# ---------------------------------------------------------------------------
# fine-tune configuration


@dataclass(frozen=True)
class FinetuneConfig:
    """Training configuration for the encoder classifier. Defaults are
    the published operating point."""

    batch_size: int = 32
    learning_rate: float = 2e-5
    max_seq_len: int = 85
    epochs: int = 4
    optimizer: str = "adamw"
    seed: int = 0
    class_weighting: bool = False

    def __post_init__(self) -> None:
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.optimizer not in ("adamw", "adam"):
            raise ValueError("optimizer must be adamw or adam")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# encoder classifier


class EncoderClassifier(BaseEstimator, ClassifierMixin):
    """Fine-tunable transformer encoder with a three-way head.

    ``checkpoint`` may be a :class:`Checkpoint` or a directory path.
    ``fit`` starts from those weights every time (re-fitting does not
    accumulate), and refuses single-class training sets.
    """

    def __init__(
        self,
        checkpoint=None,
        batch_size: int = 32,
        learning_rate: float = 2e-5,
        max_seq_len: int = 85,
        epochs: int = 4,
        optimizer: str = "adamw",
        seed: int = 0,
        class_weighting: bool = False,
        device: str | None = None,
    ):
        self.checkpoint = checkpoint
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_seq_len = max_seq_len
        self.epochs = epochs
        self.optimizer = optimizer
        self.seed = seed
        self.class_weighting = class_weighting
        self.device = device

    # -- internals ----------------------------------------------------

    def _resolve_checkpoint(self) -> Checkpoint:
        if self.checkpoint is None:
            raise ValueError("EncoderClassifier needs a checkpoint to start from")
        if isinstance(self.checkpoint, Checkpoint):
            return self.checkpoint
        return Checkpoint.load(self.checkpoint)

    def _resolve_device(self) -> torch.device:
        import os

        name = self.device or os.environ.get("SKDISCOURSE_DEVICE", "cpu")
        return torch.device(name)

    def _config(self) -> FinetuneConfig:
        return FinetuneConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_seq_len=self.max_seq_len,
            epochs=self.epochs,
            optimizer=self.optimizer,
            seed=self.seed,
            class_weighting=self.class_weighting,
        )

    def _encode_batch(self, texts: list[str]) -> tuple[torch.Tensor, np.ndarray]:
        cap = min(self.max_seq_len, self.ckpt_.config.max_seq_len)
        encoded = [self.tokenizer_.encode(t, cap) for t in texts]
        width = max(len(e.ids) for e in encoded)
        ids = torch.zeros(len(texts), width, dtype=torch.long)
        for row, enc in enumerate(encoded):
            ids[row, : len(enc.ids)] = torch.tensor(enc.ids, dtype=torch.long)
        empty = np.array([e.empty for e in encoded], dtype=bool)
        return ids, empty

    # -- estimator contract --------------------------------------------

    def fit(self, X: Sequence[str], y: Sequence[str]) -> "EncoderClassifier":
        config = self._config()
        texts = _as_texts(X)
        codes = _validate_training_labels(y)
        if len(texts) != len(codes):
            raise ValueError("X and y differ in length")

        self.ckpt_ = self._resolve_checkpoint()
        self.tokenizer_ = Tokenizer(self.ckpt_.vocab)
        device = self._resolve_device()

        torch.manual_seed(config.seed)
        model = SequenceClassifier(encoder_from_checkpoint(self.ckpt_)).to(device)
        optim_cls = torch.optim.AdamW if config.optimizer == "adamw" else torch.optim.Adam
        optim = optim_cls(model.parameters(), lr=config.learning_rate)
        weights = _class_weights(codes).to(device) if config.class_weighting else None
        loss_fn = nn.CrossEntropyLoss(weight=weights)

        rng = np.random.default_rng(config.seed)
        labels_t = torch.tensor(codes, dtype=torch.long, device=device)
        self.fit_log_: list[dict] = []
        for epoch in range(config.epochs):
            order = rng.permutation(len(texts))
            model.train()
            epoch_losses: list[float] = []
            n_correct = 0
            for start in range(0, len(texts), config.batch_size):
                idx = order[start : start + config.batch_size]
                ids, _ = self._encode_batch([texts[i] for i in idx])
                logits = model(ids.to(device))
                loss = loss_fn(logits, labels_t[idx])
                optim.zero_grad()
                loss.backward()
                optim.step()
                epoch_losses.append(float(loss.detach()))
                n_correct += int((logits.argmax(dim=1) == labels_t[idx]).sum())
            self.fit_log_.append(
                {
                    "epoch": epoch,
                    "loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                    "train_accuracy": n_correct / len(texts),
                }
            )

        self.model_ = model.eval()
        self.device_ = device
        self.classes_ = np.array(CATEGORIES)
        return self

    def predict_detailed(self, X: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(probabilities, empty_input mask). Probabilities are batch-
        size invariant: the model runs in eval mode and pooling ignores
        padding."""
        self._check_fitted()
        texts = _as_texts(X)
        if not texts:
            return np.zeros((0, len(CATEGORIES))), np.zeros(0, dtype=bool)
        probas: list[np.ndarray] = []
        empties: list[np.ndarray] = []
        self.model_.eval()
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                ids, empty = self._encode_batch(texts[start : start + self.batch_size])
                logits = self.model_(ids.to(self.device_))
                probas.append(
                    torch.softmax(logits.double(), dim=1).cpu().numpy()
                )
                empties.append(empty)
        return np.vstack(probas), np.concatenate(empties)

    def predict_proba(self, X: Sequence[str]) -> np.ndarray:
        return self.predict_detailed(X)[0]

    def predict(self, X: Sequence[str]) -> np.ndarray:
        proba = self.predict_proba(X)
        return np.array([CATEGORIES[i] for i in proba.argmax(axis=1)])

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise RuntimeError("classifier is not fitted")

    # -- persistence ----------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        """Snapshot the fitted model (encoder + head) as a fine-tuned
        checkpoint."""
        self._check_fitted()
        return Checkpoint(
            kind=KIND_FINETUNED,
            vocab=self.ckpt_.vocab,
            config=self.ckpt_.config,
            state={k: v.cpu() for k, v in self.model_.state_dict().items()},
            parent_id=self.ckpt_.checkpoint_id,
            corpus_fingerprint=self.ckpt_.corpus_fingerprint,
            added_tokens=list(self.ckpt_.added_tokens),
            base_vocab_size=self.ckpt_.base_vocab_size,
            seed=self.seed,
            training={"finetune": self._config().to_dict(), "log": self.fit_log_},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint | str | Path, **params) -> "EncoderClassifier":
        """Serving-ready classifier from a fine-tuned checkpoint (no
        fit needed)."""
        if not isinstance(ckpt, Checkpoint):
            ckpt = Checkpoint.load(ckpt)
        if ckpt.kind != KIND_FINETUNED:
            raise ValueError(
                f"cannot serve from a {ckpt.kind!r} checkpoint; fine-tune first"
            )
        est = cls(checkpoint=ckpt, **params)
        est.ckpt_ = ckpt
        est.tokenizer_ = Tokenizer(ckpt.vocab)
        est.device_ = est._resolve_device()
        model = SequenceClassifier(encoder_from_checkpoint(ckpt))
        model.load_state_dict(ckpt.state)
        est.model_ = model.to(est.device_).eval()
        est.classes_ = np.array(CATEGORIES)
        est.fit_log_ = ckpt.training.get("log", [])
        return est


def finetune(
    ckpt: Checkpoint,
    texts: Sequence[str],
    labels: Sequence[str],
    config: FinetuneConfig | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Fine-tune a checkpoint on gold labels; returns the fine-tuned
    checkpoint and the per-epoch metric log."""
    config = config or FinetuneConfig()
    est = EncoderClassifier(checkpoint=ckpt, **config.to_dict())
    est.fit(texts, labels)
    return est.to_checkpoint(), est.fit_log_


# ---------------------------------------------------------------------------
# TF-IDF linear baselines


class TfidfLinearClassifier(BaseEstimator, ClassifierMixin):
    """TF-IDF features with a linear model on top.

    kind="logistic" gives calibrated probabilities; kind="svm" gives a
    one-vs-rest linear SVM whose decision scores are softmax-mapped to
    a simplex and flagged as scores, not probabilities.
    """

    def __init__(
        self,
        kind: str = "logistic",
        max_features: int | None = None,
        min_df: int = 1,
        ngram_range: tuple[int, int] = (1, 1),
        C: float = 1.0,
        seed: int = 0,
    ):
        self.kind = kind
        self.max_features = max_features
        self.min_df = min_df
        self.ngram_range = ngram_range
        self.C = C
        self.seed = seed

    def fit(self, X: Sequence[str], y: Sequence[str]) -> "TfidfLinearClassifier":
        if self.kind not in ("logistic", "svm"):
            raise ValueError("kind must be logistic or svm")
        texts = _as_texts(X)
        _validate_training_labels(y)
        if len(texts) != len(y):
            raise ValueError("X and y differ in length")
        vectorizer = TfidfVectorizer(
            max_features=self.max_features,
            min_df=self.min_df,
            ngram_range=self.ngram_range,
        )
        if self.kind == "logistic":
            model = LogisticRegression(
                C=self.C, max_iter=1000, random_state=self.seed
            )
        else:
            model = LinearSVC(C=self.C, random_state=self.seed)
        self.pipeline_ = Pipeline([("tfidf", vectorizer), ("model", model)])
        self.pipeline_.fit(texts, list(y))
        self.probabilities_are_scores_ = self.kind == "svm"
        self.classes_ = np.array(CATEGORIES)
        return self

    def _reorder(self, values: np.ndarray) -> np.ndarray:
        """Map sklearn's alphabetical class columns to canonical order."""
        fitted_classes = list(self.pipeline_.named_steps["model"].classes_)
        order = [fitted_classes.index(c) for c in CATEGORIES if c in fitted_classes]
        out = np.zeros((values.shape[0], len(CATEGORIES)))
        for target_col, source_col in zip(
            [CATEGORY_INDEX[c] for c in CATEGORIES if c in fitted_classes], order
        ):
            out[:, target_col] = values[:, source_col]
        return out

    def predict_detailed(self, X: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        texts = _as_texts(X)
        if not texts:
            return np.zeros((0, len(CATEGORIES))), np.zeros(0, dtype=bool)
        analyzer = self.pipeline_.named_steps["tfidf"].build_analyzer()
        empty = np.array([len(analyzer(t)) == 0 for t in texts], dtype=bool)
        if self.kind == "logistic":
            proba = self._reorder(self.pipeline_.predict_proba(texts))
            # classes absent from training keep probability exactly 0
        else:
            scores = self.pipeline_.decision_function(texts)
            if scores.ndim == 1:  # two-class decision
                scores = np.stack([-scores, scores], axis=1)
            scores = self._reorder(scores)
            fitted = set(self.pipeline_.named_steps["model"].classes_)
            for c in CATEGORIES:
                if c not in fitted:
                    scores[:, CATEGORY_INDEX[c]] = -np.inf
            shifted = scores - scores.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            proba = exp / exp.sum(axis=1, keepdims=True)
        return proba, empty

    def predict_proba(self, X: Sequence[str]) -> np.ndarray:
        return self.predict_detailed(X)[0]

    def predict(self, X: Sequence[str]) -> np.ndarray:
        proba = self.predict_proba(X)
        return np.array([CATEGORIES[i] for i in proba.argmax(axis=1)])

    def _check_fitted(self) -> None:
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("classifier is not fitted")


# ---------------------------------------------------------------------------
# frozen-embedding neural baselines


class _StaticEmbeddingNet(BaseEstimator, ClassifierMixin):
    """Shared machinery for the CNN and Bi-LSTM baselines: word
    tokenization, a frozen embedding layer built from an
    :class:`EmbeddingTable`, and a seeded training loop."""

    PAD_INDEX = 0
    UNK_INDEX = 1

    def __init__(
        self,
        embeddings: EmbeddingTable | None = None,
        epochs: int = 30,
        batch_size: int = 16,
        learning_rate: float = 1e-3,
        max_len: int = 64,
        dropout: float = 0.3,
        seed: int = 0,
        trainable_embeddings: bool = False,
    ):
        self.embeddings = embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_len = max_len
        self.dropout = dropout
        self.seed = seed
        self.trainable_embeddings = trainable_embeddings

    # subclasses build the network over the embedded sequence
    def _build_net(self, dim: int) -> nn.Module:
        raise NotImplementedError

    def _embedding_layer(self) -> nn.Embedding:
        table = self.embeddings
        if table is None:
            raise ValueError("an EmbeddingTable is required")
        matrix = np.vstack(
            [
                np.zeros(table.dim, dtype=np.float32),  # PAD
                table.unk_vector.astype(np.float32),  # UNK
                table.matrix.astype(np.float32),
            ]
        )
        layer = nn.Embedding.from_pretrained(
            torch.from_numpy(matrix),
            freeze=not self.trainable_embeddings,
            padding_idx=self.PAD_INDEX,
        )
        return layer

    def _indices(self, text: str) -> list[int]:
        table = self.embeddings
        ids = []
        for word in word_tokenize(text)[: self.max_len]:
            i = table.index.get(word)
            ids.append(self.UNK_INDEX if i is None else i + 2)
        return ids

    def _batch(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
        rows = [self._indices(t) for t in texts]
        empty = np.array([len(r) == 0 for r in rows], dtype=bool)
        lengths = torch.tensor([max(len(r), 1) for r in rows], dtype=torch.long)
        width = max(int(lengths.max()), self._min_width())
        ids = torch.full((len(rows), width), self.PAD_INDEX, dtype=torch.long)
        for row_i, row in enumerate(rows):
            if row:
                ids[row_i, : len(row)] = torch.tensor(row, dtype=torch.long)
        return ids, lengths, empty

    def _min_width(self) -> int:
        return 1

    def fit(self, X: Sequence[str], y: Sequence[str]):
        texts = _as_texts(X)
        codes = _validate_training_labels(y)
        if len(texts) != len(codes):
            raise ValueError("X and y differ in length")
        torch.manual_seed(self.seed)
        self.embedding_ = self._embedding_layer()
        self.net_ = self._build_net(self.embeddings.dim)
        params = list(self.net_.parameters())
        if self.trainable_embeddings:
            params += list(self.embedding_.parameters())
        optim = torch.optim.Adam(params, lr=self.learning_rate)
        loss_fn = nn.CrossEntropyLoss()
        labels_t = torch.tensor(codes, dtype=torch.long)
        rng = np.random.default_rng(self.seed)
        self.fit_log_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(texts))
            self.net_.train()
            losses = []
            correct = 0
            for start in range(0, len(texts), self.batch_size):
                idx = order[start : start + self.batch_size]
                ids, lengths, _ = self._batch([texts[i] for i in idx])
                logits = self._forward(ids, lengths)
                loss = loss_fn(logits, labels_t[idx])
                optim.zero_grad()
                loss.backward()
                optim.step()
                losses.append(float(loss.detach()))
                correct += int((logits.argmax(dim=1) == labels_t[idx]).sum())
            self.fit_log_.append(
                {
                    "epoch": epoch,
                    "loss": float(np.mean(losses)) if losses else None,
                    "train_accuracy": correct / len(texts),
                }
            )
        self.net_.eval()
        self.classes_ = np.array(CATEGORIES)
        return self

    def _forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def predict_detailed(self, X: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        texts = _as_texts(X)
        if not texts:
            return np.zeros((0, len(CATEGORIES))), np.zeros(0, dtype=bool)
        probas = []
        empties = []
        self.net_.eval()
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                ids, lengths, empty = self._batch(texts[start : start + self.batch_size])
                logits = self._forward(ids, lengths)
                probas.append(torch.softmax(logits.double(), dim=1).numpy())
                empties.append(empty)
        return np.vstack(probas), np.concatenate(empties)

    def predict_proba(self, X: Sequence[str]) -> np.ndarray:
        return self.predict_detailed(X)[0]

    def predict(self, X: Sequence[str]) -> np.ndarray:
        proba = self.predict_proba(X)
        return np.array([CATEGORIES[i] for i in proba.argmax(axis=1)])

    def _check_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise RuntimeError("classifier is not fitted")


class CNNClassifier(_StaticEmbeddingNet):
    """Convolutional baseline over static word embeddings: parallel
    kernel widths, ReLU, max-over-time pooling."""

    def __init__(
        self,
        embeddings: EmbeddingTable | None = None,
        kernel_sizes: tuple[int, ...] = (2, 3, 4),
        n_filters: int = 32,
        **kwargs,
    ):
        super().__init__(embeddings=embeddings, **kwargs)
        self.kernel_sizes = kernel_sizes
        self.n_filters = n_filters

    def _min_width(self) -> int:
        # short inputs are padded up to the widest kernel
        return max(self.kernel_sizes)

    def _build_net(self, dim: int) -> nn.Module:
        ks, nf, n_out, p = self.kernel_sizes, self.n_filters, len(CATEGORIES), self.dropout

        class _Cnn(nn.Module):
            def __init__(self) -> None:
                super().__init__()
                self.convs = nn.ModuleList(
                    [nn.Conv1d(dim, nf, k) for k in ks]
                )
                self.dropout = nn.Dropout(p)
                self.out = nn.Linear(nf * len(ks), n_out)

            def forward(self, embedded: torch.Tensor) -> torch.Tensor:
                x = embedded.transpose(1, 2)  # (B, D, T)
                pooled = [torch.relu(conv(x)).max(dim=2).values for conv in self.convs]
                return self.out(self.dropout(torch.cat(pooled, dim=1)))

        return _Cnn()

    def _forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return self.net_(self.embedding_(ids))


class BiLSTMClassifier(_StaticEmbeddingNet):
    """Bidirectional LSTM baseline over static word embeddings; the
    final hidden states of both directions feed the output layer."""

    def __init__(
        self,
        embeddings: EmbeddingTable | None = None,
        hidden_size: int = 64,
        **kwargs,
    ):
        super().__init__(embeddings=embeddings, **kwargs)
        self.hidden_size = hidden_size

    def _build_net(self, dim: int) -> nn.Module:
        hs, n_out, p = self.hidden_size, len(CATEGORIES), self.dropout

        class _BiLstm(nn.Module):
            def __init__(self) -> None:
                super().__init__()
                self.lstm = nn.LSTM(dim, hs, batch_first=True, bidirectional=True)
                self.dropout = nn.Dropout(p)
                self.out = nn.Linear(2 * hs, n_out)

            def summary(self, embedded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
                packed = nn.utils.rnn.pack_padded_sequence(
                    embedded, lengths, batch_first=True, enforce_sorted=False
                )
                _, (h_n, _) = self.lstm(packed)
                return torch.cat([h_n[0], h_n[1]], dim=1)

            def forward(self, embedded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
                return self.out(self.dropout(self.summary(embedded, lengths)))

        return _BiLstm()

    def _forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return self.net_(self.embedding_(ids), lengths)

    def sequence_summary(self, X: Sequence[str]) -> np.ndarray:
        """Concatenated direction-final hidden states, for inspecting
        order sensitivity."""
        self._check_fitted()
        ids, lengths, _ = self._batch(_as_texts(X))
        self.net_.eval()
        with torch.no_grad():
            return self.net_.summary(self.embedding_(ids), lengths).numpy()


# ---------------------------------------------------------------------------
# batch prediction over posts


def predict_texts(
    model, post_ids: Sequence[str], texts: Sequence[str]
) -> list[Prediction]:
    if len(post_ids) != len(texts):
        raise ValueError("post_ids and texts differ in length")
    if len(set(post_ids)) != len(post_ids):
        raise ValueError("post_ids contain duplicates")
    if hasattr(model, "predict_detailed"):
        proba, empty = model.predict_detailed(texts)
    else:
        proba = model.predict_proba(texts)
        empty = np.zeros(len(texts), dtype=bool)
    scores_flag = bool(getattr(model, "probabilities_are_scores_", False))
    return [
        make_prediction(
            pid,
            proba[i] / proba[i].sum(),  # exact simplex after float softmax
            empty_input=bool(empty[i]),
            scores_not_probabilities=scores_flag,
        )
        for i, pid in enumerate(post_ids)
    ]


def predict_posts(model, posts: Sequence[Post]) -> list[Prediction]:
    return predict_texts(model, [p.post_id for p in posts], [p.text for p in posts])


def prevalence_counts(predictions: Iterable[Prediction]) -> dict[str, int]:
    """Predicted-category counts over a corpus run (prevalence table
    form)."""
    counts = {c: 0 for c in CATEGORIES}
    for pred in predictions:
        counts[pred.label] += 1
    return counts


# ---------------------------------------------------------------------------
# prediction CSV round-trip


PREDICTION_CSV_FIELDS = ("post_id", "p_non_racist", "p_covert", "p_overt", "label")


def write_predictions_csv(predictions: Iterable[Prediction], path: str | Path) -> None:
    """Six-decimal CSV export. The last probability column is written
    as the complement of the first two after rounding, so every row
    still sums to exactly 1.000000 and re-reading stays within the
    simplex tolerance."""
    import csv as _csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(PREDICTION_CSV_FIELDS)
        for pred in predictions:
            p0 = round(pred.probabilities[0], 6)
            p1 = round(pred.probabilities[1], 6)
            p2 = 1.0 - p0 - p1
            writer.writerow(
                [pred.post_id, f"{p0:.6f}", f"{p1:.6f}", f"{p2:.6f}", pred.label]
            )


def read_predictions_csv(path: str | Path) -> list[Prediction]:
    import csv as _csv

    predictions = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = _csv.DictReader(handle)
        missing = set(PREDICTION_CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"prediction CSV missing columns: {sorted(missing)}")
        for row in reader:
            probs = (
                float(row["p_non_racist"]),
                float(row["p_covert"]),
                float(row["p_overt"]),
            )
            predictions.append(
                Prediction(
                    post_id=row["post_id"],
                    probabilities=probs,
                    label=validate_category(row["label"]),
                )
            )
    return predictions


# ---------------------------------------------------------------------------
# persistence for all five families


_BASELINE_KINDS = {
    "TfidfLinearClassifier": "baseline_tfidf",
    "CNNClassifier": "baseline_cnn",
    "BiLSTMClassifier": "baseline_bilstm",
}


def save_model(model, directory: str | Path) -> Path:
    """Persist any of the five estimators under the shared checkpoint
    manifest scheme (kind extended per model family)."""
    directory = Path(directory)
    if isinstance(model, EncoderClassifier):
        return model.to_checkpoint().save(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = model.get_params(deep=False)
    table = params.pop("embeddings", None)
    if isinstance(model, TfidfLinearClassifier):
        kind = f"baseline_tfidf_{model.kind}"
        joblib.dump(model.pipeline_, directory / "model.joblib")
    elif isinstance(model, (CNNClassifier, BiLSTMClassifier)):
        kind = _BASELINE_KINDS[type(model).__name__]
        torch.save(model.net_.state_dict(), directory / "weights.pt")
        np.savez(
            directory / "embeddings.npz",
            matrix=model.embeddings.matrix,
            unk=model.embeddings.unk_vector,
        )
        (directory / "embedding_words.json").write_text(
            json.dumps(model.embeddings.words, ensure_ascii=False), encoding="utf-8"
        )
    else:
        raise TypeError(f"cannot save model of type {type(model).__name__}")
    serializable = {
        k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()
    }
    write_model_manifest(
        directory, kind, serializable, extra={"family": type(model).__name__}
    )
    return directory


def load_model(directory: str | Path):
    """Counterpart of :func:`save_model`; dispatches on manifest kind."""
    directory = Path(directory)
    manifest = read_model_manifest(directory)
    kind = manifest["kind"]
    if kind in ("base", "domain_pretrained", "fine_tuned"):
        return EncoderClassifier.from_checkpoint(directory)
    config = dict(manifest["config"])
    if kind.startswith("baseline_tfidf"):
        if "ngram_range" in config and config["ngram_range"] is not None:
            config["ngram_range"] = tuple(config["ngram_range"])
        model = TfidfLinearClassifier(**config)
        model.pipeline_ = joblib.load(directory / "model.joblib")
        model.probabilities_are_scores_ = model.kind == "svm"
        model.classes_ = np.array(CATEGORIES)
        return model
    if kind in ("baseline_cnn", "baseline_bilstm"):
        arrays = np.load(directory / "embeddings.npz")
        words = json.loads(
            (directory / "embedding_words.json").read_text(encoding="utf-8")
        )
        table = EmbeddingTable(words, arrays["matrix"], arrays["unk"])
        if "kernel_sizes" in config and config["kernel_sizes"] is not None:
            config["kernel_sizes"] = tuple(config["kernel_sizes"])
        cls = CNNClassifier if kind == "baseline_cnn" else BiLSTMClassifier
        model = cls(embeddings=table, **config)
        torch.manual_seed(model.seed)
        model.embedding_ = model._embedding_layer()
        model.net_ = model._build_net(table.dim)
        model.net_.load_state_dict(torch.load(directory / "weights.pt"))
        model.net_.eval()
        model.classes_ = np.array(CATEGORIES)
        return model
    raise ValueError(f"unknown model kind {kind!r}")
