"""Static word embedding tables for the convolutional and recurrent
baselines. Vectors are loaded once and stay frozen during training;
out-of-vocabulary words share a single unknown vector."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_WORD_RE = re.compile(r"[\w']+", re.UNICODE)


def word_tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation dropped. This is the
    baselines' tokenizer, independent of the encoder's subword one."""
    return _WORD_RE.findall(text.lower())


@dataclass
class EmbeddingTable:
    words: list[str]
    matrix: np.ndarray  # (n_words, dim) float32
    unk_vector: np.ndarray  # shared row for out-of-vocabulary words

    def __post_init__(self) -> None:
        if len(self.words) == 0:
            raise ValueError("embedding table is empty")
        if self.matrix.shape != (len(self.words), self.dim):
            raise ValueError("embedding matrix shape does not match word list")
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, word: str) -> np.ndarray:
        i = self.index.get(word)
        return self.matrix[i] if i is not None else self.unk_vector

    @classmethod
    def load_word2vec_text(cls, path: str | Path) -> "EmbeddingTable":
        """Plain-text word2vec format: optional count/dim header line,
        then one 'word v1 v2 ...' line per word."""
        words: list[str] = []
        rows: list[np.ndarray] = []
        with Path(path).open("r", encoding="utf-8") as handle:
            first = handle.readline().split()
            if len(first) != 2 or not first[0].isdigit():
                words.append(first[0])
                rows.append(np.array(first[1:], dtype=np.float32))
            for line in handle:
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                words.append(parts[0])
                rows.append(np.array(parts[1:], dtype=np.float32))
        if not rows:
            raise ValueError(f"no vectors found in {path}")
        matrix = np.vstack(rows)
        return cls(words, matrix, np.zeros(matrix.shape[1], dtype=np.float32))

    @classmethod
    def random(cls, words: Sequence[str], dim: int = 50, seed: int = 0) -> "EmbeddingTable":
        """Deterministic random table, for demos and tests where no
        pretrained vectors are available."""
        rng = np.random.default_rng(seed)
        deduped = list(dict.fromkeys(words))
        matrix = rng.normal(0.0, 0.5, size=(len(deduped), dim)).astype(np.float32)
        return cls(deduped, matrix, np.zeros(dim, dtype=np.float32))

    @classmethod
    def from_texts(cls, texts: Sequence[str], dim: int = 50, seed: int = 0) -> "EmbeddingTable":
        vocab: dict[str, None] = {}
        for text in texts:
            for word in word_tokenize(text):
                vocab.setdefault(word, None)
        if not vocab:
            raise ValueError("no words found to build an embedding table from")
        return cls.random(list(vocab), dim=dim, seed=seed)
