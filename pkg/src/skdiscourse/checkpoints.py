"""Checkpoint persistence for encoder and baseline models.

A checkpoint directory holds three things: the weights, the full
vocabulary listing (one token per line, line number = token id), and
a manifest recording what produced it (kind, parent checkpoint,
training configuration, corpus fingerprint). Every training stage
reads and writes this one format, so lineage is reconstructible from
the manifests alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import torch

from .tokenization import Vocabulary

MANIFEST_FILE = "manifest.json"
VOCAB_FILE = "vocab.txt"
WEIGHTS_FILE = "weights.pt"

KIND_BASE = "base"
KIND_DOMAIN = "domain_pretrained"
KIND_FINETUNED = "fine_tuned"
ENCODER_KINDS = (KIND_BASE, KIND_DOMAIN, KIND_FINETUNED)


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the compact transformer encoder."""

    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_size: int = 128
    max_seq_len: int = 128
    dropout: float = 0.1

    def __post_init__(self) -> None:
        for name in ("hidden_size", "num_layers", "num_heads", "ffn_size",
                     "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EncoderConfig":
        return cls(**{f.name: data[f.name] for f in dataclasses.fields(cls)})


def fingerprint_texts(texts: Iterable[str]) -> str:
    """Stable content hash of a text corpus (order-sensitive)."""
    digest = hashlib.sha256()
    for text in texts:
        digest.update(text.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def fingerprint_config(config: Mapping) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()


@dataclass
class Checkpoint:
    """One encoder checkpoint: weights + vocabulary + provenance."""

    kind: str
    vocab: Vocabulary
    config: EncoderConfig
    state: dict[str, torch.Tensor]
    parent_id: str | None = None
    corpus_fingerprint: str | None = None
    added_tokens: list[str] = field(default_factory=list)
    base_vocab_size: int | None = None
    seed: int | None = None
    training: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown checkpoint kind {self.kind!r}")
        if self.base_vocab_size is None:
            self.base_vocab_size = len(self.vocab) - len(self.added_tokens)
        expected = self.base_vocab_size + len(self.added_tokens)
        if len(self.vocab) != expected:
            raise ValueError(
                f"vocabulary size {len(self.vocab)} != base {self.base_vocab_size}"
                f" + {len(self.added_tokens)} added tokens"
            )

    @property
    def checkpoint_id(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "parent": self.parent_id,
                "vocab_size": len(self.vocab),
                "config": self.config.to_dict(),
                "corpus": self.corpus_fingerprint,
                "seed": self.seed,
                "training": self.training,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def manifest(self) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "kind": self.kind,
            "parent_id": self.parent_id,
            "vocab_size": len(self.vocab),
            "base_vocab_size": self.base_vocab_size,
            "added_tokens": list(self.added_tokens),
            "config": self.config.to_dict(),
            "corpus_fingerprint": self.corpus_fingerprint,
            "seed": self.seed,
            "training": self.training,
        }

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / MANIFEST_FILE).write_text(
            json.dumps(self.manifest(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        self.vocab.save(directory / VOCAB_FILE)
        torch.save(self.state, directory / WEIGHTS_FILE)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
        vocab = Vocabulary.load(directory / VOCAB_FILE)
        if manifest["vocab_size"] != len(vocab):
            raise ValueError(
                f"manifest says {manifest['vocab_size']} tokens but vocabulary "
                f"file has {len(vocab)}"
            )
        state = torch.load(directory / WEIGHTS_FILE, map_location="cpu")
        ckpt = cls(
            kind=manifest["kind"],
            vocab=vocab,
            config=EncoderConfig.from_dict(manifest["config"]),
            state=state,
            parent_id=manifest.get("parent_id"),
            corpus_fingerprint=manifest.get("corpus_fingerprint"),
            added_tokens=list(manifest.get("added_tokens", [])),
            base_vocab_size=manifest.get("base_vocab_size"),
            seed=manifest.get("seed"),
            training=manifest.get("training", {}),
        )
        return ckpt


def write_model_manifest(
    directory: Path,
    kind: str,
    config: Mapping,
    parent_id: str | None = None,
    corpus_fingerprint: str | None = None,
    extra: Mapping | None = None,
) -> dict:
    """Manifest writer shared with baseline model persistence, which
    extends ``kind`` per model family (e.g. baseline_tfidf_logistic)."""
    manifest = {
        "checkpoint_id": fingerprint_config(
            {"kind": kind, "config": dict(config), "parent": parent_id}
        )[:16],
        "kind": kind,
        "parent_id": parent_id,
        "config": dict(config),
        "corpus_fingerprint": corpus_fingerprint,
    }
    if extra:
        manifest.update(extra)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return manifest


def read_model_manifest(directory: str | Path) -> dict:
    return json.loads(
        (Path(directory) / MANIFEST_FILE).read_text(encoding="utf-8")
    )
