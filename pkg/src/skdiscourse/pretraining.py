"""Vocabulary extension and masked-language-model domain pretraining.

Domain terms absent from the base vocabulary (regional slurs and
their variants) are added as whole tokens, their embeddings seeded
from the mean of semantically close donor words already in the
vocabulary, and the extended encoder is then pretrained on unlabeled
in-domain text with standard masked-language-modeling.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import yaml
from torch import nn

from .checkpoints import Checkpoint, KIND_BASE, KIND_DOMAIN, fingerprint_texts
from .encoder import DiscourseEncoder, encoder_from_checkpoint
from .tokenization import MASK_ID, N_SPECIALS, Tokenizer, UNK_ID


# ---------------------------------------------------------------------------
# token specs


@dataclass(frozen=True)
class TokenSpec:
    """A surface form to add as one token, with donor words whose
    embeddings seed the new row."""

    surface: str
    donors: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.surface or not self.surface.strip():
            raise ValueError("token surface must be non-empty")


def load_token_specs(path: str | Path) -> list[TokenSpec]:
    """Read token specs from YAML: a list of {surface, donors} items."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValueError("token spec file must contain a list")
    specs = []
    for item in raw:
        specs.append(
            TokenSpec(surface=item["surface"], donors=tuple(item.get("donors", ())))
        )
    return specs


@dataclass
class ExtensionReport:
    accepted: list[str] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (surface, reason)


def extend_vocabulary(
    ckpt: Checkpoint, specs: Sequence[TokenSpec], seed: int = 0
) -> tuple[Checkpoint, ExtensionReport]:
    """Append each spec's surface to the vocabulary as a single token.

    Extension is conservative: every pre-existing token id still maps
    to the same string and every pre-existing embedding row is
    untouched. A surface that already tokenizes to a single id is
    rejected per spec (adding it would be a no-op); a spec with no
    donors is rejected because its embedding could not be seeded.
    Rejections are reported, not raised. Duplicate surfaces across
    specs are an argument error.
    """
    surfaces = [s.surface for s in specs]
    if len(set(surfaces)) != len(surfaces):
        raise ValueError("duplicate surfaces in token specs")

    tokenizer = Tokenizer(ckpt.vocab)
    report = ExtensionReport()
    accepted_specs: list[TokenSpec] = []
    for spec in specs:
        if not spec.donors:
            report.rejected.append((spec.surface, "empty donor list"))
            continue
        ids = tokenizer.tokenize(spec.surface)
        if len(ids) == 1 and ids[0] != UNK_ID:
            report.rejected.append(
                (spec.surface, "already a single token in the vocabulary")
            )
            continue
        report.accepted.append(spec.surface)
        accepted_specs.append(spec)

    new_vocab = ckpt.vocab.extended([s.surface for s in accepted_specs])
    encoder = encoder_from_checkpoint(ckpt)
    grown = encoder.resized(len(new_vocab))
    # placeholder init for the new rows; donor seeding replaces it
    rng_state = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        n_new = len(new_vocab) - len(ckpt.vocab)
        if n_new:
            fresh = torch.empty(n_new, ckpt.config.hidden_size)
            fresh.normal_(0.0, 0.02, generator=rng_state)
            grown.token_embeddings.weight[len(ckpt.vocab) :] = fresh

    extended = Checkpoint(
        kind=ckpt.kind if ckpt.kind == KIND_BASE else KIND_BASE,
        vocab=new_vocab,
        config=ckpt.config,
        state=grown.state_dict(),
        parent_id=ckpt.checkpoint_id,
        corpus_fingerprint=ckpt.corpus_fingerprint,
        added_tokens=list(ckpt.added_tokens) + [s.surface for s in accepted_specs],
        base_vocab_size=ckpt.base_vocab_size,
        seed=ckpt.seed,
    )
    return extended, report


def init_added_embeddings(
    ckpt: Checkpoint, specs: Sequence[TokenSpec]
) -> Checkpoint:
    """Seed each added token's embedding with the mean of its donors.

    A donor contributes the mean of its piece embeddings when it is
    itself multi-token. Every donor must resolve to at least one
    non-special, non-unknown token id; otherwise this raises naming
    the donor. Rows other than the listed surfaces are untouched.
    """
    tokenizer = Tokenizer(ckpt.vocab)
    state = copy.deepcopy(ckpt.state)
    embeddings = state["token_embeddings.weight"]
    for spec in specs:
        token_id = ckpt.vocab.id_of(spec.surface)
        if token_id is None:
            raise ValueError(
                f"surface {spec.surface!r} is not in the vocabulary; "
                "extend_vocabulary must run first"
            )
        donor_vectors = []
        for donor in spec.donors:
            piece_ids = [
                i for i in tokenizer.tokenize(donor) if i >= N_SPECIALS
            ]
            if not piece_ids:
                raise ValueError(
                    f"donor {donor!r} for {spec.surface!r} does not resolve "
                    "to any known token"
                )
            donor_vectors.append(embeddings[piece_ids].mean(dim=0))
        with torch.no_grad():
            embeddings[token_id] = torch.stack(donor_vectors).mean(dim=0)
    return Checkpoint(
        kind=ckpt.kind,
        vocab=ckpt.vocab,
        config=ckpt.config,
        state=state,
        parent_id=ckpt.parent_id,
        corpus_fingerprint=ckpt.corpus_fingerprint,
        added_tokens=list(ckpt.added_tokens),
        base_vocab_size=ckpt.base_vocab_size,
        seed=ckpt.seed,
        training=dict(ckpt.training),
    )


# ---------------------------------------------------------------------------
# MLM masking


@dataclass
class MaskingOutcome:
    input_ids: np.ndarray  # ids after corruption
    targets: np.ndarray  # original id at selected positions, -100 elsewhere
    n_eligible: int
    n_selected: int
    n_masked: int
    n_random: int
    n_kept: int


def mask_for_mlm(
    token_ids: Sequence[int],
    vocab_size: int,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> MaskingOutcome:
    """Select positions for MLM and corrupt them 80/10/10.

    Each non-special position is selected independently with
    probability *mask_rate*. Selected positions become the mask token
    with probability 0.8, a random non-special token with 0.1, and
    stay unchanged with 0.1. Special tokens (padding, BOS/EOS, mask,
    URL) are never selected. Deterministic for a given seed.
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError("mask_rate must be in [0, 1]")
    if vocab_size <= N_SPECIALS:
        raise ValueError("vocabulary has no maskable tokens")
    ids = np.asarray(token_ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    eligible = ids >= N_SPECIALS
    selected = eligible & (rng.random(ids.shape) < mask_rate)

    targets = np.full(ids.shape, -100, dtype=np.int64)
    targets[selected] = ids[selected]

    out = ids.copy()
    action = rng.random(ids.shape)
    randoms = rng.integers(N_SPECIALS, vocab_size, size=ids.shape)
    mask_positions = selected & (action < 0.8)
    random_positions = selected & (action >= 0.8) & (action < 0.9)
    out[mask_positions] = MASK_ID
    out[random_positions] = randoms[random_positions]

    return MaskingOutcome(
        input_ids=out,
        targets=targets,
        n_eligible=int(eligible.sum()),
        n_selected=int(selected.sum()),
        n_masked=int(mask_positions.sum()),
        n_random=int(random_positions.sum()),
        n_kept=int((selected & (action >= 0.9)).sum()),
    )


# ---------------------------------------------------------------------------
# pretraining loop


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 1
    batch_size: int = 16
    learning_rate: float = 5e-4
    max_seq_len: int = 85
    mask_rate: float = 0.15
    heldout_every: int = 10  # every n-th text goes to the held-out slice
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size <= 0 or self.max_seq_len < 2:
            raise ValueError("batch_size and max_seq_len must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_seq_len": self.max_seq_len,
            "mask_rate": self.mask_rate,
            "heldout_every": self.heldout_every,
            "seed": self.seed,
        }


@dataclass
class PretrainLog:
    steps: list[tuple[int, float]] = field(default_factory=list)  # (step, loss)
    heldout_before: float | None = None
    heldout_after: float | None = None
    warnings: list[str] = field(default_factory=list)


def _pad_batch(sequences: list[tuple[int, ...]]) -> torch.Tensor:
    width = max(len(s) for s in sequences)
    batch = torch.zeros(len(sequences), width, dtype=torch.long)  # 0 = PAD
    for row, seq in enumerate(sequences):
        batch[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return batch


def _mlm_loss(
    encoder: DiscourseEncoder,
    batch_ids: list[tuple[int, ...]],
    vocab_size: int,
    mask_rate: float,
    seed: int,
) -> torch.Tensor | None:
    flat = [i for seq in batch_ids for i in seq]
    outcome = mask_for_mlm(flat, vocab_size, mask_rate, seed)
    if outcome.n_selected == 0:
        return None
    # re-split the flat corruption back into rows
    corrupted: list[tuple[int, ...]] = []
    targets: list[list[int]] = []
    cursor = 0
    for seq in batch_ids:
        corrupted.append(tuple(outcome.input_ids[cursor : cursor + len(seq)]))
        targets.append(list(outcome.targets[cursor : cursor + len(seq)]))
        cursor += len(seq)
    ids = _pad_batch(corrupted)
    target = torch.full(ids.shape, -100, dtype=torch.long)
    for row, row_targets in enumerate(targets):
        target[row, : len(row_targets)] = torch.tensor(row_targets, dtype=torch.long)
    hidden = encoder(ids)
    logits = encoder.mlm_logits(hidden)
    return nn.functional.cross_entropy(
        logits.view(-1, vocab_size), target.view(-1), ignore_index=-100
    )


def run_domain_pretraining(
    ckpt: Checkpoint,
    texts: Sequence[str],
    config: PretrainConfig | None = None,
) -> tuple[Checkpoint, PretrainLog]:
    """Continue pretraining the encoder on unlabeled in-domain text.

    Loss is logged per step and on a held-out slice before and after
    training. If the checkpoint has added tokens but none of them ever
    occur in the corpus, a warning is recorded (their embeddings would
    never receive gradient signal beyond the donor seeding). Zero
    epochs is a no-op that still returns a valid checkpoint with
    identical weights.
    """
    config = config or PretrainConfig()
    if not texts:
        raise ValueError("pretraining corpus is empty")
    log = PretrainLog()
    tokenizer = Tokenizer(ckpt.vocab)

    if ckpt.added_tokens:
        added_ids = {
            ckpt.vocab.index[t] for t in ckpt.added_tokens if t in ckpt.vocab.index
        }
        if tokenizer.count_occurrences(texts, added_ids) == 0:
            log.warnings.append(
                "none of the added tokens occur in the pretraining corpus"
            )

    encoded = [tokenizer.encode(t, config.max_seq_len).ids for t in texts]
    if len(encoded) >= 2 * config.heldout_every:
        heldout = encoded[:: config.heldout_every]
        train = [s for i, s in enumerate(encoded) if i % config.heldout_every]
    else:
        heldout = encoded
        train = encoded
        log.warnings.append(
            "corpus too small for a held-out slice; evaluating on the training texts"
        )

    torch.manual_seed(config.seed)
    encoder = encoder_from_checkpoint(ckpt)
    vocab_size = len(ckpt.vocab)

    def heldout_loss() -> float:
        encoder.eval()
        losses = []
        with torch.no_grad():
            for start in range(0, len(heldout), config.batch_size):
                batch = heldout[start : start + config.batch_size]
                # fixed masking seed so before/after are comparable
                loss = _mlm_loss(
                    encoder, batch, vocab_size, config.mask_rate, seed=0xE7A1 + start
                )
                if loss is not None:
                    losses.append(float(loss))
        return float(np.mean(losses)) if losses else float("nan")

    log.heldout_before = heldout_loss()

    optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    step = 0
    encoder.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            encoder.train()
            loss = _mlm_loss(
                encoder,
                batch,
                vocab_size,
                config.mask_rate,
                seed=config.seed + 7919 * step + 1,
            )
            if loss is None:
                continue
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            log.steps.append((step, float(loss.detach())))
            step += 1

    log.heldout_after = heldout_loss()

    pretrained = Checkpoint(
        kind=KIND_DOMAIN,
        vocab=ckpt.vocab,
        config=ckpt.config,
        state=encoder.state_dict(),
        parent_id=ckpt.checkpoint_id,
        corpus_fingerprint=fingerprint_texts(texts),
        added_tokens=list(ckpt.added_tokens),
        base_vocab_size=ckpt.base_vocab_size,
        seed=config.seed,
        training={"pretrain": config.to_dict(), "steps": len(log.steps)},
    )
    return pretrained, log
