"""Compact transformer encoder with a tied masked-language-model head.

A small RoBERTa-style stack: token + learned position embeddings,
pre-norm transformer layers, and an MLM head that reuses the token
embedding matrix (tied weights), so extending the vocabulary extends
both input and output spaces in one place.
"""

from __future__ import annotations

import torch
from torch import nn

from .checkpoints import Checkpoint, EncoderConfig, KIND_BASE
from .tokenization import PAD_ID, Vocabulary


class DiscourseEncoder(nn.Module):
    def __init__(self, vocab_size: int, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.token_embeddings = nn.Embedding(
            vocab_size, config.hidden_size, padding_idx=PAD_ID
        )
        self.position_embeddings = nn.Embedding(
            config.max_seq_len, config.hidden_size
        )
        self.embedding_norm = nn.LayerNorm(config.hidden_size)
        self.dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=config.hidden_size,
            nhead=config.num_heads,
            dim_feedforward=config.ffn_size,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerEncoder(
            layer, num_layers=config.num_layers, enable_nested_tensor=False
        )
        self.final_norm = nn.LayerNorm(config.hidden_size)
        self.mlm_bias = nn.Parameter(torch.zeros(vocab_size))

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids (B, T) -> hidden states (B, T, H). Padding positions are
        masked out of attention."""
        if ids.size(1) > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {ids.size(1)} exceeds encoder maximum "
                f"{self.config.max_seq_len}"
            )
        positions = torch.arange(ids.size(1), device=ids.device)
        hidden = self.token_embeddings(ids) + self.position_embeddings(positions)
        hidden = self.dropout(self.embedding_norm(hidden))
        padding_mask = ids.eq(PAD_ID)
        hidden = self.layers(hidden, src_key_padding_mask=padding_mask)
        return self.final_norm(hidden)

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        # tied head: output projection is the embedding matrix
        return hidden @ self.token_embeddings.weight.T + self.mlm_bias

    @staticmethod
    def pooled(hidden: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        """Mean of non-padding positions, (B, H)."""
        mask = ids.ne(PAD_ID).unsqueeze(-1).to(hidden.dtype)
        total = (hidden * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1.0)
        return total / counts

    def classification_features(self, ids: torch.Tensor) -> torch.Tensor:
        """Sequence representation for the classification head, (B, 2H).

        Two views, each standardized: the mean contextual state, and
        the mean raw token embedding. The second view keeps lexical
        identity available to the head directly; contextual mixing
        tends to wash it out of the first."""
        contextual = self.pooled(self(ids), ids)
        lexical = self.pooled(self.token_embeddings(ids), ids)
        contextual = nn.functional.layer_norm(contextual, contextual.shape[-1:])
        lexical = nn.functional.layer_norm(lexical, lexical.shape[-1:])
        return torch.cat([contextual, lexical], dim=1)

    def resized(self, new_vocab_size: int) -> "DiscourseEncoder":
        """Copy of this encoder with a larger vocabulary. Existing
        embedding rows and all other weights are carried over
        unchanged; new rows are zero until the caller initializes
        them."""
        if new_vocab_size < self.vocab_size:
            raise ValueError("vocabulary can only grow")
        grown = DiscourseEncoder(new_vocab_size, self.config)
        state = self.state_dict()
        with torch.no_grad():
            grown_state = grown.state_dict()
            for key, value in state.items():
                if key == "token_embeddings.weight":
                    grown_state[key][: self.vocab_size] = value
                    grown_state[key][self.vocab_size :] = 0.0
                elif key == "mlm_bias":
                    grown_state[key][: self.vocab_size] = value
                    grown_state[key][self.vocab_size :] = 0.0
                else:
                    grown_state[key] = value
            grown.load_state_dict(grown_state)
        return grown


class SequenceClassifier(nn.Module):
    """Encoder plus a linear head over the three categories.

    The head starts near zero so that an untrained head yields
    near-uniform class probabilities and the first optimizer steps,
    not the random init, decide early predictions.
    """

    HEAD_INIT_STD = 1e-5

    def __init__(self, encoder: DiscourseEncoder, n_classes: int = 3):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(2 * encoder.config.hidden_size, n_classes)
        with torch.no_grad():
            self.head.weight.normal_(0.0, self.HEAD_INIT_STD)
            self.head.bias.zero_()

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder.classification_features(ids))


def build_base_checkpoint(
    texts: list[str],
    vocab_size: int = 2000,
    config: EncoderConfig | None = None,
    seed: int = 0,
) -> Checkpoint:
    """Construct a fresh base checkpoint: vocabulary built from the
    given texts, randomly initialized encoder weights."""
    config = config or EncoderConfig()
    vocab = Vocabulary.build(texts, size=vocab_size)
    torch.manual_seed(seed)
    encoder = DiscourseEncoder(len(vocab), config)
    from .checkpoints import fingerprint_texts

    return Checkpoint(
        kind=KIND_BASE,
        vocab=vocab,
        config=config,
        state=encoder.state_dict(),
        corpus_fingerprint=fingerprint_texts(texts),
        seed=seed,
    )


def encoder_from_checkpoint(ckpt: Checkpoint) -> DiscourseEncoder:
    """Instantiate the encoder a checkpoint describes, loading only
    encoder weights (a fine-tuned checkpoint also stores head weights,
    which are ignored here)."""
    encoder = DiscourseEncoder(len(ckpt.vocab), ckpt.config)
    encoder_state = {
        k.removeprefix("encoder."): v
        for k, v in ckpt.state.items()
        if not k.startswith("head.")
    }
    encoder.load_state_dict(encoder_state)
    return encoder
