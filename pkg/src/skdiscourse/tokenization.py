"""Vocabulary and subword tokenizer for the encoder stack.

Whitespace pre-tokenization followed by vocabulary lookup; words not
in the vocabulary fall back to greedy longest-prefix piece matching
over the same vocabulary, and unmatched characters become ``<unk>``.
Multi-word vocabulary entries (added domain terms such as two-word
slur phrases) are matched on the raw text before word splitting so
each one maps to exactly one token id.

The vocabulary is append-only: extending it never renumbers or
removes existing entries, so token ids remain valid across
extensions.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
MASK_TOKEN = "<mask>"
URL_TOKEN = "<url>"

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, MASK_TOKEN, URL_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, MASK_ID, URL_ID = range(len(SPECIAL_TOKENS))
N_SPECIALS = len(SPECIAL_TOKENS)

_URL_RE = re.compile(r"https?://\S+|www\.\S+")


@dataclass
class Vocabulary:
    """Ordered token inventory. Index 0..5 are the special tokens."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if list(self.tokens[:N_SPECIALS]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int | None:
        return self.index.get(token)

    def is_special(self, token_id: int) -> bool:
        return token_id < N_SPECIALS

    def multiword_surfaces(self) -> list[str]:
        """Entries containing whitespace, longest first. These must be
        matched on raw text before word splitting."""
        surfaces = [t for t in self.tokens[N_SPECIALS:] if " " in t]
        return sorted(surfaces, key=lambda s: (-len(s), s))

    def extended(self, surfaces: Sequence[str]) -> "Vocabulary":
        """New vocabulary with *surfaces* appended in order. Existing
        ids are untouched."""
        for surface in surfaces:
            if surface in self.index:
                raise ValueError(f"token {surface!r} already in vocabulary")
        return Vocabulary(self.tokens + list(surfaces))

    # one token per line, line number (0-based) = token id
    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        tokens = text.split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)

    @classmethod
    def build(cls, texts: Iterable[str], size: int = 2000) -> "Vocabulary":
        """Frequency-built vocabulary: specials, then every observed
        character (so piece matching can always fall back), then the
        most frequent words until *size* entries.

        Deterministic: ties break lexicographically.
        """
        word_counts: Counter[str] = Counter()
        char_counts: Counter[str] = Counter()
        for text in texts:
            for word in _URL_RE.sub(f" {URL_TOKEN} ", text).split():
                if word == URL_TOKEN:
                    continue
                word_counts[word] += 1
                char_counts.update(word)
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for char, _ in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if char not in seen:
                tokens.append(char)
                seen.add(char)
        if size < len(tokens):
            raise ValueError(
                f"vocabulary size {size} cannot hold specials plus the "
                f"{len(tokens) - N_SPECIALS} observed characters"
            )
        for word, _ in sorted(word_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if len(tokens) >= size:
                break
            if word not in seen:
                tokens.append(word)
                seen.add(word)
        return cls(tokens)


@dataclass(frozen=True)
class TokenizedText:
    """Token ids for one text, before padding."""

    ids: tuple[int, ...]
    empty: bool  # no non-special content at all


class Tokenizer:
    """Deterministic tokenizer over a fixed :class:`Vocabulary`."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._max_piece_len = max(
            (len(t) for t in vocab.tokens[N_SPECIALS:] if " " not in t), default=1
        )
        surfaces = vocab.multiword_surfaces()
        if surfaces:
            # whole-surface match only: no partial-word hits
            pattern = "|".join(re.escape(s) for s in surfaces)
            self._atomic_re: re.Pattern | None = re.compile(
                rf"(?<!\S)(?:{pattern})(?!\S)"
            )
        else:
            self._atomic_re = None

    def word_ids(self, word: str) -> list[int]:
        """Ids for one whitespace-free word: whole-word lookup first,
        then greedy longest-prefix pieces, then <unk> per character."""
        whole = self.vocab.id_of(word)
        if whole is not None:
            return [whole]
        ids: list[int] = []
        i = 0
        n = len(word)
        while i < n:
            match_id = None
            j_end = min(n, i + self._max_piece_len)
            for j in range(j_end, i, -1):
                candidate = self.vocab.id_of(word[i:j])
                if candidate is not None and candidate >= N_SPECIALS:
                    match_id = candidate
                    i = j
                    break
            if match_id is None:
                ids.append(UNK_ID)
                i += 1
            else:
                ids.append(match_id)
        return ids

    def tokenize(self, text: str) -> list[int]:
        """Content token ids for *text* (no BOS/EOS)."""
        text = _URL_RE.sub(f" {URL_TOKEN} ", text)
        segments: list[tuple[str, bool]] = []  # (segment, is_atomic)
        if self._atomic_re is not None:
            cursor = 0
            for match in self._atomic_re.finditer(text):
                if match.start() > cursor:
                    segments.append((text[cursor : match.start()], False))
                segments.append((match.group(0), True))
                cursor = match.end()
            if cursor < len(text):
                segments.append((text[cursor:], False))
        else:
            segments.append((text, False))

        ids: list[int] = []
        for segment, is_atomic in segments:
            if is_atomic:
                ids.append(self.vocab.index[segment])
                continue
            for word in segment.split():
                if word == URL_TOKEN:
                    ids.append(URL_ID)
                else:
                    ids.extend(self.word_ids(word))
        return ids

    def encode(self, text: str, max_len: int) -> TokenizedText:
        """BOS + content + EOS, truncated to *max_len* ids."""
        if max_len < 2:
            raise ValueError("max_len must be at least 2 (BOS and EOS)")
        content = self.tokenize(text)
        empty = not any(i >= N_SPECIALS for i in content)
        ids = [BOS_ID] + content[: max_len - 2] + [EOS_ID]
        return TokenizedText(ids=tuple(ids), empty=empty)

    def count_occurrences(self, texts: Iterable[str], token_ids: set[int]) -> int:
        """How many times any of *token_ids* appears when tokenizing."""
        hits = 0
        for text in texts:
            hits += sum(1 for i in self.tokenize(text) if i in token_ids)
        return hits
