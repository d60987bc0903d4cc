"""Post corpus: parsing, validation, storage, and basic statistics.

The corpus is an append-only collection of :class:`Post` records. A
``Corpus`` can live purely in memory or be bound to a directory, in
which case every accepted append is written through to a JSONL log and
the corpus can be reopened after a restart with identical content.

Text is never normalized, trimmed, or re-encoded anywhere in this
module: what goes in is what comes out, byte for byte.
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

POSTS_FILENAME = "posts.jsonl"

CSV_FIELDS = (
    "post_id",
    "text",
    "author_id",
    "created_at",
    "retweet_of",
    "author_verified",
    "author_handle",
)

_TRUE_STRINGS = {"true", "1", "yes"}
_FALSE_STRINGS = {"false", "0", "no", ""}


@dataclass(frozen=True, slots=True)
class Post:
    """One post. ``retweet_of`` is the id of the source post when this
    record is a retweet, else None. ``created_at`` is UTC epoch seconds."""

    post_id: str
    text: str
    author_id: str
    created_at: int
    retweet_of: str | None = None
    author_verified: bool = False
    author_handle: str | None = None

    @property
    def is_retweet(self) -> bool:
        return self.retweet_of is not None

    def to_record(self) -> dict:
        return {
            "post_id": self.post_id,
            "text": self.text,
            "author_id": self.author_id,
            "created_at": self.created_at,
            "retweet_of": self.retweet_of,
            "author_verified": self.author_verified,
            "author_handle": self.author_handle,
        }


@dataclass(frozen=True)
class MalformedRecord:
    """Where and why a source record was rejected."""

    line: int
    reason: str


@dataclass
class IngestReport:
    """Outcome of one parse pass: nothing is dropped silently."""

    accepted: int = 0
    duplicates: int = 0
    malformed: list[MalformedRecord] = field(default_factory=list)

    @property
    def n_malformed(self) -> int:
        return len(self.malformed)


@dataclass(frozen=True)
class CorpusStats:
    total_posts: int
    unique_posts: int
    total_users: int
    earliest: int | None
    latest: int | None


def _parse_record(record: object) -> Post | str:
    """Turn one decoded record into a Post, or return a reason string."""
    if not isinstance(record, dict):
        return "record is not an object"
    for name in ("post_id", "text", "author_id", "created_at"):
        if name not in record or record[name] is None:
            return f"missing required field {name!r}"
    post_id = record["post_id"]
    text = record["text"]
    author_id = record["author_id"]
    created_at = record["created_at"]
    if not isinstance(post_id, str) or not post_id:
        return "post_id must be a non-empty string"
    if not isinstance(text, str):
        return "text must be a string"
    if not isinstance(author_id, str) or not author_id:
        return "author_id must be a non-empty string"
    if isinstance(created_at, bool) or not isinstance(created_at, int):
        return "created_at must be an integer (epoch seconds)"
    if created_at < 0:
        return "created_at must be non-negative"
    retweet_of = record.get("retweet_of")
    if retweet_of is not None and (not isinstance(retweet_of, str) or not retweet_of):
        return "retweet_of must be a non-empty string or null"
    if retweet_of == post_id:
        return "retweet_of refers to the post itself"
    author_verified = record.get("author_verified", False)
    if not isinstance(author_verified, bool):
        return "author_verified must be a boolean"
    author_handle = record.get("author_handle")
    if author_handle is not None and not isinstance(author_handle, str):
        return "author_handle must be a string or null"
    return Post(
        post_id=post_id,
        text=text,
        author_id=author_id,
        created_at=created_at,
        retweet_of=retweet_of,
        author_verified=author_verified,
        author_handle=author_handle,
    )


def _csv_row_to_record(row: dict) -> dict:
    """Lift a CSV row (all strings) into the JSON-shaped record form."""
    record: dict = dict(row)
    raw_created = row.get("created_at")
    if raw_created is not None:
        try:
            record["created_at"] = int(raw_created)
        except (TypeError, ValueError):
            # leave as-is; _parse_record reports the type error
            record["created_at"] = raw_created if raw_created != "" else None
    for optional in ("retweet_of", "author_handle"):
        if row.get(optional) == "":
            record[optional] = None
    verified = (row.get("author_verified") or "").strip().lower()
    if verified in _TRUE_STRINGS:
        record["author_verified"] = True
    elif verified in _FALSE_STRINGS:
        record["author_verified"] = False
    return record


class Corpus:
    """Append-only post collection with id lookup and derived indexes.

    Iteration order is insertion order. When constructed via
    :meth:`open` the corpus is bound to a directory and appends are
    persisted immediately; otherwise it is purely in memory.
    """

    def __init__(self, posts: Iterable[Post] = ()):
        self._posts: list[Post] = []
        self._by_id: dict[str, Post] = {}
        self._store_path: Path | None = None
        self._lock = threading.Lock()
        self.ingest_report: IngestReport | None = None
        if posts:
            self.append(posts)

    # -- storage ------------------------------------------------------

    @classmethod
    def open(cls, directory: str | Path) -> "Corpus":
        """Open (or create) a directory-backed corpus store.

        Reopening a store after a process restart yields the same
        posts in the same order.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        log = directory / POSTS_FILENAME
        corpus = cls()
        if log.exists():
            posts, report = read_posts_jsonl(log)
            if report.malformed:
                bad = report.malformed[0]
                raise ValueError(
                    f"corrupt store {log}: line {bad.line}: {bad.reason}"
                )
            corpus.append(posts)
        else:
            log.touch()
        corpus._store_path = log
        return corpus

    def append(self, posts: Iterable[Post]) -> int:
        """Add posts; duplicates by post_id are skipped (first one wins).

        Returns the number actually added. Single-writer: appends are
        serialized under a lock, concurrent readers see a consistent
        prefix.
        """
        added: list[Post] = []
        with self._lock:
            for post in posts:
                if post.post_id in self._by_id:
                    continue
                self._posts.append(post)
                self._by_id[post.post_id] = post
                added.append(post)
            if self._store_path is not None and added:
                with self._store_path.open("a", encoding="utf-8") as handle:
                    for post in added:
                        handle.write(
                            json.dumps(post.to_record(), ensure_ascii=False)
                        )
                        handle.write("\n")
        return len(added)

    # -- access -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._posts)

    def __iter__(self) -> Iterator[Post]:
        return iter(self._posts)

    def __contains__(self, post_id: str) -> bool:
        return post_id in self._by_id

    def get(self, post_id: str) -> Post | None:
        return self._by_id.get(post_id)

    @property
    def posts(self) -> tuple[Post, ...]:
        return tuple(self._posts)

    def by_author(self, author_id: str) -> list[Post]:
        return [p for p in self._posts if p.author_id == author_id]

    def retweets(self) -> list[Post]:
        return [p for p in self._posts if p.is_retweet]

    def originals(self) -> list[Post]:
        return [p for p in self._posts if not p.is_retweet]

    # -- operations ---------------------------------------------------

    def stats(self) -> CorpusStats:
        """Corpus-level counts.

        ``unique_posts`` counts distinct content items: ids of
        non-retweet posts unioned with the source ids that retweets
        point at, so a thousand retweets of one post add one.
        """
        content_ids: set[str] = set()
        users: set[str] = set()
        earliest: int | None = None
        latest: int | None = None
        for post in self._posts:
            content_ids.add(post.retweet_of if post.is_retweet else post.post_id)
            users.add(post.author_id)
            if earliest is None or post.created_at < earliest:
                earliest = post.created_at
            if latest is None or post.created_at > latest:
                latest = post.created_at
        return CorpusStats(
            total_posts=len(self._posts),
            unique_posts=len(content_ids),
            total_users=len(users),
            earliest=earliest,
            latest=latest,
        )

    def filter_by_time(self, start: int, end: int) -> "Corpus":
        """Posts with start <= created_at <= end (both ends inclusive)."""
        if start > end:
            raise ValueError(f"empty time window: start {start} > end {end}")
        return Corpus(p for p in self._posts if start <= p.created_at <= end)

    # -- export -------------------------------------------------------

    def export_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for post in self._posts:
                handle.write(json.dumps(post.to_record(), ensure_ascii=False))
                handle.write("\n")

    def export_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for post in self._posts:
                record = post.to_record()
                record["retweet_of"] = record["retweet_of"] or ""
                record["author_handle"] = record["author_handle"] or ""
                record["author_verified"] = (
                    "true" if record["author_verified"] else "false"
                )
                writer.writerow(record)


def read_posts_jsonl(path: str | Path) -> tuple[list[Post], IngestReport]:
    """Parse a JSONL file of posts. Bad lines are reported, not dropped
    silently; duplicate post_ids keep the first occurrence."""
    report = IngestReport()
    posts: list[Post] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                report.malformed.append(
                    MalformedRecord(line_no, f"invalid JSON: {exc.msg}")
                )
                continue
            parsed = _parse_record(record)
            if isinstance(parsed, str):
                report.malformed.append(MalformedRecord(line_no, parsed))
                continue
            if parsed.post_id in seen:
                report.duplicates += 1
                continue
            seen.add(parsed.post_id)
            posts.append(parsed)
            report.accepted += 1
    return posts, report


def read_posts_csv(path: str | Path) -> tuple[list[Post], IngestReport]:
    """Parse a CSV file of posts (header row required, see CSV_FIELDS)."""
    report = IngestReport()
    posts: list[Post] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        # line numbers here count data rows, not physical lines: quoted
        # multi-line text makes physical numbering meaningless
        for row_no, row in enumerate(reader, start=2):
            parsed = _parse_record(_csv_row_to_record(row))
            if isinstance(parsed, str):
                report.malformed.append(MalformedRecord(row_no, parsed))
                continue
            if parsed.post_id in seen:
                report.duplicates += 1
                continue
            seen.add(parsed.post_id)
            posts.append(parsed)
            report.accepted += 1
    return posts, report


def ingest_posts(
    path: str | Path,
    fmt: str = "jsonl",
    store: Corpus | None = None,
) -> Corpus:
    """Read posts from *path* into a corpus.

    fmt is "jsonl" or "csv". When *store* is given, accepted posts are
    appended to it (write-through if it is directory-backed) and the
    store is returned; otherwise a fresh in-memory corpus is returned.
    The parse report is attached as ``corpus.ingest_report``.
    """
    if fmt == "jsonl":
        posts, report = read_posts_jsonl(path)
    elif fmt == "csv":
        posts, report = read_posts_csv(path)
    else:
        raise ValueError(f"unknown corpus format {fmt!r}; expected jsonl or csv")
    corpus = store if store is not None else Corpus()
    added = corpus.append(posts)
    # appends into an existing store can hit ids already present
    report.duplicates += report.accepted - added
    report.accepted = added
    corpus.ingest_report = report
    return corpus
