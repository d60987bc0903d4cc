"""HTTP API for annotation rounds.

Serves posts to coders, records labels (last write wins, every write
audited), and reports agreement and disagreements per round. The
coder id sent with each request is the identity; deployments needing
real authentication should front this with a reverse proxy.

Label writes go through the round's :class:`AnnotationStore`, which
serializes them under a lock and appends to the event log, so
concurrent submissions from two coders cannot corrupt state.
"""

from __future__ import annotations

import io
import time
from importlib import resources
from typing import Any

import yaml
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .annotation import AnnotationStore, round_kappa
from .categories import CATEGORIES
from .corpus import Corpus


class LabelSubmission(BaseModel):
    coder_id: str
    post_id: str
    label: str


def default_codebook() -> dict:
    data = resources.files("skdiscourse.data").joinpath("codebook.yaml")
    return yaml.safe_load(data.read_text(encoding="utf-8"))


def create_app(
    store: AnnotationStore,
    corpus: Corpus,
    codebook: dict | None = None,
) -> FastAPI:
    app = FastAPI(title="annotation server")
    rules = codebook or default_codebook()

    def get_round(round_id: str):
        try:
            return store.get_round(round_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown round {round_id!r}")

    @app.get("/rounds")
    def list_rounds() -> list[dict[str, Any]]:
        out = []
        for rnd in store.rounds.values():
            progress = rnd.progress()
            out.append(
                {
                    "round_id": rnd.round_id,
                    "coders": list(rnd.coders),
                    "n_posts": len(rnd.post_ids),
                    "progress": progress,
                }
            )
        return out

    @app.get("/rounds/{round_id}/next")
    def next_post(round_id: str, coder: str = Query(...)) -> dict[str, Any]:
        rnd = get_round(round_id)
        if coder not in rnd.coders:
            raise HTTPException(
                status_code=403,
                detail=f"coder {coder!r} is not assigned to round {round_id!r}",
            )
        post_id = rnd.next_unlabeled(coder)
        progress = rnd.progress()
        payload: dict[str, Any] = {
            "round_id": round_id,
            "done": post_id is None,
            "n_posts": len(rnd.post_ids),
            "n_labeled": progress[coder],
        }
        if post_id is not None:
            post = corpus.get(post_id)
            payload["post_id"] = post_id
            payload["text"] = post.text if post else ""
        return payload

    @app.post("/rounds/{round_id}/labels")
    def submit_label(round_id: str, submission: LabelSubmission) -> dict[str, Any]:
        rnd = get_round(round_id)
        if submission.coder_id not in rnd.coders:
            raise HTTPException(
                status_code=403,
                detail=f"coder {submission.coder_id!r} is not assigned to this round",
            )
        if submission.post_id not in rnd.post_ids:
            raise HTTPException(
                status_code=404,
                detail=f"post {submission.post_id!r} is not part of this round",
            )
        if submission.label not in CATEGORIES:
            raise HTTPException(
                status_code=422,
                detail=f"label must be one of {list(CATEGORIES)}",
            )
        record = store.record_label(
            round_id,
            submission.coder_id,
            submission.post_id,
            submission.label,
            labeled_at=int(time.time()),
        )
        return {
            "post_id": record.post_id,
            "coder_id": record.coder_id,
            "label": record.label,
            "labeled_at": record.labeled_at,
        }

    @app.get("/rounds/{round_id}/kappa")
    def kappa(round_id: str) -> dict[str, Any]:
        rnd = get_round(round_id)
        try:
            result = round_kappa(rnd)
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {
            "round_id": round_id,
            "kappa": result.kappa,
            "observed_agreement": result.observed_agreement,
            "expected_agreement": result.expected_agreement,
            "n_items": result.n_items,
            "degenerate": result.degenerate,
        }

    @app.get("/rounds/{round_id}/disagreements")
    def disagreements(round_id: str) -> list[dict[str, Any]]:
        rnd = get_round(round_id)
        if len(rnd.coders) != 2:
            raise HTTPException(
                status_code=409, detail="disagreements need exactly two coders"
            )
        first, second = rnd.coders
        by_coder = rnd.labels_by_coder()
        out = []
        for post_id in rnd.post_ids:
            label_a = by_coder[first].get(post_id)
            label_b = by_coder[second].get(post_id)
            if label_a is None or label_b is None or label_a == label_b:
                continue
            post = corpus.get(post_id)
            out.append(
                {
                    "post_id": post_id,
                    "text": post.text if post else "",
                    "labels": {first: label_a, second: label_b},
                }
            )
        return out

    @app.get("/rounds/{round_id}/codebook")
    def round_codebook(round_id: str) -> dict:
        get_round(round_id)
        return rules

    @app.get("/rounds/{round_id}/labels.csv", response_class=PlainTextResponse)
    def labels_csv(round_id: str) -> str:
        import csv as _csv

        rnd = get_round(round_id)
        buffer = io.StringIO()
        writer = _csv.writer(buffer)
        writer.writerow(("post_id", "coder_id", "round", "label", "labeled_at"))
        for r in rnd.current_records():
            writer.writerow([r.post_id, r.coder_id, r.round, r.label, r.labeled_at])
        return buffer.getvalue()

    return app
