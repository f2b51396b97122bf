"""HTTP service closing the feedback loop.

Serves examples with predictions and saliency, accepts mask/label
feedback into an append-only JSONL log, exports feedback-merged dataset
snapshots, runs retraining in a background worker, and promotes trained
checkpoints for serving.  State is always a pure fold over the log, so a
crash at any byte offset recovers by replay.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import metrics as MT
from . import model as M
from . import saliency as S
from . import trainer as TR
from .data import (
    DataFormatError,
    DatasetManifest,
    MaskSet,
    from_binary_bytes,
    load_dataset,
    to_binary_bytes,
)

LABEL_DECISIONS = ("confirm", "add", "remove", "untouched")
DATA_DIR_ENV = "GRADMASK_DATA_DIR"


# ---------------------------------------------------------------------------
# append-only feedback log


class FeedbackStore:
    """Newline-delimited JSON feedback log; writes are serialized."""

    def __init__(self, data_dir):
        self.path = Path(data_dir) / "feedback.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> dict:
        with self._lock:
            records = self.replay()
            revision = 1 + max(
                (r["revision"] for r in records if r["example_id"] == record["example_id"]),
                default=0,
            )
            stored = dict(record, revision=revision, submitted_at=time.time())
            with open(self.path, "a") as f:
                f.write(json.dumps(stored, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
        return stored

    def replay(self) -> list[dict]:
        """All committed records; the trailing newline is the commit marker,
        so anything after the last newline (a partial write) is ignored."""
        if not self.path.exists():
            return []
        records = []
        committed, _, _ = self.path.read_bytes().rpartition(b"\n")
        for line in committed.split(b"\n"):
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                break  # partial write at crash point: everything after is void
        return records


@dataclass
class QueueState:
    pending: list[str]
    completed: list[str]
    revisions: dict[str, int] = field(default_factory=dict)


def queue_state(manifest: DatasetManifest, records: list[dict]) -> QueueState:
    revisions: dict[str, int] = {}
    for r in records:
        revisions[r["example_id"]] = max(revisions.get(r["example_id"], 0), r["revision"])
    pending = [ex.id for ex in manifest.examples if ex.id not in revisions]
    completed = [ex.id for ex in manifest.examples if ex.id in revisions]
    return QueueState(pending, completed, revisions)


def latest_records(records: list[dict]) -> dict[str, dict]:
    latest: dict[str, dict] = {}
    for r in records:
        cur = latest.get(r["example_id"])
        if cur is None or r["revision"] > cur["revision"]:
            latest[r["example_id"]] = r
    return latest


def export_snapshot(manifest: DatasetManifest, records: list[dict]) -> bytes:
    """Deterministic dataset bytes with feedback merged.

    Only annotator feedback masks survive into the export (so E is exactly
    the feedback set); label decisions override a working copy of the
    labels, originals untouched.
    """
    latest = latest_records(records)
    name_to_idx = {n: j for j, n in enumerate(manifest.label_names)}
    out = []
    for ex in manifest.examples:
        fb = latest.get(ex.id)
        if fb is None:
            out.append(replace(ex, mask=None))
            continue
        labels = ex.labels.copy()
        for name, decision in fb.get("label_decisions", {}).items():
            j = name_to_idx[name]
            if decision == "add":
                labels[j] = 1
            elif decision == "remove":
                labels[j] = -1
        mask = MaskSet([tuple(iv) for iv in fb["intervals"]], source="annotator")
        out.append(replace(ex, labels=labels, mask=mask))
    merged = DatasetManifest(
        out, manifest.K, list(manifest.label_names), manifest.L, manifest.T, manifest.sample_rate_hz
    )
    return to_binary_bytes(merged)


# ---------------------------------------------------------------------------
# request models


class FeedbackBody(BaseModel):
    annotator_id: str = "anonymous"
    intervals: list[tuple[int, int, int]] = Field(default_factory=list)
    label_decisions: dict[str, str] = Field(default_factory=dict)
    note: str = ""


class RetrainBody(BaseModel):
    epochs: int | None = None
    lam: float | None = None
    lr: float | None = None
    batch_size: int | None = None
    selection_metric: str | None = None
    seed: int = 0
    allow_empty: bool = False


class PromoteBody(BaseModel):
    run_id: str


# ---------------------------------------------------------------------------
# application


class ServiceState:
    def __init__(self, manifest, data_dir, params=None, model_config=None, ckpt_meta=None):
        self.manifest = manifest
        self.data_dir = Path(data_dir)
        self.store = FeedbackStore(self.data_dir)
        self.params = params
        self.model_config = model_config
        self.ckpt_meta = ckpt_meta or {}
        self.ckpt_id = self._checkpoint_id()
        self.saliency_cache: dict[tuple[str, str], bytes] = {}
        self.prediction_cache: dict[tuple[str, str], dict] = {}
        self.runs: dict[str, dict] = {}
        self.run_lock = threading.Lock()
        self.active_run: str | None = None
        self.train_defaults = TR.TrainConfig(epochs=5, seeds=(0,))

    def _checkpoint_id(self):
        if self.params is None:
            return None
        h = hashlib.sha256()
        for name in self.params.names():
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()[:16]

    def promote(self, params, model_config, meta):
        self.params = params
        self.model_config = model_config
        self.ckpt_meta = meta
        self.ckpt_id = self._checkpoint_id()
        self.saliency_cache.clear()
        self.prediction_cache.clear()

    def require_checkpoint(self):
        if self.params is None:
            raise HTTPException(
                status_code=409,
                detail="no checkpoint loaded; train one and POST /api/promote, "
                "or restart with --checkpoint",
            )

    def prediction(self, example):
        self.require_checkpoint()
        key = (self.ckpt_id, example.id)
        if key not in self.prediction_cache:
            logits = M.forward(self.params, self.model_config, example.signal)
            self.prediction_cache[key] = {
                "predicted_labels": [
                    self.manifest.label_names[j]
                    for j in np.flatnonzero(M.predict(logits) == 1)
                ],
                "scores": M.scores(logits).tolist(),
            }
        return self.prediction_cache[key]

    def saliency_json(self, example) -> bytes:
        self.require_checkpoint()
        key = (self.ckpt_id, example.id)
        if key not in self.saliency_cache:
            smap = S.compute_saliency(self.params, self.model_config, example)
            self.saliency_cache[key] = S.to_json_bytes(smap)
        return self.saliency_cache[key]


def create_app(
    dataset, checkpoint=None, data_dir=None, static_dir=None, train_defaults=None
) -> FastAPI:
    """Build the service around a dataset (path or manifest) and checkpoint."""
    if isinstance(dataset, DatasetManifest):
        manifest = dataset
    else:
        p = Path(dataset)
        manifest = load_dataset(p, "csv_dir" if p.is_dir() else "binary_records")
    data_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV) or "gradmask-data")

    params = model_config = None
    meta = {}
    if checkpoint is not None:
        params, model_config, meta = M.load_checkpoint(checkpoint)

    state = ServiceState(manifest, data_dir, params, model_config, meta)
    if train_defaults is not None:
        state.train_defaults = train_defaults
    app = FastAPI(title="gradmask feedback service")
    app.state.gm = state

    @app.get("/api/examples")
    def list_examples(status: str = "pending", limit: int = 50):
        qs = queue_state(state.manifest, state.store.replay())
        if status == "pending":
            ids = qs.pending
        elif status == "completed":
            ids = qs.completed
        elif status == "all":
            ids = [ex.id for ex in state.manifest.examples]
        else:
            raise HTTPException(422, f"unknown status {status!r}")
        out = []
        for eid in ids[: max(0, limit)]:
            ex = state.manifest.by_id(eid)
            pred = state.prediction(ex)
            out.append(
                {
                    "id": eid,
                    "split": ex.split,
                    "predicted_labels": pred["predicted_labels"],
                    "scores": pred["scores"],
                    "has_feedback": eid in qs.revisions,
                    "revision": qs.revisions.get(eid, 0),
                }
            )
        return {"examples": out, "n_pending": len(qs.pending), "n_completed": len(qs.completed)}

    @app.get("/api/examples/{example_id}")
    def get_example(example_id: str):
        try:
            ex = state.manifest.by_id(example_id)
        except KeyError:
            raise HTTPException(404, f"unknown example {example_id!r}")
        pred = state.prediction(ex)
        records = [
            r for r in state.store.replay() if r["example_id"] == example_id
        ]
        return {
            "id": ex.id,
            "signal": ex.signal.tolist(),
            "sample_rate_hz": ex.sample_rate_hz,
            "L": state.manifest.L,
            "T": state.manifest.T,
            "label_names": state.manifest.label_names,
            "labels": ex.labels.tolist(),
            "split": ex.split,
            "predicted_labels": pred["predicted_labels"],
            "scores": pred["scores"],
            "saliency": json.loads(state.saliency_json(ex)),
            "feedback_revisions": records,
        }

    @app.post("/api/examples/{example_id}/feedback")
    def post_feedback(example_id: str, body: FeedbackBody):
        try:
            ex = state.manifest.by_id(example_id)
        except KeyError:
            raise HTTPException(404, f"unknown example {example_id!r}")
        try:
            MaskSet(body.intervals).validate(state.manifest.L, state.manifest.T)
        except DataFormatError as e:
            raise HTTPException(422, str(e))
        for name, decision in body.label_decisions.items():
            if name not in state.manifest.label_names:
                raise HTTPException(422, f"unknown label {name!r}")
            if decision not in LABEL_DECISIONS:
                raise HTTPException(422, f"unknown decision {decision!r} for label {name!r}")
        stored = state.store.append(
            {
                "example_id": ex.id,
                "annotator_id": body.annotator_id,
                "intervals": [list(iv) for iv in body.intervals],
                "label_decisions": body.label_decisions,
                "note": body.note,
            }
        )
        return stored

    @app.post("/api/retrain")
    def retrain(body: RetrainBody):
        records = state.store.replay()
        if not latest_records(records) and not body.allow_empty:
            raise HTTPException(
                422, "no feedback collected yet; pass allow_empty=true to train anyway"
            )
        with state.run_lock:
            if state.active_run is not None:
                raise HTTPException(409, f"run {state.active_run} is already active")
            run_id = uuid.uuid4().hex[:12]
            state.active_run = run_id

        run_dir = state.data_dir / "runs" / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        snapshot = export_snapshot(state.manifest, records)
        (run_dir / "dataset.gmsk").write_bytes(snapshot)

        overrides = {
            k: v
            for k, v in body.model_dump().items()
            if k in ("epochs", "lam", "lr", "batch_size", "selection_metric") and v is not None
        }
        tconfig = replace(state.train_defaults, **overrides)
        model_config = state.model_config or M.ModelConfig(
            in_leads=state.manifest.L, n_classes=state.manifest.K
        )
        status = {
            "run_id": run_id,
            "status": "running",
            "epochs_done": 0,
            "epochs_total": tconfig.epochs,
            "manifest": None,
            "error": None,
        }
        state.runs[run_id] = status

        def worker():
            try:
                ds = from_binary_bytes(snapshot)
                result = TR.train(
                    ds,
                    model_config,
                    tconfig,
                    seed=body.seed,
                    out_dir=run_dir,
                    on_epoch=lambda e, *_: status.update(epochs_done=e + 1),
                )
                status["manifest"] = result.manifest
                status["status"] = "completed"
            except Exception as e:  # surfaced via the status endpoint
                status["status"] = "failed"
                status["error"] = str(e)
            finally:
                with state.run_lock:
                    state.active_run = None

        threading.Thread(target=worker, daemon=True).start()
        return {"run_id": run_id}

    @app.get("/api/runs/{run_id}")
    def run_status(run_id: str):
        if run_id not in state.runs:
            raise HTTPException(404, f"unknown run {run_id!r}")
        return state.runs[run_id]

    @app.post("/api/promote")
    def promote(body: PromoteBody):
        status = state.runs.get(body.run_id)
        if status is None:
            raise HTTPException(404, f"unknown run {body.run_id!r}")
        if status["status"] != "completed":
            raise HTTPException(409, f"run {body.run_id} is {status['status']}, not completed")
        ckpt = state.data_dir / "runs" / body.run_id / "ckpt-best"
        params, model_config, meta = M.load_checkpoint(ckpt)
        state.promote(params, model_config, meta)
        return {"promoted": body.run_id, "checkpoint_id": state.ckpt_id}

    @app.get("/api/status")
    def service_status():
        return {
            "checkpoint_id": state.ckpt_id,
            "n_examples": len(state.manifest.examples),
            "K": state.manifest.K,
            "active_run": state.active_run,
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
