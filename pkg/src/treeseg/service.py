"""HTTP service wrapping the segmentation engine.

Checkpoints are loaded once at startup; clients post feature sequences and
receive the predicted labels together with the gateway's decision trace.
Start it with ``treeseg serve --models <dir>``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .core import EngineConfig, LabeledSequence
from .fileio import read_checkpoint
from .gateway import run_episode
from .lang_model import TransitionTable
from .metrics import report
from .policy import PolicyModel
from .value import RecurrentValueModel


@dataclass
class ModelBundle:
    policy: PolicyModel
    value: RecurrentValueModel
    table: TransitionTable
    cfg: EngineConfig


def load_bundle(models_dir: Union[str, Path]) -> ModelBundle:
    models_dir = Path(models_dir)
    with open(models_dir / "engine.json", "r", encoding="utf-8") as fh:
        cfg = EngineConfig(**json.load(fh))
    return ModelBundle(
        policy=read_checkpoint(models_dir / "policy.ckpt", "policy", cfg),
        value=read_checkpoint(models_dir / "value.ckpt", "value", cfg),
        table=read_checkpoint(models_dir / "lang_model.ckpt", "lang_model", cfg),
        cfg=cfg,
    )


class SegmentRequest(BaseModel):
    features: list[list[float]] = Field(description="T x F frame features")
    labels: Optional[list[int]] = Field(default=None, description="optional ground truth")
    group_id: str = ""
    threshold: Optional[float] = Field(default=None, description="confidence threshold override")
    search_times: Optional[int] = Field(default=None, ge=0, description="simulations override")


class DecisionOut(BaseModel):
    frame: int
    max_prob: float
    searched: bool
    step: int
    label: int


class MetricsOut(BaseModel):
    accuracy: float
    edit_score: float
    f1_10: float
    f1_25: float
    f1_50: float
    num_predicted_segments: int
    num_ground_truth_segments: int


class SegmentResponse(BaseModel):
    predicted_labels: list[int]
    decisions: list[DecisionOut]
    searched_fraction: float
    searched_frame_fraction: float
    metrics: Optional[MetricsOut] = None


class EvaluateRequest(BaseModel):
    predicted: list[int]
    ground_truth: list[int]


def create_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="treeseg", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/config")
    def config() -> dict:
        return bundle.cfg.as_dict()

    @app.post("/segment", response_model=SegmentResponse)
    def segment(request: SegmentRequest) -> SegmentResponse:
        try:
            labels = np.asarray(request.labels, dtype=np.int64) if request.labels else None
            seq = LabeledSequence(
                features=np.asarray(request.features, dtype=np.float64),
                labels=labels,
                group_id=request.group_id,
            )
            if seq.feature_dim != bundle.cfg.feature_dim:
                raise ValueError(
                    f"expected {bundle.cfg.feature_dim} features per frame, got {seq.feature_dim}"
                )
            episode = run_episode(
                seq,
                bundle.policy,
                bundle.value,
                bundle.table,
                bundle.cfg,
                threshold=request.threshold,
                num_simulations=request.search_times,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        metrics = None
        if seq.has_labels:
            metrics = MetricsOut(**report(episode.predicted_labels, seq.labels).as_dict())
        return SegmentResponse(
            predicted_labels=[int(v) for v in episode.predicted_labels],
            decisions=[
                DecisionOut(
                    frame=d.frame,
                    max_prob=d.max_probability,
                    searched=d.searched,
                    step=d.action.step,
                    label=d.action.label,
                )
                for d in episode.decisions
            ],
            searched_fraction=episode.searched_fraction,
            searched_frame_fraction=episode.searched_frame_fraction,
            metrics=metrics,
        )

    @app.post("/evaluate", response_model=MetricsOut)
    def evaluate(request: EvaluateRequest) -> MetricsOut:
        try:
            scores = report(
                np.asarray(request.predicted, dtype=np.int64),
                np.asarray(request.ground_truth, dtype=np.int64),
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return MetricsOut(**scores.as_dict())

    return app
