"""Grant or deny a data request from the model prediction and the UBE verdict.

A request is denied when either signal says malicious. When both fire the
decision is attributed to the model.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import MALICIOUS, FeatureRecord, NormStats
from .fed import GlobalModel
from .model import predict
from .ube import (
    AccessRecord,
    AccessRequest,
    Intent,
    KnowledgeBase,
    SecurityAssessment,
    SecurityThresholds,
    TimeWindow,
    assess,
)


class Verdict(enum.Enum):
    GRANTED = "granted"
    DENIED = "denied"


class Reason(enum.Enum):
    MODEL_MALICIOUS = "model_malicious"
    UBE_MALICIOUS = "ube_malicious"
    CLEAN = "clean"


class StatsMismatch(ValueError):
    """Features were scaled with different bounds than the model was trained on."""


@dataclass(frozen=True)
class AccessDecision:
    request: AccessRequest
    predicted_class: int
    ube_intent: Intent
    verdict: Verdict
    reason: Reason
    assessment: SecurityAssessment | None = None

    @property
    def denied(self) -> bool:
        return self.verdict is Verdict.DENIED


def combine(model_malicious: bool, ube_malicious: bool) -> tuple[Verdict, Reason]:
    if model_malicious:
        return Verdict.DENIED, Reason.MODEL_MALICIOUS
    if ube_malicious:
        return Verdict.DENIED, Reason.UBE_MALICIOUS
    return Verdict.GRANTED, Reason.CLEAN


def scaled_features(features, model: GlobalModel, stats: NormStats | None = None) -> np.ndarray:
    """Model-ready feature vector.

    A raw `FeatureRecord` is scaled with the model's stored bounds. An array is
    taken as already scaled; if `stats` says how, they must match the model's.
    """
    if isinstance(features, FeatureRecord):
        if model.stats is None:
            raise StatsMismatch("model carries no normalization stats to scale raw features")
        return model.stats.apply(features.features())
    if stats is not None and model.stats is not None and stats != model.stats:
        raise StatsMismatch("features were normalized with different stats than the model")
    return np.asarray(features, dtype=np.float64)


def decide(
    request: AccessRequest,
    features,
    assessment: SecurityAssessment,
    model: GlobalModel,
    stats: NormStats | None = None,
) -> AccessDecision:
    """Deny iff the model predicts class 1 (malicious) or UBE intent is malicious.

    A model prediction of 'unknown' does not deny on its own.
    """
    x = scaled_features(features, model, stats)
    predicted = int(predict(model.params, model.spec, x))
    verdict, reason = combine(predicted == MALICIOUS, assessment.intent is Intent.MALICIOUS)
    return AccessDecision(request, predicted, assessment.intent, verdict, reason, assessment)


@dataclass(frozen=True)
class ScoredRequest:
    request: AccessRequest
    features: FeatureRecord


def default_window(request: AccessRequest, lookback: int | None) -> TimeWindow:
    if lookback is None:
        return TimeWindow(0, request.timestamp)
    return TimeWindow(max(0, request.timestamp - lookback), request.timestamp)


def score_requests(
    requests: Iterable[ScoredRequest],
    kb: KnowledgeBase,
    model: GlobalModel,
    thresholds: SecurityThresholds = SecurityThresholds(),
    lookback: int | None = None,
    record_denials: bool = True,
) -> list[AccessDecision]:
    """Score requests in order against a knowledge base.

    With `record_denials`, each denied request is appended to the user's
    history as an unauthorized attempt, so it counts against later requests.
    """
    decisions = []
    for item in requests:
        req = item.request
        auth = kb.authorization(req.user_id)
        ass = assess(req, kb.history(req.user_id), auth, default_window(req, lookback), thresholds)
        decision = decide(req, item.features, ass, model)
        decisions.append(decision)
        if record_denials and decision.denied:
            kb.record(req.user_id, AccessRecord(req.data_id, req.category_id, req.timestamp,
                                                authorized=auth.allows(req.category_id, req.data_id)))
    return decisions


DECISION_LOG_HEADER = ("user_id", "data_id", "predicted_class", "sigma_total", "verdict", "reason")


def write_decision_log(decisions: Sequence[AccessDecision], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DECISION_LOG_HEADER)
        for d in decisions:
            sigma = d.assessment.sigma_total if d.assessment is not None else ""
            writer.writerow([d.request.user_id, d.request.data_id, d.predicted_class, sigma,
                             d.verdict.value, d.reason.value])
