"""Feedback-driven retraining that resists forgetting.

Analyst verdicts on alerts land in an append-only journal. At retrain time
the flagged records (with corrected labels) plus a replay sample of the
original training data form the fine-tuning set, and an elastic penalty
anchored at the previous parameters keeps the models from drifting on
everything they already knew. The penalty weight per parameter is its
estimated Fisher information: how much the model's own predictions move
when that parameter does.
"""

from __future__ import annotations

import datetime as dt
import random
import threading
from dataclasses import dataclass, replace
from typing import Callable, Collection, Iterable, Sequence

import numpy as np

from . import jsonl
from .features import FeatureBundle
from .models.base import ShapeError
from .models.bundle import Anchor, BundleError, ModelBundle
from .models.gcn import Gcn
from .models.mlp import Mlp
from .models.training import TrainConfig, train

DEFAULT_FISHER_SAMPLES = 512
DEFAULT_REPLAY_RATIO = 2.0
VERDICTS = ("false_positive", "confirmed")
# the label an analyst verdict corrects the record to
CORRECTED_LABEL = {"false_positive": 0, "confirmed": 1}


# -- Fisher information --------------------------------------------------------


@dataclass
class FisherEstimate:
    """Diagonal empirical Fisher: per-parameter mean squared gradient of the
    log-likelihood, taken at labels drawn from the model itself."""

    values: np.ndarray
    sample_count: int

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("fisher entries must be >= 0")


def _model_inputs(model, data: Sequence[FeatureBundle], indices: Iterable[int]):
    if isinstance(model, Mlp):
        return [np.asarray(data[i].x, dtype=np.float64)[None, :] for i in indices]
    if isinstance(model, Gcn):
        return [[data[i].graph] for i in indices]
    raise TypeError(f"unsupported model type: {type(model).__name__}")


def _per_sample_grad(model, single_input, label: float) -> np.ndarray:
    y = np.array([label], dtype=np.float64)
    if isinstance(model, Mlp):
        # fixed-statistics mode: batch moments of one row are degenerate
        _, grad, _ = model.loss_and_grads(single_input, y, mode="infer")
    else:
        _, grad, _ = model.loss_and_grads(single_input, y)
    return grad


def estimate_fisher(
    model,
    data: Sequence[FeatureBundle],
    n_samples: int = DEFAULT_FISHER_SAMPLES,
    seed: int = 0,
    labels: np.ndarray | None = None,
) -> FisherEstimate:
    """Estimate the diagonal Fisher from up to n_samples points of `data`.

    Labels default to draws from the model's own predictive distribution;
    an explicit label vector (aligned with `data`) replaces the draws.
    """
    if len(data) == 0:
        raise ValueError("cannot estimate fisher from empty data")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    take = min(n_samples, len(data))
    indices = rng.choice(len(data), size=take, replace=False)
    singles = _model_inputs(model, data, indices)
    total = np.zeros(model.n_params)
    for i, single in zip(indices, singles):
        if labels is not None:
            label = float(labels[i])
        else:
            prob = _per_sample_prob(model, single)
            label = float(rng.random() < prob)
        grad = _per_sample_grad(model, single, label)
        total += grad * grad
    return FisherEstimate(values=total / take, sample_count=int(take))


def _per_sample_prob(model, single_input) -> float:
    if isinstance(model, Mlp):
        return float(model.forward(single_input)[0])
    return float(model.forward(single_input[0]))


# -- elastic penalty -----------------------------------------------------------


def ewc_loss(theta: np.ndarray, base_loss: float, anchor: Anchor) -> float:
    """base_loss + (lambda/2) * sum_i F_i * (theta_i - theta*_i)^2."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != anchor.theta.shape:
        raise ShapeError(
            f"theta shape {theta.shape} does not match anchor {anchor.theta.shape}"
        )
    delta = theta - anchor.theta
    return float(base_loss + 0.5 * anchor.lam * np.sum(anchor.fisher * delta * delta))


def ewc_penalty(anchor: Anchor) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Penalty hook for the trainer: extra loss and its exact gradient
    lambda * F_i * (theta_i - theta*_i)."""

    def penalty(theta: np.ndarray) -> tuple[float, np.ndarray]:
        if theta.shape != anchor.theta.shape:
            raise ShapeError(
                f"theta shape {theta.shape} does not match anchor {anchor.theta.shape}"
            )
        delta = theta - anchor.theta
        extra_loss = float(0.5 * anchor.lam * np.sum(anchor.fisher * delta * delta))
        extra_grad = anchor.lam * anchor.fisher * delta
        return extra_loss, extra_grad

    return penalty


# -- feedback journal ------------------------------------------------------------


@dataclass
class FeedbackEntry:
    """One analyst verdict on one alert, with the record it corrects."""

    alert_id: str
    verdict: str
    analyst: str
    timestamp: str
    bundle: FeatureBundle

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        want = CORRECTED_LABEL[self.verdict]
        if self.bundle.label != want:
            raise ValueError(
                f"verdict {self.verdict!r} requires corrected label {want}, "
                f"got {self.bundle.label!r}"
            )
        # fail early on malformed timestamps instead of at filter time
        dt.datetime.fromisoformat(self.timestamp)

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "verdict": self.verdict,
            "analyst": self.analyst,
            "timestamp": self.timestamp,
            "bundle": self.bundle.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeedbackEntry":
        return cls(
            alert_id=d["alert_id"],
            verdict=d["verdict"],
            analyst=d["analyst"],
            timestamp=d["timestamp"],
            bundle=FeatureBundle.from_dict(d["bundle"]),
        )


class FeedbackStore:
    """Append-only journal of verdicts; many threads may record, one file
    order results. Latest verdict per alert wins."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def append(self, entry: FeedbackEntry) -> None:
        with self._lock:
            jsonl.append_record(self.path, entry.to_dict())

    def entries(self) -> list[FeedbackEntry]:
        return [FeedbackEntry.from_dict(r) for r in jsonl.iter_records(self.path)]

    def latest(self) -> dict[str, FeedbackEntry]:
        verdicts: dict[str, FeedbackEntry] = {}
        for entry in self.entries():
            verdicts[entry.alert_id] = entry
        return verdicts


def record_feedback(
    store: FeedbackStore, entry: FeedbackEntry, known_alert_ids: Collection[str]
) -> dict:
    """Validate against the known alert universe and append; re-flagging an
    alert overwrites its prior verdict at read time."""
    if entry.alert_id not in known_alert_ids:
        raise KeyError(f"unknown alert id: {entry.alert_id}")
    store.append(entry)
    return {"alert_id": entry.alert_id, "verdict": entry.verdict, "recorded": True}


def _reservoir_sample(pool: Iterable[FeatureBundle], k: int, seed: int) -> list[FeatureBundle]:
    if k <= 0:
        return []
    rng = random.Random(seed)
    kept: list[FeatureBundle] = []
    for i, item in enumerate(pool):
        if i < k:
            kept.append(item)
        else:
            j = rng.randint(0, i)
            if j < k:
                kept[j] = item
    return kept


def _as_utc(timestamp: str) -> dt.datetime:
    parsed = dt.datetime.fromisoformat(timestamp)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed


def build_finetune_set(
    store: FeedbackStore,
    since: str | None = None,
    replay_pool: Iterable[FeatureBundle] = (),
    replay_ratio: float = DEFAULT_REPLAY_RATIO,
    seed: int = 0,
) -> list[FeatureBundle]:
    """Corrected bundles (one per alert, latest verdict) newer than `since`,
    plus a replay sample of the original training data sized at
    replay_ratio times the flagged count. Empty when nothing was flagged,
    which callers treat as "skip retraining"."""
    cutoff = _as_utc(since) if since is not None else None
    corrected = [
        entry.bundle
        for entry in store.latest().values()
        if cutoff is None or _as_utc(entry.timestamp) > cutoff
    ]
    if not corrected:
        return []
    labeled_pool = (b for b in replay_pool if b.label is not None)
    replay = _reservoir_sample(labeled_pool, int(replay_ratio * len(corrected)), seed)
    return corrected + replay


# -- retraining ------------------------------------------------------------------


def _utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def retrain_ewc(
    bundle: ModelBundle,
    finetune: Sequence[FeatureBundle],
    cfg: TrainConfig,
    lam: float | None = None,
    n_fisher_samples: int = DEFAULT_FISHER_SAMPLES,
    task_tag: str = "",
) -> ModelBundle:
    """Fine-tune both models under the elastic penalty and emit the next
    bundle version with refreshed anchors.

    The input bundle is never mutated; on divergence the trainer raises and
    the caller keeps serving the old version.
    """
    if not finetune:
        raise ValueError("finetune set is empty; nothing to retrain on")
    if any(b.label is None for b in finetune):
        raise ValueError("finetune bundles must all carry labels")
    for name in ("mlp", "gcn"):
        if bundle.anchors.get(name) is None:
            raise BundleError(f"bundle has no {name} anchor; cannot retrain")

    x = np.stack([b.x for b in finetune])
    graphs = [b.graph for b in finetune]
    y = np.array([float(b.label) for b in finetune])
    if cfg.class_weights == "balanced" and len(set(y.tolist())) < 2:
        # all-false-positive feedback is routine; balanced weighting is
        # undefined there and the anchors already hold the class structure
        cfg = replace(cfg, class_weights=None)

    new_models: dict[str, Mlp | Gcn] = {}
    for name, model_inputs in (("mlp", x), ("gcn", graphs)):
        source = getattr(bundle, name)
        model = type(source).from_dict(source.to_dict())
        old = bundle.anchors[name]
        strength = old.lam if lam is None else float(lam)
        anchor = Anchor(theta=old.theta, fisher=old.fisher, lam=strength, task_tag=old.task_tag)
        penalty = ewc_penalty(anchor) if strength > 0 else None
        train(model, model_inputs, y, cfg, penalty=penalty)
        new_models[name] = model

    version = bundle.version + 1
    tag = task_tag or f"retrain-v{version}"
    anchors = {}
    for name, model in new_models.items():
        fisher = estimate_fisher(model, finetune, n_fisher_samples, seed=cfg.seed)
        strength = bundle.anchors[name].lam if lam is None else float(lam)
        anchors[name] = Anchor(
            theta=model.pack(), fisher=fisher.values, lam=strength, task_tag=tag
        )

    return ModelBundle(
        version=version,
        created_at=_utc_now(),
        mlp=new_models["mlp"],
        gcn=new_models["gcn"],
        encoder=bundle.encoder,
        weights=bundle.weights,
        anchors=anchors,
        tree=bundle.tree,
        meta=dict(bundle.meta, finetune_size=len(finetune), task_tag=tag),
    )
