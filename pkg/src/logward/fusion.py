"""Decision fusion of the two model outputs, plus evaluation metrics.

Each model emits an anomaly probability; fusion works on the complementary
normal-class probabilities p1 (structured features, MLP) and p2 (parameter
graph, GCN). The weight dictionary splits its mass into s0 (everything but
the parameter list) and s1 (the parameter list), the fused normal score is
their convex combination, and a record is called normal only when that
score clears 0.5 strictly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .features import PARAMETER_COLUMN, WeightDictionary


@dataclass(frozen=True)
class FusionWeights:
    s0: float
    s1: float

    def __post_init__(self):
        if self.s0 < 0 or self.s1 < 0:
            raise ValueError("fusion weights must be non-negative")
        if abs(self.s0 + self.s1 - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {self.s0 + self.s1}")

    def to_dict(self) -> dict:
        return {"s0": self.s0, "s1": self.s1}


@dataclass(frozen=True)
class FusedPrediction:
    p1: float
    p2: float
    fused: float
    y_hat: int

    def to_dict(self) -> dict:
        return {"p1": self.p1, "p2": self.p2, "fused": self.fused, "y_hat": self.y_hat}


def relative_scores(weights: WeightDictionary) -> FusionWeights:
    """Split the selected columns' importance mass: s1 is the parameter
    list's share, s0 everything else's. No parameter-list entry means the
    graph model gets no say (s1 = 0)."""
    total = sum(weights.weights.values())
    if total <= 0:
        raise ValueError("weight dictionary sums to zero; fusion undefined")
    s1 = weights.weights.get(PARAMETER_COLUMN, 0.0) / total
    return FusionWeights(s0=1.0 - s1, s1=s1)


def fuse(p1: float, p2: float, w: FusionWeights) -> float:
    """F = p1*s0 + p2*s1, both probabilities being class-0 (normal)."""
    if not 0.0 <= p1 <= 1.0 or not 0.0 <= p2 <= 1.0:
        raise ValueError(f"probabilities must lie in [0, 1], got p1={p1}, p2={p2}")
    return p1 * w.s0 + p2 * w.s1


def decide(fused: float) -> int:
    """0 (normal) only when the fused normal score strictly exceeds 0.5;
    the boundary counts as anomalous."""
    return 0 if fused > 0.5 else 1


def fused_prediction(mlp_anomaly_prob: float, gcn_anomaly_prob: float, w: FusionWeights) -> FusedPrediction:
    """Full record from the raw model outputs (anomaly probabilities)."""
    p1 = 1.0 - mlp_anomaly_prob
    p2 = 1.0 - gcn_anomaly_prob
    fused = fuse(p1, p2, w)
    return FusedPrediction(p1=p1, p2=p2, fused=fused, y_hat=decide(fused))


@dataclass
class MetricReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float
    precision_defined: bool

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "precision_defined": self.precision_defined,
        }

    def row(self) -> str:
        return (
            f"Acc {self.accuracy:.4f}  Prec {self.precision:.4f}  "
            f"Recall {self.recall:.4f}  F1 {self.f1:.4f}  FPR {self.fpr:.4f}"
        )


def compute_metrics(y_hat, y, positive_class: int = 1) -> MetricReport:
    """Confusion-count metrics; a run with no positive predictions has
    precision reported as 0 and flagged undefined."""
    y_hat = list(y_hat)
    y = list(y)
    if not y:
        raise ValueError("cannot compute metrics on empty input")
    if len(y_hat) != len(y):
        raise ValueError(f"length mismatch: {len(y_hat)} predictions vs {len(y)} labels")
    bad = {v for v in y_hat + y if v not in (0, 1)}
    if bad:
        raise ValueError(f"labels must be 0 or 1, got {sorted(bad)}")
    tp = fp = tn = fn = 0
    for pred, truth in zip(y_hat, y):
        if pred == positive_class:
            if truth == positive_class:
                tp += 1
            else:
                fp += 1
        else:
            if truth == positive_class:
                fn += 1
            else:
                tn += 1
    n = len(y)
    precision_defined = (tp + fp) > 0
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    fpr = fp / (fp + tn) if (fp + tn) > 0 else 0.0
    return MetricReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=(tp + tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=fpr,
        precision_defined=precision_defined,
    )
