"""Versioned serialization of everything inference needs: both models, the
encoder, the fusion weights, the consolidation anchors, and the template
tree snapshot the models were trained against.

JSON keeps float64 values exactly (repr round-trips), so a loaded bundle
reproduces bitwise-identical forward outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..features import EncoderState, WeightDictionary
from ..parsing import TemplateTree
from .gcn import Gcn
from .mlp import Mlp

SCHEMA_VERSION = 1

# default consolidation strength; sweepable per retrain call
DEFAULT_LAMBDA = 10.0


class BundleError(ValueError):
    pass


@dataclass
class Anchor:
    """Consolidation anchor: parameters a model should stay loyal to, how
    much each one matters, and how hard to pull back."""

    theta: np.ndarray
    fisher: np.ndarray
    lam: float = DEFAULT_LAMBDA
    task_tag: str = ""

    def __post_init__(self):
        if self.theta.shape != self.fisher.shape:
            raise BundleError("anchor theta and fisher must have matching shapes")
        if not np.all(np.isfinite(self.theta)):
            raise BundleError("anchor theta must be finite")
        if np.any(self.fisher < 0):
            raise BundleError("anchor fisher entries must be >= 0")
        if self.lam < 0:
            raise BundleError("anchor lambda must be >= 0")

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "fisher": self.fisher.tolist(),
            "lam": self.lam,
            "task_tag": self.task_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Anchor":
        return cls(
            theta=np.array(d["theta"], dtype=np.float64),
            fisher=np.array(d["fisher"], dtype=np.float64),
            lam=float(d.get("lam", DEFAULT_LAMBDA)),
            task_tag=str(d.get("task_tag", "")),
        )


@dataclass
class ModelBundle:
    version: int
    created_at: str
    mlp: Mlp
    gcn: Gcn
    encoder: EncoderState
    weights: WeightDictionary
    anchors: dict[str, Anchor]
    tree: TemplateTree
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "shapes": {"x_dim": self.mlp.x_dim, "d": self.gcn.d},
            "version": self.version,
            "created_at": self.created_at,
            "mlp": self.mlp.to_dict(),
            "gcn": self.gcn.to_dict(),
            "encoder": self.encoder.to_dict(),
            "weights": self.weights.to_dict(),
            "anchors": {name: a.to_dict() for name, a in self.anchors.items()},
            "tree": self.tree.to_dict(),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("schema") != SCHEMA_VERSION:
            raise BundleError(f"unsupported bundle schema: {d.get('schema')!r}")
        bundle = cls(
            version=d["version"],
            created_at=d["created_at"],
            mlp=Mlp.from_dict(d["mlp"]),
            gcn=Gcn.from_dict(d["gcn"]),
            encoder=EncoderState.from_dict(d["encoder"]),
            weights=WeightDictionary.from_dict(d["weights"]),
            anchors={name: Anchor.from_dict(a) for name, a in d["anchors"].items()},
            tree=TemplateTree.from_dict(d["tree"]),
            meta=dict(d.get("meta", {})),
        )
        shapes = d.get("shapes", {})
        if shapes.get("x_dim") != bundle.mlp.x_dim or shapes.get("d") != bundle.gcn.d:
            raise BundleError("bundle shape header does not match stored parameters")
        return bundle


def save_bundle(bundle: ModelBundle, path: str) -> None:
    """Write atomically; a bundle that never finished its first training
    (missing anchors) is not a valid artifact and is rejected."""
    for name in ("mlp", "gcn"):
        if bundle.anchors.get(name) is None:
            raise BundleError(f"bundle has no {name} anchor; train before saving")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(bundle.to_dict(), fh)
    os.replace(tmp, path)


def load_bundle(path: str) -> ModelBundle:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        raise BundleError(f"cannot read bundle at {path}: {exc}") from exc
    try:
        return ModelBundle.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise BundleError(f"corrupt bundle at {path}: missing {exc}") from exc
