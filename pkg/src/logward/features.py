"""Feature engineering: column importance and weights, the encoded feature
matrix for the MLP, and the per-event parameter star graph for the GCN.

Importance comes from an entropy-criterion random forest over the learning
columns; columns whose share of importance passes the threshold form the
weight dictionary that later drives decision fusion. The structured columns
(everything but the parameter list) are ordinally encoded into the feature
matrix; the parameter list feeds the graph side, one leaf per surviving
parameter around an event-id root.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .parsing import ParsedEvent

# identifier-like columns (line id, datetime, record id) carry no causal
# signal and are excluded from learning
LEARNING_COLUMNS = ["event_id", "context", "level", "parameter_list"]
PARAMETER_COLUMN = "parameter_list"

DEFAULT_TAU = 0.01
DEFAULT_EMBED_DIM = 50
DEFAULT_DROP_PATTERNS = (r"^blk_-?\d+$",)


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    criterion: str = "entropy"
    max_depth: int = 12
    max_features: str = "sqrt"
    bootstrap: bool = True
    seed: int = 13


@dataclass
class ImportanceMap:
    importances: dict[str, float]

    def __post_init__(self):
        total = sum(self.importances.values())
        if not math.isclose(total, 1.0, abs_tol=1e-6):
            raise ValueError(f"importances must sum to 1, got {total}")
        if any(v < 0 for v in self.importances.values()):
            raise ValueError("importances must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.importances)


@dataclass
class WeightDictionary:
    weights: dict[str, float]
    threshold: float

    def to_dict(self) -> dict:
        return {"weights": dict(self.weights), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightDictionary":
        return cls(weights=dict(d["weights"]), threshold=d["threshold"])


def _column_value(event: ParsedEvent, column: str) -> str | None:
    try:
        value = getattr(event, column)
    except AttributeError:
        raise SchemaError(f"events have no column {column!r}") from None
    if column == PARAMETER_COLUMN:
        return " ".join(value)
    if value is None:
        return None
    return str(value)


def _ordinal_encode_local(events: Sequence[ParsedEvent], columns: Sequence[str]) -> np.ndarray:
    """Dataset-local ordinal codes, used only inside importance training."""
    matrix = np.zeros((len(events), len(columns)), dtype=np.float64)
    for j, column in enumerate(columns):
        values = [_column_value(e, column) for e in events]
        categories = {v: i for i, v in enumerate(sorted({v for v in values if v is not None}), start=1)}
        matrix[:, j] = [0 if v is None else categories[v] for v in values]
    return matrix


def train_importance(
    events: Sequence[ParsedEvent],
    config: ForestConfig = ForestConfig(),
    columns: Sequence[str] = tuple(LEARNING_COLUMNS),
) -> ImportanceMap:
    """Share of forest impurity reduction per learning column.

    Rows are canonicalized by sorting before the fit, which makes the
    result exactly invariant under shuffling of the input table.
    """
    labels = np.array([e.label for e in events], dtype=np.float64)
    if len(events) == 0 or np.unique(labels).size < 2:
        raise ValueError("importance undefined: dataset must contain both classes")
    matrix = _ordinal_encode_local(events, columns)
    order = np.lexsort(tuple(matrix[:, j] for j in reversed(range(matrix.shape[1]))) + (labels,))
    forest = RandomForestClassifier(
        n_estimators=config.n_estimators,
        criterion=config.criterion,
        max_depth=config.max_depth,
        max_features=config.max_features,
        bootstrap=config.bootstrap,
        random_state=config.seed,
        n_jobs=1,
    )
    forest.fit(matrix[order], labels[order])
    raw = np.asarray(forest.feature_importances_, dtype=np.float64)
    raw = np.clip(raw, 0.0, None)
    total = raw.sum()
    if total <= 0:
        # no split reduced impurity anywhere; fall back to a uniform map
        raw = np.ones_like(raw)
        total = raw.sum()
    shares = raw / total
    return ImportanceMap({c: float(s) for c, s in zip(columns, shares)})


def select_columns(importance: ImportanceMap, tau: float = DEFAULT_TAU) -> list[str]:
    """Columns whose importance is strictly above tau, in canonical order."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must be in [0, 1)")
    selected = [c for c, v in importance.importances.items() if v > tau]
    if not selected:
        raise ValueError(f"threshold too high: no column importance exceeds {tau}")
    return selected


def build_weight_dictionary(importance: ImportanceMap, tau: float = DEFAULT_TAU) -> WeightDictionary:
    selected = select_columns(importance, tau)
    return WeightDictionary(
        weights={c: importance.importances[c] for c in selected}, threshold=tau
    )


# -- encoded feature matrix --------------------------------------------------

UNKNOWN_CODE = 0


class EncoderState:
    """Frozen ordinal category maps for the structured columns.

    Codes start at 1 in sorted category order; anything unseen (including
    missing values) maps to the reserved code 0. Encoding row i reads only
    event i, so the matrix build is pointwise.
    """

    def __init__(self, columns: Sequence[str], categories: dict[str, dict[str, int]]):
        self.columns = list(columns)
        self.categories = categories

    @classmethod
    def fit(cls, events: Sequence[ParsedEvent], columns: Sequence[str]) -> "EncoderState":
        columns = [c for c in columns if c != PARAMETER_COLUMN]
        categories: dict[str, dict[str, int]] = {}
        for column in columns:
            values = {
                v for e in events if (v := _column_value(e, column)) is not None
            }
            categories[column] = {v: i for i, v in enumerate(sorted(values), start=1)}
        return cls(columns, categories)

    @property
    def x_dim(self) -> int:
        return len(self.columns)

    def encode_value(self, column: str, value: str | None) -> int:
        if value is None:
            return UNKNOWN_CODE
        return self.categories[column].get(value, UNKNOWN_CODE)

    def encode(self, events: Sequence[ParsedEvent]) -> np.ndarray:
        matrix = np.zeros((len(events), len(self.columns)), dtype=np.float64)
        for i, event in enumerate(events):
            for j, column in enumerate(self.columns):
                matrix[i, j] = self.encode_value(column, _column_value(event, column))
        return matrix

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "categories": {c: dict(m) for c, m in self.categories.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderState":
        return cls(d["columns"], {c: dict(m) for c, m in d["categories"].items()})


def build_feature_matrix(events: Sequence[ParsedEvent], encoder: EncoderState) -> np.ndarray:
    return encoder.encode(events)


# -- parameter graphs --------------------------------------------------------


def normalize_parameter(
    param: str, drop_patterns: Sequence[str] = DEFAULT_DROP_PATTERNS
) -> str | None:
    """Clean one raw parameter for use as a graph leaf.

    Values matching a drop pattern (identifier noise such as block ids)
    are removed entirely; path-like values keep only their last two
    segments; everything else passes through unchanged.
    """
    for pattern in drop_patterns:
        if re.match(pattern, param):
            return None
    if "/" in param:
        segments = [s for s in param.split("/") if s]
        if len(segments) >= 2:
            return "/".join(segments[-2:])
        if len(segments) == 1:
            return segments[0]
    return param


@dataclass
class EventGraph:
    """Star graph for one event: root 0 is the event id, leaves are the
    surviving normalized parameters."""

    nodes: list[str]
    edges: list[tuple[int, int]]
    node_features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": [list(e) for e in self.edges],
            "node_features": self.node_features.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventGraph":
        return cls(
            nodes=list(d["nodes"]),
            edges=[(int(a), int(b)) for a, b in d["edges"]],
            node_features=np.array(d["node_features"], dtype=np.float64),
        )


class PretrainedTable:
    """Optional token-to-vector table: one token per line followed by the
    vector components, whitespace separated."""

    def __init__(self, vectors: dict[str, np.ndarray], d: int):
        self.vectors = vectors
        self.d = d

    @classmethod
    def load(cls, path: str) -> "PretrainedTable":
        vectors: dict[str, np.ndarray] = {}
        d: int | None = None
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                token, comps = parts[0], parts[1:]
                if d is None:
                    d = len(comps)
                    if d == 0:
                        raise ValueError(f"line {number}: no vector components")
                elif len(comps) != d:
                    raise ValueError(f"line {number}: expected {d} components, got {len(comps)}")
                vectors[token] = np.array([float(c) for c in comps], dtype=np.float64)
        if d is None:
            raise ValueError("empty vector file")
        return cls(vectors, d)

    def get(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)


@lru_cache(maxsize=65536)
def _trigram_vector(token: str, d: int) -> np.ndarray:
    """Feature-hashed character trigrams of ^token$, unit-normalized.

    blake2b keeps the hash stable across processes and sessions, unlike
    the per-run salted builtin hash.
    """
    vec = np.zeros(d, dtype=np.float64)
    padded = f"^{token}$"
    for i in range(len(padded) - 2):
        digest = hashlib.blake2b(padded[i : i + 3].encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        sign = 1.0 if value & 1 == 0 else -1.0
        vec[(value >> 1) % d] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


def embed_token(token: str, d: int = DEFAULT_EMBED_DIM, table: PretrainedTable | None = None) -> np.ndarray:
    """Deterministic token embedding of dimension d; pretrained when the
    table knows the token, hashed-trigram fallback otherwise."""
    if table is not None:
        hit = table.get(token)
        if hit is not None:
            if hit.shape != (d,):
                raise ValueError(f"pretrained vector has dimension {hit.shape[0]}, expected {d}")
            return hit
    return _trigram_vector(token, d)


def build_event_graph(
    event: ParsedEvent,
    d: int = DEFAULT_EMBED_DIM,
    table: PretrainedTable | None = None,
    drop_patterns: Sequence[str] = DEFAULT_DROP_PATTERNS,
) -> EventGraph:
    """Star graph with embedded node features; duplicate parameters keep
    separate leaves so multiplicity still counts."""
    leaves = []
    for param in event.parameter_list:
        cleaned = normalize_parameter(param, drop_patterns)
        if cleaned is not None:
            leaves.append(cleaned)
    nodes = [str(event.event_id)] + leaves
    edges = [(0, j) for j in range(1, len(nodes))]
    features = np.stack([embed_token(token, d, table) for token in nodes])
    return EventGraph(nodes=nodes, edges=edges, node_features=features)


@dataclass
class FeatureBundle:
    """One record in model-ready form: the encoded row for the MLP, the
    parameter graph for the GCN, and the label when known."""

    x: np.ndarray
    graph: EventGraph
    label: int | None = None

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "graph": self.graph.to_dict(), "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureBundle":
        label = d.get("label")
        return cls(
            x=np.array(d["x"], dtype=np.float64),
            graph=EventGraph.from_dict(d["graph"]),
            label=None if label is None else int(label),
        )


def build_feature_bundles(
    events: Sequence[ParsedEvent],
    encoder: EncoderState,
    d: int = DEFAULT_EMBED_DIM,
    table: PretrainedTable | None = None,
    drop_patterns: Sequence[str] = DEFAULT_DROP_PATTERNS,
) -> list[FeatureBundle]:
    """Featurize events for both models at once; labels tag along when the
    source lines carried them."""
    xs = encoder.encode(events)
    return [
        FeatureBundle(
            x=xs[i],
            graph=build_event_graph(event, d, table, drop_patterns),
            label=event.label,
        )
        for i, event in enumerate(events)
    ]
