"""Graph convolutional binary classifier for per-event parameter graphs.

Two convolution layers propagate features over the symmetric-normalized
self-looped adjacency (A_hat = D^-1/2 (A+I) D^-1/2), mean pooling collapses
the node dimension, and a small dense stack (32, 16) feeds the sigmoid
output. One implementation serves both shapes of work: single graphs with
arbitrary adjacency, and stacked batches of equally-sized star graphs that
share one adjacency, which is what makes training on event graphs fast.
"""

from __future__ import annotations

import numpy as np

from .base import PackedParams, ShapeError, relu, sigmoid, uniform_init
from ..features import EventGraph

CONV_DIM = 64
DENSE_DIMS = (32, 16)


def a_hat_from_edges(n_nodes: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """Symmetric-normalized adjacency with self loops for an undirected
    edge list."""
    if n_nodes < 1:
        raise ValueError("graph must have at least one node")
    adj = np.eye(n_nodes)
    for a, b in edges:
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def star_a_hat(n_nodes: int) -> np.ndarray:
    """Closed form of a_hat_from_edges for a root-first star graph."""
    if n_nodes < 1:
        raise ValueError("graph must have at least one node")
    if n_nodes == 1:
        return np.ones((1, 1))
    a = np.zeros((n_nodes, n_nodes))
    rim = 1.0 / np.sqrt(2.0 * n_nodes)
    a[0, 0] = 1.0 / n_nodes
    a[0, 1:] = rim
    a[1:, 0] = rim
    idx = np.arange(1, n_nodes)
    a[idx, idx] = 0.5
    return a


def is_root_first_star(graph: EventGraph) -> bool:
    return graph.edges == [(0, j) for j in range(1, graph.n_nodes)]


class Gcn(PackedParams):
    param_keys = (
        "Wc1", "bc1", "Wc2", "bc2",
        "Wd1", "bd1", "Wd2", "bd2",
        "Wo", "bo",
    )

    def __init__(self, d: int, seed: int = 0):
        super().__init__()
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = d
        self.seed = seed
        c = CONV_DIM
        h1, h2 = DENSE_DIMS
        rng = np.random.default_rng(seed)
        self.params = {
            "Wc1": uniform_init(rng, (d, c), d),
            "bc1": uniform_init(rng, (c,), d),
            "Wc2": uniform_init(rng, (c, c), c),
            "bc2": uniform_init(rng, (c,), c),
            "Wd1": uniform_init(rng, (c, h1), c),
            "bd1": uniform_init(rng, (h1,), c),
            "Wd2": uniform_init(rng, (h1, h2), h1),
            "bd2": uniform_init(rng, (h2,), h1),
            "Wo": uniform_init(rng, (h2, 1), h2),
            "bo": uniform_init(rng, (1,), h2),
        }

    # -- forward -------------------------------------------------------------

    def _forward_group(self, feats: np.ndarray, a_hat: np.ndarray) -> dict:
        """Shared forward pass: feats (B, n, d), one adjacency (n, n)."""
        if feats.ndim != 3 or feats.shape[2] != self.d:
            raise ShapeError(f"expected features (B, n, {self.d}), got {feats.shape}")
        p = self.params
        cache: dict = {"feats": feats, "a_hat": a_hat}
        s1 = np.einsum("ij,bjd->bid", a_hat, feats)
        z1 = s1 @ p["Wc1"] + p["bc1"]
        h1 = relu(z1)
        s2 = np.einsum("ij,bjd->bid", a_hat, h1)
        z2 = s2 @ p["Wc2"] + p["bc2"]
        h2 = relu(z2)
        pooled = h2.mean(axis=1)
        zd1 = pooled @ p["Wd1"] + p["bd1"]
        ad1 = relu(zd1)
        zd2 = ad1 @ p["Wd2"] + p["bd2"]
        ad2 = relu(zd2)
        logits = (ad2 @ p["Wo"] + p["bo"])[:, 0]
        cache.update(
            s1=s1, z1=z1, h1=h1, s2=s2, z2=z2, h2=h2, pooled=pooled,
            zd1=zd1, ad1=ad1, zd2=zd2, ad2=ad2, logits=logits, probs=sigmoid(logits),
        )
        return cache

    def forward(self, graph: EventGraph, mode: str = "infer") -> float:
        """Anomaly probability for one event graph."""
        feats = np.asarray(graph.node_features, dtype=np.float64)[None, :, :]
        a_hat = (
            star_a_hat(graph.n_nodes)
            if is_root_first_star(graph)
            else a_hat_from_edges(graph.n_nodes, graph.edges)
        )
        return float(self._forward_group(feats, a_hat)["probs"][0])

    def forward_batch(self, graphs: list[EventGraph], mode: str = "infer") -> np.ndarray:
        """Probabilities for many graphs, grouping same-shape stars so each
        group runs as one stacked pass."""
        probs = np.empty(len(graphs))
        for indices, feats, a_hat in self._grouped(graphs):
            probs[indices] = self._forward_group(feats, a_hat)["probs"]
        return probs

    def _grouped(self, graphs: list[EventGraph]):
        stars: dict[int, list[int]] = {}
        for i, g in enumerate(graphs):
            if is_root_first_star(g):
                stars.setdefault(g.n_nodes, []).append(i)
            else:
                yield [i], np.asarray(g.node_features, dtype=np.float64)[None], a_hat_from_edges(
                    g.n_nodes, g.edges
                )
        for n_nodes, indices in sorted(stars.items()):
            feats = np.stack([np.asarray(graphs[i].node_features, dtype=np.float64) for i in indices])
            yield indices, feats, star_a_hat(n_nodes)

    # -- loss and gradients ----------------------------------------------------

    def loss_and_grads(
        self,
        graphs: list[EventGraph],
        y: np.ndarray,
        sample_weights: np.ndarray | None = None,
        update_stats: bool = False,
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Weighted BCE over the batch of graphs; same contract as the MLP."""
        n_total = len(graphs)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(n_total) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
        p = self.params
        loss = 0.0
        probs = np.empty(n_total)
        grads = {k: np.zeros_like(p[k]) for k in self.param_keys}
        for indices, feats, a_hat in self._grouped(graphs):
            cache = self._forward_group(feats, a_hat)
            z = cache["logits"]
            yb = y[indices]
            wb = w[indices]
            probs[indices] = cache["probs"]
            loss += float(np.sum(wb * (np.maximum(z, 0) - z * yb + np.log1p(np.exp(-np.abs(z))))) / n_total)

            dlogits = (wb * (cache["probs"] - yb) / n_total)[:, None]
            grads["Wo"] += cache["ad2"].T @ dlogits
            grads["bo"] += dlogits.sum(axis=0)
            dad2 = dlogits @ p["Wo"].T
            dzd2 = dad2 * (cache["zd2"] > 0)
            grads["Wd2"] += cache["ad1"].T @ dzd2
            grads["bd2"] += dzd2.sum(axis=0)
            dad1 = dzd2 @ p["Wd2"].T
            dzd1 = dad1 * (cache["zd1"] > 0)
            grads["Wd1"] += cache["pooled"].T @ dzd1
            grads["bd1"] += dzd1.sum(axis=0)
            dpooled = dzd1 @ p["Wd1"].T
            n_nodes = feats.shape[1]
            dh2 = np.repeat(dpooled[:, None, :], n_nodes, axis=1) / n_nodes
            dz2 = dh2 * (cache["z2"] > 0)
            grads["Wc2"] += np.einsum("bnc,bne->ce", cache["s2"], dz2)
            grads["bc2"] += dz2.sum(axis=(0, 1))
            ds2 = dz2 @ p["Wc2"].T
            dh1 = np.einsum("ij,bjd->bid", a_hat.T, ds2)
            dz1 = dh1 * (cache["z1"] > 0)
            grads["Wc1"] += np.einsum("bnd,bnc->dc", cache["s1"], dz1)
            grads["bc1"] += dz1.sum(axis=(0, 1))
        grad_vec = np.concatenate([grads[k].ravel() for k in self.param_keys])
        return loss, grad_vec, probs

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Gcn":
        model = cls(d["d"], seed=d["seed"])
        model.params = {k: np.array(v, dtype=np.float64) for k, v in d["params"].items()}
        return model
