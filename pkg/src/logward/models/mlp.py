"""Multilayer perceptron binary classifier, built directly on numpy.

Architecture: x_dim -> 64 -> 32 -> 1, ReLU hidden activations, a batch
normalization layer after each hidden linear map, sigmoid output. Train
mode normalizes with batch moments (and can fold them into the running
statistics); infer mode uses the running statistics, so a single row gets
the same answer every time.
"""

from __future__ import annotations

import numpy as np

from .base import PackedParams, ShapeError, relu, sigmoid, uniform_init

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
HIDDEN_DIMS = (64, 32)


class Mlp(PackedParams):
    param_keys = (
        "W1", "b1", "gamma1", "beta1",
        "W2", "b2", "gamma2", "beta2",
        "W3", "b3",
    )

    def __init__(self, x_dim: int, seed: int = 0):
        super().__init__()
        if x_dim < 1:
            raise ValueError("x_dim must be >= 1")
        self.x_dim = x_dim
        self.seed = seed
        h1, h2 = HIDDEN_DIMS
        rng = np.random.default_rng(seed)
        self.params = {
            "W1": uniform_init(rng, (x_dim, h1), x_dim),
            "b1": uniform_init(rng, (h1,), x_dim),
            "gamma1": np.ones(h1),
            "beta1": np.zeros(h1),
            "W2": uniform_init(rng, (h1, h2), h1),
            "b2": uniform_init(rng, (h2,), h1),
            "gamma2": np.ones(h2),
            "beta2": np.zeros(h2),
            "W3": uniform_init(rng, (h2, 1), h2),
            "b3": uniform_init(rng, (1,), h2),
        }
        # running statistics are state, not trainable parameters
        self.state = {
            "mean1": np.zeros(h1),
            "var1": np.ones(h1),
            "mean2": np.zeros(h2),
            "var2": np.ones(h2),
        }

    # -- forward -------------------------------------------------------------

    def _prep(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.x_dim:
            raise ShapeError(f"expected rows of dimension {self.x_dim}, got {x.shape}")
        return x

    def _pass(self, x: np.ndarray, mode: str, update_stats: bool) -> dict:
        if mode not in ("train", "infer"):
            raise ValueError("mode must be 'train' or 'infer'")
        p, s = self.params, self.state
        cache: dict = {"x": x}
        a = x
        for layer in (1, 2):
            z = a @ p[f"W{layer}"] + p[f"b{layer}"]
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    s[f"mean{layer}"] = BN_MOMENTUM * s[f"mean{layer}"] + (1 - BN_MOMENTUM) * mu
                    s[f"var{layer}"] = BN_MOMENTUM * s[f"var{layer}"] + (1 - BN_MOMENTUM) * var
            else:
                mu = s[f"mean{layer}"]
                var = s[f"var{layer}"]
            zhat = (z - mu) / np.sqrt(var + BN_EPS)
            h = p[f"gamma{layer}"] * zhat + p[f"beta{layer}"]
            a = relu(h)
            cache[f"z{layer}"] = z
            cache[f"var{layer}"] = var
            cache[f"zhat{layer}"] = zhat
            cache[f"h{layer}"] = h
            cache[f"a{layer}"] = a
        logits = (a @ p["W3"] + p["b3"])[:, 0]
        cache["logits"] = logits
        cache["probs"] = sigmoid(logits)
        return cache

    def forward(self, x: np.ndarray, mode: str = "infer") -> np.ndarray:
        """Anomaly probability per row."""
        return self._pass(self._prep(x), mode, update_stats=(mode == "train"))["probs"]

    # -- loss and gradients ----------------------------------------------------

    def loss_and_grads(
        self,
        x: np.ndarray,
        y: np.ndarray,
        sample_weights: np.ndarray | None = None,
        update_stats: bool = False,
        mode: str = "train",
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Weighted BCE loss, packed gradient vector, and probabilities.

        Train mode normalizes with batch statistics; the loss does not
        depend on the running statistics, so gradient checking with
        update_stats off is exact. Infer mode treats the running
        statistics as constants, which keeps per-row gradients meaningful
        on batches of one (batch moments would normalize a single row to
        zero).
        """
        if mode == "infer" and update_stats:
            raise ValueError("cannot update running statistics in infer mode")
        x = self._prep(x)
        y = np.asarray(y, dtype=np.float64)
        n = len(x)
        w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
        cache = self._pass(x, mode, update_stats)
        p = self.params
        z = cache["logits"]
        loss = float(np.sum(w * (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))) / n)

        grads: dict[str, np.ndarray] = {}
        dlogits = (w * (cache["probs"] - y) / n)[:, None]
        grads["W3"] = cache["a2"].T @ dlogits
        grads["b3"] = dlogits.sum(axis=0)
        da = dlogits @ p["W3"].T
        for layer in (2, 1):
            dh = da * (cache[f"h{layer}"] > 0)
            grads[f"gamma{layer}"] = (dh * cache[f"zhat{layer}"]).sum(axis=0)
            grads[f"beta{layer}"] = dh.sum(axis=0)
            dzhat = dh * p[f"gamma{layer}"]
            istd = 1.0 / np.sqrt(cache[f"var{layer}"] + BN_EPS)
            zhat = cache[f"zhat{layer}"]
            if mode == "train":
                dz = (istd / n) * (
                    n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0)
                )
            else:
                # fixed statistics: normalization is a per-feature affine map
                dz = dzhat * istd
            below = cache["x"] if layer == 1 else cache[f"a{layer - 1}"]
            grads[f"W{layer}"] = below.T @ dz
            grads[f"b{layer}"] = dz.sum(axis=0)
            if layer == 2:
                da = dz @ p["W2"].T
        grad_vec = np.concatenate([grads[k].ravel() for k in self.param_keys])
        return loss, grad_vec, cache["probs"]

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "x_dim": self.x_dim,
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "state": {k: v.tolist() for k, v in self.state.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        model = cls(d["x_dim"], seed=d["seed"])
        model.params = {k: np.array(v, dtype=np.float64) for k, v in d["params"].items()}
        model.state = {k: np.array(v, dtype=np.float64) for k, v in d["state"].items()}
        return model
