"""Shared plumbing for the from-scratch models: flat parameter vectors and
common math helpers."""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def bce_from_logits(z: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean binary cross-entropy, computed from logits so large
    |z| cannot overflow: max(z,0) - z*y + log(1 + exp(-|z|))."""
    per_sample = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(np.sum(weights * per_sample) / len(z))


class PackedParams:
    """Named float64 arrays with a canonical flat-vector view.

    ``param_keys`` fixes the packing order; only trainable arrays belong
    there (running statistics and other state stay out of the vector).
    """

    param_keys: tuple[str, ...]

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def pack(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_keys])

    def unpack(self, vec: np.ndarray) -> None:
        expected = self.n_params
        if vec.shape != (expected,):
            raise ShapeError(f"expected parameter vector of shape ({expected},), got {vec.shape}")
        offset = 0
        for key in self.param_keys:
            size = self.params[key].size
            self.params[key] = vec[offset : offset + size].reshape(self.params[key].shape).copy()
            offset += size

    @property
    def n_params(self) -> int:
        return sum(self.params[k].size for k in self.param_keys)

    def finite(self) -> bool:
        return all(np.isfinite(self.params[k]).all() for k in self.param_keys)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)
