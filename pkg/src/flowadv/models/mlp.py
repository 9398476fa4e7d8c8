"""Multilayer perceptron: ReLU hidden layers, softmax output, cross-entropy.

Trained with mini-batch Adam.  Written directly on numpy so the analytic
gradients are available for verification against finite differences, and so
training is bit-deterministic given a seed.
"""

from __future__ import annotations

import numpy as np

from ..data import one_hot_labels
from ..errors import TrainingError
from .base import MLPParams, check_arity, labels_from_proba, _as2d

__all__ = ["MLP"]

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8
_PLATEAU_TOL = 1e-6


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class MLP:
    kind = "mlp"

    def __init__(self, params: MLPParams, n_features: int, seed: int = 0):
        self.params = params
        self.n_features = n_features
        self.side = ""
        self.scaler = None
        self._seed = seed
        rng = np.random.default_rng(seed)
        sizes = [n_features] + [params.neurons_per_layer] * params.hidden_layers + [2]
        # He-normal initialization for ReLU stacks.
        self.weights = [
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        ]
        self.biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        self.loss_history: list[float] = []

    # -- forward / loss / gradients ------------------------------------

    def _forward(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Return hidden activations (input first) and output probabilities."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        return acts, logits

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as2d(x)
        check_arity(x2, self.n_features)
        _, logits = self._forward(x2)
        proba = _softmax(logits)
        return proba[0] if single else proba

    def predict(self, x: np.ndarray) -> np.ndarray | int:
        x2, single = _as2d(x)
        labels = labels_from_proba(np.atleast_2d(self.predict_proba(x2)))
        return int(labels[0]) if single else labels

    def loss(self, x: np.ndarray, y_onehot: np.ndarray) -> float:
        x2, _ = _as2d(x)
        _, logits = self._forward(x2)
        logsumexp = np.log(np.exp(logits - logits.max(axis=1, keepdims=True))
                           .sum(axis=1)) + logits.max(axis=1)
        return float(np.mean(logsumexp - (logits * y_onehot).sum(axis=1)))

    def gradients(
        self, x: np.ndarray, y_onehot: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Analytic gradients of the mean cross-entropy loss."""
        x2, _ = _as2d(x)
        n = x2.shape[0]
        acts, logits = self._forward(x2)
        delta = (_softmax(logits) - y_onehot) / n
        grads_w: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        grads_b: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0)
        return grads_w, grads_b

    # -- flat parameter view (used by the finite-difference check) ------

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for i, w in enumerate(self.weights):
            self.weights[i] = flat[offset : offset + w.size].reshape(w.shape).copy()
            offset += w.size
        for i, b in enumerate(self.biases):
            self.biases[i] = flat[offset : offset + b.size].reshape(b.shape).copy()
            offset += b.size

    def flat_gradients(self, x: np.ndarray, y_onehot: np.ndarray) -> np.ndarray:
        gw, gb = self.gradients(x, y_onehot)
        return np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])

    # -- training --------------------------------------------------------

    def fit(self, x: np.ndarray, y: np.ndarray) -> "MLP":
        x = np.asarray(x, dtype=float)
        check_arity(x, self.n_features)
        if np.unique(y).size < 2:
            raise TrainingError("MLP training needs both classes")
        targets = one_hot_labels(y)
        p = self.params
        rng = np.random.default_rng(self._seed + 1)

        m_w = [np.zeros_like(w) for w in self.weights]
        v_w = [np.zeros_like(w) for w in self.weights]
        m_b = [np.zeros_like(b) for b in self.biases]
        v_b = [np.zeros_like(b) for b in self.biases]
        step = 0
        best = np.inf
        stale = 0
        n = x.shape[0]

        for _ in range(p.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, p.batch_size):
                batch = order[start : start + p.batch_size]
                xb, yb = x[batch], targets[batch]
                gw, gb = self.gradients(xb, yb)
                epoch_loss += self.loss(xb, yb) * len(batch)
                step += 1
                scale = np.sqrt(1 - _ADAM_B2**step) / (1 - _ADAM_B1**step)
                for i in range(len(self.weights)):
                    m_w[i] = _ADAM_B1 * m_w[i] + (1 - _ADAM_B1) * gw[i]
                    v_w[i] = _ADAM_B2 * v_w[i] + (1 - _ADAM_B2) * gw[i] ** 2
                    self.weights[i] -= p.learning_rate * scale * m_w[i] / (
                        np.sqrt(v_w[i]) + _ADAM_EPS
                    )
                    m_b[i] = _ADAM_B1 * m_b[i] + (1 - _ADAM_B1) * gb[i]
                    v_b[i] = _ADAM_B2 * v_b[i] + (1 - _ADAM_B2) * gb[i] ** 2
                    self.biases[i] -= p.learning_rate * scale * m_b[i] / (
                        np.sqrt(v_b[i]) + _ADAM_EPS
                    )
            epoch_loss /= n
            self.loss_history.append(epoch_loss)
            if epoch_loss < best - _PLATEAU_TOL:
                best = epoch_loss
                stale = 0
            else:
                stale += 1
                if stale >= p.early_stop_patience:
                    break
        return self

    # -- persistence -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"n_features": np.array([self.n_features])}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_state(cls, params: MLPParams, arrays: dict[str, np.ndarray]) -> "MLP":
        model = cls(params, n_features=int(arrays["n_features"][0]))
        n_layers = params.hidden_layers + 1
        model.weights = [arrays[f"w{i}"] for i in range(n_layers)]
        model.biases = [arrays[f"b{i}"] for i in range(n_layers)]
        return model
