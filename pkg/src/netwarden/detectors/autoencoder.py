"""Symmetric MLP autoencoder scored by squared reconstruction error.

tanh hidden layers, linear output, trained with seeded mini-batch
gradient descent on mean squared reconstruction. Anomaly score is
E(x) = ||x - x_hat||^2. Backpropagation is implemented directly so the
analytic gradients can be checked against central finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DivergedLoss, EmptyTraining


def default_layer_sizes(d: int) -> list[int]:
    mid = max(1, math.ceil(d / 4))
    half = max(1, math.ceil(d / 2))
    return [d, half, mid, half, d]


def _validate_layers(sizes: list[int]) -> None:
    if len(sizes) < 3 or sizes[0] != sizes[-1]:
        raise ValueError("layer sizes must be symmetric around a bottleneck")
    if sizes != sizes[::-1]:
        raise ValueError("layer sizes must read the same in both directions")
    if sizes[0] > 1 and min(sizes) >= sizes[0]:
        raise ValueError("bottleneck must be narrower than the input")


class Autoencoder:
    kind = "ae"

    def __init__(self, layer_sizes: list[int] | None = None,
                 epochs: int = 100, learning_rate: float = 1e-3,
                 batch_size: int = 32, seed: int = 0):
        self.layer_sizes = list(layer_sizes) if layer_sizes else None
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.weights: list[np.ndarray] | None = None
        self.biases: list[np.ndarray] | None = None
        self.loss_history: list[float] = []

    def _init_params(self, sizes: list[int],
                     rng: np.random.Generator) -> None:
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit,
                                            size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def _forward(self, X: np.ndarray) -> list[np.ndarray]:
        acts = [X]
        last = len(self.weights) - 1
        h = X
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if li == last else np.tanh(z)
            acts.append(h)
        return acts

    def _loss_and_grads(self, X: np.ndarray):
        """Half mean squared reconstruction error and its gradients.

        Overflow is silenced: a non-finite loss is the divergence signal
        and callers abort on it.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            acts = self._forward(X)
            diff = acts[-1] - X
            batch = X.shape[0]
            loss = 0.5 * float((diff * diff).sum()) / batch
            grads_w = [None] * len(self.weights)
            grads_b = [None] * len(self.biases)
            if not math.isfinite(loss):
                return loss, grads_w, grads_b
            delta = diff / batch
            for li in range(len(self.weights) - 1, -1, -1):
                grads_w[li] = acts[li].T @ delta
                grads_b[li] = delta.sum(axis=0)
                if li > 0:
                    delta = (delta @ self.weights[li].T) \
                        * (1.0 - acts[li] ** 2)
        return loss, grads_w, grads_b

    def fit(self, X: np.ndarray) -> "Autoencoder":
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise EmptyTraining("autoencoder needs training rows")
        d = X.shape[1]
        sizes = self.layer_sizes or default_layer_sizes(d)
        _validate_layers(sizes)
        if sizes[0] != d:
            raise ValueError("layer sizes start at %d but data has %d "
                             "columns" % (sizes[0], d))
        rng = np.random.default_rng(self.seed)
        self._init_params(sizes, rng)
        n = X.shape[0]
        bs = min(self.batch_size, n)
        lr = self.learning_rate
        self.loss_history = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            seen = 0
            for s in range(0, n, bs):
                batch = X[order[s:s + bs]]
                loss, gw, gb = self._loss_and_grads(batch)
                if not math.isfinite(loss):
                    raise DivergedLoss(
                        "non-finite loss %r at epoch %d (lr=%g); reduce the "
                        "learning rate" % (loss, epoch, lr))
                for li in range(len(self.weights)):
                    self.weights[li] -= lr * gw[li]
                    self.biases[li] -= lr * gb[li]
                epoch_loss += loss * batch.shape[0]
                seen += batch.shape[0]
            self.loss_history.append(epoch_loss / seen)
        return self

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise EmptyTraining("model is not fitted")
        return self._forward(np.atleast_2d(np.asarray(X,
                                                      dtype=np.float64)))[-1]

    def score(self, X: np.ndarray) -> np.ndarray:
        """Squared reconstruction error per row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        diff = self.reconstruct(X) - X
        return np.einsum("ij,ij->i", diff, diff)

    # --- flat parameter access, used by the finite-difference check ---

    def get_flat_params(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights]
        parts += [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        pos = 0
        for li, w in enumerate(self.weights):
            self.weights[li] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
        for li, b in enumerate(self.biases):
            self.biases[li] = flat[pos:pos + b.size].copy()
            pos += b.size

    def loss(self, X: np.ndarray) -> float:
        loss, _, _ = self._loss_and_grads(np.asarray(X, dtype=np.float64))
        return loss

    def flat_gradients(self, X: np.ndarray) -> np.ndarray:
        _, gw, gb = self._loss_and_grads(np.asarray(X, dtype=np.float64))
        parts = [g.ravel() for g in gw] + [g.ravel() for g in gb]
        return np.concatenate(parts)

    def get_params(self) -> dict:
        return {"layer_sizes": self.layer_sizes, "epochs": self.epochs,
                "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "seed": self.seed}

    def state_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_state(cls, params: dict, state: dict) -> "Autoencoder":
        model = cls(**params)
        model.weights = [np.asarray(w, dtype=np.float64)
                         for w in state["weights"]]
        model.biases = [np.asarray(b, dtype=np.float64)
                        for b in state["biases"]]
        return model
