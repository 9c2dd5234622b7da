"""
Minimal numpy neural core: LSTM layer, per-step affine head and Adam.

Layers keep the activations of their last forward pass and produce parameter
gradients on backward. Everything is float64 so finite-difference gradient
checks can be tight.
"""

from typing import Dict, Optional, Tuple

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    out[~positive] = ex / (1.0 + ex)
    return out


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LSTMLayer:
    """
    Single LSTM layer over (batch, time, features) input.

    Gate order in the stacked weights is input, forget, cell, output.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: Optional[np.random.Generator] = None) -> None:
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = rng or np.random.default_rng(0)
        h = hidden_dim
        self.params: Dict[str, np.ndarray] = {
            "W": uniform_init(rng, (4 * h, input_dim), input_dim),
            "U": uniform_init(rng, (4 * h, h), h),
            "b": uniform_init(rng, (4 * h,), h),
        }
        self._cache: Optional[Dict[str, np.ndarray]] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        """
        Run the layer over a batch of sequences.

        Args:
            x: Input of shape (n, steps, input_dim)

        Returns:
            Hidden states of shape (n, steps, hidden_dim)
        """
        n, steps, _ = x.shape
        h_dim = self.hidden_dim
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        hs = np.zeros((n, steps + 1, h_dim))
        cs = np.zeros((n, steps + 1, h_dim))
        gates = np.zeros((n, steps, 4 * h_dim))
        for t in range(steps):
            z = x[:, t] @ W.T + hs[:, t] @ U.T + b
            i = sigmoid(z[:, :h_dim])
            f = sigmoid(z[:, h_dim:2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
            o = sigmoid(z[:, 3 * h_dim:])
            cs[:, t + 1] = f * cs[:, t] + i * g
            hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
            gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        self._cache = {"x": x, "hs": hs, "cs": cs, "gates": gates}
        return hs[:, 1:]

    def backward(self, d_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """
        Backpropagate through time.

        Args:
            d_out: Loss gradient w.r.t. every hidden state, shape (n, steps, hidden_dim)

        Returns:
            (gradient w.r.t. the input, parameter gradients)
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, hs, cs, gates = self._cache["x"], self._cache["hs"], self._cache["cs"], self._cache["gates"]
        n, steps, _ = x.shape
        h_dim = self.hidden_dim
        W, U = self.params["W"], self.params["U"]
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        dx = np.zeros_like(x)
        dh_next = np.zeros((n, h_dim))
        dc_next = np.zeros((n, h_dim))
        for t in reversed(range(steps)):
            i = gates[:, t, :h_dim]
            f = gates[:, t, h_dim:2 * h_dim]
            g = gates[:, t, 2 * h_dim:3 * h_dim]
            o = gates[:, t, 3 * h_dim:]
            c_prev = cs[:, t]
            tanh_c = np.tanh(cs[:, t + 1])

            dh = d_out[:, t] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f

            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            grads["W"] += dz.T @ x[:, t]
            grads["U"] += dz.T @ hs[:, t]
            grads["b"] += dz.sum(axis=0)
            dx[:, t] = dz @ W
            dh_next = dz @ U
        return dx, grads


class AffineHead:
    """Per-step affine map followed by ReLU."""

    def __init__(self, input_dim: int, bias_init: float = 0.0, rng: Optional[np.random.Generator] = None) -> None:
        rng = rng or np.random.default_rng(0)
        self.params: Dict[str, np.ndarray] = {
            "W": uniform_init(rng, (1, input_dim), input_dim),
            "b": np.array([bias_init], dtype=float),
        }
        self._cache: Optional[Dict[str, np.ndarray]] = None

    def forward(self, h: np.ndarray) -> np.ndarray:
        """(n, steps, input_dim) -> (n, steps)"""
        pre = (h @ self.params["W"].T)[..., 0] + self.params["b"][0]
        self._cache = {"h": h, "pre": pre}
        return np.maximum(pre, 0.0)

    def backward(self, d_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        h, pre = self._cache["h"], self._cache["pre"]
        d_pre = d_out * (pre > 0.0)
        grads = {
            "W": np.einsum("nt,ntd->d", d_pre, h)[None, :],
            "b": np.array([d_pre.sum()]),
        }
        dh = d_pre[..., None] * self.params["W"][0][None, None, :]
        return dh, grads


def masked_mse(output: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean squared error over unmasked positions and its output gradient.

    Returns:
        (loss, d loss / d output)
    """
    weight = float(mask.sum())
    if weight == 0:
        return 0.0, np.zeros_like(output)
    diff = (output - target) * mask
    return float(np.sum(diff ** 2) / weight), 2.0 * diff / weight


class Adam:
    """Adam with bias-corrected first and second moment estimates."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Update parameters in place."""
        self.t += 1
        for name, grad in grads.items():
            m = self._m.setdefault(name, np.zeros_like(grad))
            v = self._v.setdefault(name, np.zeros_like(grad))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad ** 2
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
