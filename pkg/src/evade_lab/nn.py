"""Small dense networks with hand-written backprop and Adam.

Everything is float64.  Weights are stored ``(fan_in, fan_out)`` so a batch
``X`` of shape ``(n, fan_in)`` maps to ``X @ W + b``.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

FORMAT_NAME = "evade-lab-mlp"
FORMAT_VERSION = 1

# keeps bound * tanh strictly inside (-bound, bound) once tanh saturates to 1.0
_TANH_SHRINK = 1.0 - 1e-12


class ModelFormatError(Exception):
    """Raised when a saved network cannot be read back."""


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]   # input to each layer
    pre: List[np.ndarray]      # pre-activation of each layer
    output: np.ndarray


class Mlp:
    """Feed-forward net: ReLU hidden layers, identity or bounded-tanh output."""

    def __init__(self, sizes: Sequence[int], output: str = "identity", bound: float = 1.0,
                 rng: np.random.Generator | None = None, final_init: float | None = 3e-3):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        self.bound = float(bound)
        rng = rng if rng is not None else np.random.default_rng(0)
        self._bind(np.empty(self.n_params))
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = 1.0 / np.sqrt(fan_in)
            if i == n_layers - 1 and final_init is not None:
                lim = final_init
            self.weights[i][...] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            self.biases[i][...] = rng.uniform(-lim, lim, size=fan_out)

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def _bind(self, flat: np.ndarray) -> None:
        """Point per-layer weight/bias views into one contiguous vector."""
        self.flat = flat
        self.weights, self.biases = [], []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.biases.append(flat[off:off + fan_out])
            off += fan_out

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.sizes = list(self.sizes)
        twin.output = self.output
        twin.bound = self.bound
        twin._bind(self.flat.copy())
        return twin

    def same_architecture(self, other: "Mlp") -> bool:
        return (self.sizes == other.sizes and self.output == other.output
                and self.bound == other.bound)

    def forward_cached(self, x) -> ForwardCache:
        X = np.asarray(x, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {X.shape[-1]} does not match layer size {self.sizes[0]}")
        inputs, pre = [], []
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output == "tanh":
                h = self.bound * _TANH_SHRINK * np.tanh(z)
            else:
                h = z
        return ForwardCache(inputs, pre, h)

    def forward(self, x) -> np.ndarray:
        """Forward pass; a 1-D input gives a 1-D output."""
        x = np.asarray(x, dtype=float)
        y = self.forward_cached(x).output
        return y[0] if x.ndim == 1 else y

    __call__ = forward

    def unflatten(self, flat: np.ndarray) -> List[np.ndarray]:
        """Per-layer ``[W0, b0, W1, b1, ...]`` views of a parameter-shaped vector."""
        out, off = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            out.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            out.append(flat[off:off + fan_out])
            off += fan_out
        return out

    def backward(self, cache: ForwardCache, upstream, need_params: bool = True):
        """Reverse pass for ``sum(output * upstream)`` summed over the batch.

        Returns ``(grads, grad_input)``.  ``grads`` is a flat vector laid out
        like :attr:`flat` (``None`` when ``need_params`` is false).
        """
        g = np.asarray(upstream, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        last = len(self.weights) - 1
        if self.output == "tanh":
            t = np.tanh(cache.pre[last])
            g = g * (self.bound * _TANH_SHRINK) * (1.0 - t * t)
        grads = np.empty(self.n_params) if need_params else None
        views = self.unflatten(grads) if need_params else None
        for i in range(last, -1, -1):
            if i < last:
                # ReLU subgradient is 0 at exactly 0
                g = g * (cache.pre[i] > 0)
            if need_params:
                np.matmul(cache.inputs[i].T, g, out=views[2 * i])
                np.sum(g, axis=0, out=views[2 * i + 1])
            g = g @ self.weights[i].T
        return grads, g


class Adam:
    """Bias-corrected Adam over a flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        """Descend along ``grads``, updating ``params`` in place."""
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter vector does not match optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grads
        self.v *= b2
        self.v += (1.0 - b2) * grads * grads
        step = np.sqrt(self.v / (1.0 - b2 ** self.t))
        step += self.eps
        np.divide(self.m, step, out=step)
        params -= (self.lr / (1.0 - b1 ** self.t)) * step


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """Polyak-average ``source`` into ``target`` in place."""
    if not target.same_architecture(source):
        raise ValueError("soft_update requires identical architectures")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    target.flat *= 1.0 - tau
    target.flat += tau * source.flat


def save_mlp(net: Mlp, path) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "sizes": net.sizes,
              "output": net.output, "bound": net.bound}
    arrays = {f"p{i}": p for i, p in enumerate(net.params)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_mlp(path) -> Mlp:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != FORMAT_NAME:
                raise ModelFormatError(f"{path}: not an {FORMAT_NAME} file")
            if header.get("version") != FORMAT_VERSION:
                raise ModelFormatError(
                    f"{path}: format version {header.get('version')} unsupported "
                    f"(expected {FORMAT_VERSION})")
            sizes = header["sizes"]
            params = [data[f"p{i}"] for i in range(2 * (len(sizes) - 1))]
    except ModelFormatError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError) as exc:
        raise ModelFormatError(f"{path}: unreadable model file ({exc})") from exc

    net = Mlp(sizes, output=header["output"], bound=header["bound"])
    for i, (dst, src) in enumerate(zip(net.params, params)):
        if dst.shape != src.shape:
            raise ModelFormatError(f"{path}: parameter {i} has shape {src.shape}, "
                                   f"expected {dst.shape}")
        dst[...] = src
    return net
