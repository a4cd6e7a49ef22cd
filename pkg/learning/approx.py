"""
Function approximation on plain numpy arrays: ELU multilayer perceptrons
with hand-written reverse-mode gradients, a table backend sharing the same
interface, the Adam optimizer, finite-difference checks and checkpoints.
"""
import json
import logging
import os
from typing import Any, Callable, Sequence

import numpy as np

from games.exceptions import ArgumentError, ConfigError, NumericError, StateError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


class Mlp:
    """Fully connected net: ELU on hidden layers, identity on the output.

    Weights are stored as (fan_in, fan_out) matrices, float64 throughout.
    """

    def __init__(self, sizes: Sequence[int], seed: int = 0) -> None:
        sizes = [int(size) for size in sizes]
        if len(sizes) < 2 or any(size < 1 for size in sizes):
            raise ArgumentError(
                "an MLP needs at least input and output sizes, all positive."
            )
        self.sizes = sizes
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache = None

    @classmethod
    def identity(cls, size: int) -> "Mlp":
        net = cls([size, size])
        net.weights[0][...] = np.eye(size)
        net.biases[0][...] = 0.0
        return net

    @property
    def input_size(self) -> int:
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        return self.sizes[-1]

    @property
    def parameters(self) -> list[np.ndarray]:
        params = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend((weight, bias))
        return params

    @property
    def parameter_count(self) -> int:
        return sum(param.size for param in self.parameters)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Outputs for a batch (B, input) or a single input vector."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.input_size:
            raise ArgumentError(
                f"expected inputs of size {self.input_size}, got shape {x.shape}."
            )
        inputs = []
        pre_activations = []
        h = batch
        last = len(self.weights) - 1
        for k, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ weight + bias
            if k == last:
                h = z
            else:
                pre_activations.append(z)
                h = elu(z)
        self._cache = (inputs, pre_activations, single)
        return h[0] if single else h

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients of Σ grad_out · output for the last forward."""
        if self._cache is None:
            raise StateError("backward called before forward.")
        inputs, pre_activations, single = self._cache
        delta = np.asarray(grad_out, dtype=np.float64)
        if single:
            delta = delta[None, :]
        if delta.shape != (inputs[0].shape[0], self.output_size):
            raise ArgumentError(
                f"output gradient has shape {delta.shape}, expected "
                f"{(inputs[0].shape[0], self.output_size)}."
            )
        grads: list[np.ndarray] = []
        for k in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(inputs[k].T @ delta)
            if k > 0:
                delta = (delta @ self.weights[k].T) * elu_grad(pre_activations[k - 1])
        grads.reverse()
        return grads

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.weights = [weight.copy() for weight in self.weights]
        clone.biases = [bias.copy() for bias in self.biases]
        clone._cache = None
        return clone

    def state_dict(self) -> dict:
        return {
            "kind": "mlp",
            "sizes": list(self.sizes),
            "params": [param.copy() for param in self.parameters],
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("kind") != "mlp" or list(state["sizes"]) != self.sizes:
            raise ConfigError(
                f"checkpoint network {state.get('sizes')} does not match {self.sizes}."
            )
        for param, saved in zip(self.parameters, state["params"]):
            param[...] = saved


class TabularParams:
    """A (states, outputs) table addressed by integer state ids."""

    def __init__(self, state_count: int, output_size: int, init: float = 0.0) -> None:
        if state_count < 1 or output_size < 1:
            raise ArgumentError("table dimensions must be positive.")
        self.table = np.full((state_count, output_size), float(init))
        self._ids = None

    @property
    def output_size(self) -> int:
        return self.table.shape[1]

    @property
    def parameters(self) -> list[np.ndarray]:
        return [self.table]

    @property
    def parameter_count(self) -> int:
        return self.table.size

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or np.any(ids < 0) or np.any(ids >= self.table.shape[0]):
            raise ArgumentError("state ids out of range for the table.")
        self._ids = ids
        return self.table[ids]

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        if self._ids is None:
            raise StateError("backward called before forward.")
        grad = np.zeros_like(self.table)
        np.add.at(grad, self._ids, grad_out)
        return [grad]

    def copy(self) -> "TabularParams":
        clone = TabularParams.__new__(TabularParams)
        clone.table = self.table.copy()
        clone._ids = None
        return clone

    def state_dict(self) -> dict:
        return {"kind": "table", "params": [self.table.copy()]}

    def load_state_dict(self, state: dict) -> None:
        if state.get("kind") != "table" or state["params"][0].shape != self.table.shape:
            raise ConfigError("checkpoint table does not match the model.")
        self.table[...] = state["params"][0]


def soft_update(target, source, tau: float) -> None:
    """Polyak averaging: target ← (1 − τ)·target + τ·source, in place."""
    if not 0.0 < tau <= 1.0:
        raise ArgumentError("tau must lie in (0, 1].")
    for target_param, source_param in zip(target.parameters, source.parameters):
        target_param *= 1.0 - tau
        target_param += tau * source_param


class Adam:
    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8
    ) -> None:
        if lr <= 0:
            raise ArgumentError("learning rate must be positive.")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ArgumentError("moment decays must lie in [0, 1).")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(param) for param in self.params]
        self.v = [np.zeros_like(param) for param in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Apply one update in place; all-zero gradients leave params untouched."""
        if len(grads) != len(self.params):
            raise ArgumentError("gradient list does not match the parameters.")
        for param, grad in zip(self.params, grads):
            if grad.shape != param.shape:
                raise ArgumentError(
                    f"gradient shape {grad.shape} does not match {param.shape}."
                )
            if not np.all(np.isfinite(grad)):
                raise NumericError("non-finite gradient")
        if not any(np.any(grad) for grad in grads):
            return
        self.t += 1
        beta1, beta2 = self.betas
        for param, grad, m, v in zip(self.params, grads, self.m, self.v):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            m_hat = m / (1.0 - beta1 ** self.t)
            v_hat = v / (1.0 - beta2 ** self.t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for m, saved in zip(self.m, state["m"]):
            m[...] = saved
        for v, saved in zip(self.v, state["v"]):
            v[...] = saved


def numerical_gradient(
    loss: Callable[[], float],
    params: Sequence[np.ndarray],
    eps: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of ``loss`` w.r.t. every entry of ``params``."""
    grads = []
    for param in params:
        grad = np.zeros_like(param)
        flat = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            upper = loss()
            flat[k] = saved - eps
            lower = loss()
            flat[k] = saved
            flat_grad[k] = (upper - lower) / (2.0 * eps)
        grads.append(grad)
    return grads


def relative_error(
    analytic: Sequence[np.ndarray],
    numeric: Sequence[np.ndarray],
    floor: float = 1e-8
) -> float:
    a = np.concatenate([np.ravel(g) for g in analytic])
    b = np.concatenate([np.ravel(g) for g in numeric])
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def _encode(node: Any, arrays: dict[str, np.ndarray]) -> Any:
    if isinstance(node, np.ndarray):
        key = f"array_{len(arrays)}"
        arrays[key] = node
        return {"__array__": key}
    if isinstance(node, dict):
        return {str(key): _encode(value, arrays) for key, value in node.items()}
    if isinstance(node, (list, tuple)):
        return [_encode(value, arrays) for value in node]
    if isinstance(node, np.bool_):
        return bool(node)
    if isinstance(node, np.integer):
        return int(node)
    if isinstance(node, np.floating):
        return float(node)
    return node


def _decode(node: Any, arrays) -> Any:
    if isinstance(node, dict):
        if set(node) == {"__array__"}:
            return np.array(arrays[node["__array__"]])
        return {key: _decode(value, arrays) for key, value in node.items()}
    if isinstance(node, list):
        return [_decode(value, arrays) for value in node]
    return node


def save_checkpoint(path: str, state: dict, metadata: dict | None = None) -> None:
    """Write a nested state dict to ``.npz``: arrays natively, the rest as JSON."""
    arrays: dict[str, np.ndarray] = {}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "metadata": _encode(metadata or {}, {}),
        "state": _encode(state, arrays),
    }
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as handle:
        np.savez(handle, __header__=np.array(json.dumps(header)), **arrays)
    os.replace(tmp_path, path)
    logger.debug("checkpoint written to %s (%d arrays)", path, len(arrays))


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Return (state, metadata) saved by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format {header.get('format_version')}."
            )
        state = _decode(header["state"], data)
    return state, header["metadata"]
