"""Framework-free neural primitives: 1-D valid convolution, max pooling,
tanh/sigmoid/softmax, dense layers, classic dropout, SGD and a
finite-difference gradient checker.

Convention: an "input grid" is an (L, d) float array (L positions, depth d);
a feature map stack is (L-k+1, n_kernels). Layers are stateless in the
functional sense: forward returns (output, cache) and backward consumes the
cache, so activations for many inputs can be retained side by side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NeuralError(ValueError):
    """Shape mismatch or malformed model input."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    dropout_keep: float = 0.5
    seed: int = 0
    l2_max: float | None = None  # per-kernel / per-row max norm cap

    def __post_init__(self):
        # alpha = 0 is allowed so that no-op training runs stay testable
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError("dropout_keep must be in (0, 1]")
        if self.seed is None:
            raise ValueError("seed is mandatory")


# ---------------------------------------------------------------------------
# Core ops
# ---------------------------------------------------------------------------

def conv1d(x: np.ndarray, kernels: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Valid 1-D convolution, stride 1; kernels span the full input depth.

    x: (L, d); kernels: (n, k, d); biases: (n,). Returns (L-k+1, n) with
    out[j, h] = biases[h] + sum(kernels[h] * x[j:j+k]).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]  # 1-D input means depth 1
    n, k, d = kernels.shape
    L = x.shape[0]
    if x.shape[1] != d:
        raise NeuralError(f"input depth {x.shape[1]} != kernel depth {d}")
    if L < k:
        raise NeuralError(f"input length {L} < kernel width {k}")
    windows = sliding_window_view(x, (k, d)).reshape(L - k + 1, k, d)
    return np.tensordot(windows, kernels, axes=([1, 2], [1, 2])) + biases


def max_pool(fmap: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping max pooling over the length axis.

    The trailing partial window is pooled as-is; size >= length is global
    pooling. 1-D inputs give 1-D outputs.
    """
    if size < 1:
        raise NeuralError("pool size must be >= 1")
    arr = np.asarray(fmap, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    L = arr.shape[0]
    starts = range(0, L, size)
    out = np.stack([arr[a:min(a + size, L)].max(axis=0) for a in starts])
    return out[:, 0] if squeeze else out


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy; returns (loss, dloss/dlogits)."""
    p = softmax(logits)
    loss = -float(np.log(max(p[target], 1e-300)))
    grad = p.copy()
    grad[target] -= 1.0
    return loss, grad


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    kind = "layer"

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad, cache):
        """Returns (grad wrt input, {param name: grad})."""
        raise NotImplementedError

    def header(self) -> list[str]:
        return []

    def value_arrays(self) -> list[np.ndarray]:
        return []


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, n_kernels: int, width: int, depth: int, rng=None):
        self.W = np.zeros((n_kernels, width, depth))
        self.b = np.zeros(n_kernels)
        if rng is not None:
            self.W = rng.uniform(-0.01, 0.01, self.W.shape)

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        out = conv1d(x, self.W, self.b)
        return out, x

    def backward(self, grad, cache):
        x = cache
        n, k, d = self.W.shape
        J = x.shape[0] - k + 1
        windows = sliding_window_view(x, (k, d)).reshape(J, k, d)
        dW = np.tensordot(grad, windows, axes=([0], [0]))
        db = grad.sum(axis=0)
        dx = np.zeros_like(x)
        for r in range(k):
            dx[r:r + J] += grad @ self.W[:, r, :]
        return dx, {"W": dW, "b": db}

    def header(self):
        return [str(s) for s in self.W.shape]

    def value_arrays(self):
        return [self.W, self.b]


class MaxPool1d(Layer):
    """size=None pools globally regardless of input length."""

    kind = "maxpool"

    def __init__(self, size: int | None):
        if size is not None and size < 1:
            raise NeuralError("pool size must be >= 1")
        self.size = size

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        L = x.shape[0]
        size = L if self.size is None else self.size
        starts = list(range(0, L, size))
        out = np.empty((len(starts), x.shape[1]))
        argmax = np.empty((len(starts), x.shape[1]), dtype=int)
        for w, a in enumerate(starts):
            blk = x[a:min(a + size, L)]
            idx = blk.argmax(axis=0)
            argmax[w] = a + idx
            out[w] = blk[idx, np.arange(x.shape[1])]
        return out, (x.shape, argmax)

    def backward(self, grad, cache):
        shape, argmax = cache
        dx = np.zeros(shape)
        cols = np.arange(shape[1])
        for w in range(argmax.shape[0]):
            dx[argmax[w], cols] += grad[w]
        return dx, {}

    def header(self):
        return ["global" if self.size is None else str(self.size)]


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, train=False, rng=None):
        out = np.tanh(x)
        return out, out

    def backward(self, grad, cache):
        return grad * (1.0 - cache ** 2), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False, rng=None):
        out = 1.0 / (1.0 + np.exp(-x))
        return out, out

    def backward(self, grad, cache):
        return grad * cache * (1.0 - cache), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        return x.ravel(), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}


class Dropout(Layer):
    """Classic dropout: random mask at train time, activations scaled by the
    keep probability at inference."""

    kind = "dropout"

    def __init__(self, keep: float):
        if not 0 < keep <= 1:
            raise NeuralError("keep probability must be in (0, 1]")
        self.keep = keep

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        if train:
            if rng is None:
                raise NeuralError("dropout needs an rng in training mode")
            mask = rng.random(x.shape) < self.keep
            return x * mask, mask
        return x * self.keep, None

    def backward(self, grad, cache):
        if cache is None:  # inference-mode backward only used by grad checks
            return grad * self.keep, {}
        return grad * cache, {}

    def header(self):
        return [repr(self.keep)]


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng=None):
        self.W = np.zeros((n_out, n_in))
        self.b = np.zeros(n_out)
        if rng is not None:
            self.W = rng.uniform(-0.01, 0.01, self.W.shape)

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.W.shape[1]:
            raise NeuralError(f"dense expects {self.W.shape[1]} inputs, got {x.size}")
        return self.W @ x + self.b, x

    def backward(self, grad, cache):
        dW = np.outer(grad, cache)
        db = grad
        dx = self.W.T @ grad
        return dx, {"W": dW, "b": db}

    def header(self):
        return [str(s) for s in self.W.shape]

    def value_arrays(self):
        return [self.W, self.b]


class Net:
    """A plain layer stack. forward retains every layer's cache in a tape so
    one backward pass can run after many forwards (caller keeps the tapes)."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None):
        tape = []
        for i, layer in enumerate(self.layers):
            try:
                x, cache = layer.forward(x, train=train, rng=rng)
            except NeuralError as exc:
                raise NeuralError(f"layer {i} ({layer.kind}): {exc}") from None
            tape.append(cache)
        return x, tape

    def backward(self, grad, tape):
        grads = [None] * len(self.layers)
        for i in reversed(range(len(self.layers))):
            grad, g = self.layers[i].backward(grad, tape[i])
            grads[i] = g
        return grad, grads

    def zero_grads(self):
        return [{name: np.zeros_like(arr) for name, arr in layer.params.items()}
                for layer in self.layers]

    @staticmethod
    def add_grads(acc, grads):
        for slot, g in zip(acc, grads):
            for name, arr in g.items():
                slot[name] += arr

    def param_entries(self):
        return [(i, name, arr)
                for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()]

    def sgd_step(self, grads, lr: float, l2_max: float | None = None):
        for layer, g in zip(self.layers, grads):
            for name, arr in layer.params.items():
                arr -= lr * g[name]
            if l2_max is not None:
                clip_max_norm(layer, l2_max)


def clip_max_norm(layer, cap: float):
    """Per-kernel (conv) / per-row (dense) L2 max-norm constraint."""
    W = layer.params.get("W")
    if W is None:
        return
    flat = W.reshape(W.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    over = norms > cap
    if over.any():
        flat[over] *= (cap / norms[over])[:, None]


def sgd_step(params_and_grads, lr: float):
    """Plain in-place SGD on (array, grad) pairs."""
    for arr, grad in params_and_grads:
        arr -= lr * grad


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(net: Net, x, loss, step: float = 1e-5) -> float:
    """Compare analytic parameter gradients against central finite differences.

    loss: callable(output) -> (scalar, dloss/doutput). Evaluated in inference
    mode, so the comparison point is deterministic. Returns the max of
    |ga - gn| / max(1e-8, |ga| + |gn|) over all parameters (0 if none).
    """
    out, tape = net.forward(x, train=False)
    _, dout = loss(out)
    _, grads = net.backward(dout, tape)

    worst = 0.0
    for i, name, arr in net.param_entries():
        analytic = grads[i][name]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            lo_plus = loss(net.forward(x, train=False)[0])[0]
            arr[idx] = orig - step
            lo_minus = loss(net.forward(x, train=False)[0])[0]
            arr[idx] = orig
            numeric = (lo_plus - lo_minus) / (2 * step)
            ga = float(analytic[idx])
            rel = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
            worst = max(worst, rel)
            it.iternext()
    return worst


# ---------------------------------------------------------------------------
# Sectioned text serialization (bit-exact float round trip via repr/float)
# ---------------------------------------------------------------------------

def _fmt_row(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def save_net(net: Net, fh):
    fh.write(f"net {len(net.layers)}\n")
    for layer in net.layers:
        fh.write(" ".join([layer.kind] + layer.header()) + "\n")
        for arr in layer.value_arrays():
            mat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in mat:
                fh.write(_fmt_row(row) + "\n")


def _read_matrix(fh, rows, cols):
    out = np.empty((rows, cols))
    for r in range(rows):
        vals = fh.readline().split()
        if len(vals) != cols:
            raise NeuralError(f"expected {cols} values, got {len(vals)}")
        out[r] = [float(v) for v in vals]
    return out


def load_net(fh) -> Net:
    head = fh.readline().split()
    if len(head) != 2 or head[0] != "net":
        raise NeuralError("not a serialized layer stack")
    layers = []
    for _ in range(int(head[1])):
        parts = fh.readline().split()
        kind, args = parts[0], parts[1:]
        if kind == "conv1d":
            n, k, d = (int(a) for a in args)
            layer = Conv1d(n, k, d)
            layer.W = _read_matrix(fh, n, k * d).reshape(n, k, d)
            layer.b = _read_matrix(fh, 1, n)[0]
        elif kind == "dense":
            n_out, n_in = (int(a) for a in args)
            layer = Dense(n_in, n_out)
            layer.W = _read_matrix(fh, n_out, n_in)
            layer.b = _read_matrix(fh, 1, n_out)[0]
        elif kind == "maxpool":
            layer = MaxPool1d(None if args[0] == "global" else int(args[0]))
        elif kind == "dropout":
            layer = Dropout(float(args[0]))
        elif kind == "tanh":
            layer = Tanh()
        elif kind == "sigmoid":
            layer = Sigmoid()
        elif kind == "flatten":
            layer = Flatten()
        else:
            raise NeuralError(f"unknown layer kind {kind!r}")
        layers.append(layer)
    return Net(layers)
