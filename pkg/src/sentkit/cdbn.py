"""RBMs with Gaussian visible units trained by CD-1, convolutional RBM
blocks, greedy layerwise pre-training, and the subjectivity classifier.

CD-1 chain per sample: hidden states are sampled from the data-side
probabilities, the visible layer is re-sampled from the Gaussian
reconstruction, and the reconstruction-side hidden statistics use
probabilities (variance reduction). Per-sample randomness is keyed on
(per-epoch draw, sample content), so identical samples inside one batch see
identical draws and batch averaging is exact; with a fixed seed the whole
procedure is bit-for-bit reproducible.

Reported reconstruction error is the batch mean of ||v - v_mean||^2 against
the mean (noise-free) reconstruction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import gbn
from .corpus import EmbeddingTable, Sentence
from .neural import (Conv1d, Dense, Flatten, MaxPool1d, Net, NeuralError, Sigmoid,
                     TrainConfig, cross_entropy, load_net, save_net, softmax)

CLASSES = ("objective", "subjective")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class RbmLayer:
    W: np.ndarray  # n_visible x n_hidden
    b: np.ndarray  # hidden biases
    c: np.ndarray  # visible biases
    sigma: float = 1.0  # shared visible standard deviation

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("weights must be finite")

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]


@dataclass
class ConvRbm:
    """Z kernel groups, each k x d, over an (L, d) Gaussian visible grid;
    hidden block per group has shape (L - k + 1,)."""

    W: np.ndarray  # Z x k x d
    b: np.ndarray  # per-group hidden bias
    c: np.ndarray  # per-dimension visible bias
    sigma: float = 1.0

    def __post_init__(self):
        if self.W.shape[0] < 1:
            raise ValueError("need at least one kernel group")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


def make_rbm(n_visible: int, n_hidden: int, sigma: float = 1.0, seed: int = 0) -> RbmLayer:
    rng = np.random.default_rng(seed)
    return RbmLayer(W=rng.uniform(-0.01, 0.01, (n_visible, n_hidden)),
                    b=np.zeros(n_hidden), c=np.zeros(n_visible), sigma=sigma)


def make_conv_rbm(groups: int, width: int, depth: int, sigma: float = 1.0,
                  seed: int = 0) -> ConvRbm:
    rng = np.random.default_rng(seed)
    return ConvRbm(W=rng.uniform(-0.01, 0.01, (groups, width, depth)),
                   b=np.zeros(groups), c=np.zeros(depth), sigma=sigma)


# ---------------------------------------------------------------------------
# Single-layer dynamics
# ---------------------------------------------------------------------------

def rbm_hidden(layer: RbmLayer, v: np.ndarray, mode: str = "prob", rng=None) -> np.ndarray:
    """sigmoid(b + v.W), or Bernoulli samples of it."""
    v = np.asarray(v, dtype=float)
    if v.shape != (layer.n_visible,):
        raise ValueError(f"visible size {v.shape} != {layer.n_visible}")
    p = _sigmoid(layer.b + v @ layer.W)
    if mode == "prob":
        return p
    if mode == "sample":
        return (rng.random(layer.n_hidden) < p).astype(float)
    raise ValueError(f"unknown mode {mode!r}")


def rbm_reconstruct(layer: RbmLayer, h: np.ndarray, mode: str = "mean", rng=None) -> np.ndarray:
    """c + W.h, optionally with sigma-scaled Gaussian noise."""
    h = np.asarray(h, dtype=float)
    if h.shape != (layer.n_hidden,):
        raise ValueError(f"hidden size {h.shape} != {layer.n_hidden}")
    mean = layer.c + layer.W @ h
    if mode == "mean":
        return mean
    if mode == "sample":
        return mean + layer.sigma * rng.standard_normal(layer.n_visible)
    raise ValueError(f"unknown mode {mode!r}")


def conv_hidden(layer: ConvRbm, v: np.ndarray, mode: str = "prob", rng=None) -> np.ndarray:
    """Hidden block grid (L-k+1, Z) from an (L, d) visible grid."""
    from .neural import conv1d
    p = _sigmoid(conv1d(v, layer.W, layer.b))
    if mode == "prob":
        return p
    return (rng.random(p.shape) < p).astype(float)


def conv_reconstruct(layer: ConvRbm, h: np.ndarray, length: int, mode: str = "mean",
                     rng=None) -> np.ndarray:
    Z, k, d = layer.W.shape
    mean = np.tile(layer.c, (length, 1))
    J = length - k + 1
    for r in range(k):
        mean[r:r + J] += h @ layer.W[:, r, :]
    if mode == "sample":
        return mean + layer.sigma * rng.standard_normal(mean.shape)
    return mean


def energy(layer, v, h) -> float:
    """Bilinear coupling energy -sum v.h.w (dense) or its blockwise conv form."""
    v = np.asarray(v, dtype=float)
    h = np.asarray(h, dtype=float)
    if isinstance(layer, RbmLayer):
        if v.shape != (layer.n_visible,) or h.shape != (layer.n_hidden,):
            raise ValueError("shape mismatch")
        return float(-(v @ layer.W @ h))
    if isinstance(layer, ConvRbm):
        from .neural import conv1d
        Z, k, d = layer.W.shape
        if v.ndim != 2 or v.shape[1] != d:
            raise ValueError("visible grid depth mismatch")
        J = v.shape[0] - k + 1
        if h.shape != (J, Z):
            raise ValueError(f"hidden blocks must be {(J, Z)}, got {h.shape}")
        responses = conv1d(v, layer.W, np.zeros(Z))
        return float(-np.sum(h * responses))
    raise TypeError(f"not an RBM layer: {type(layer)!r}")


def _sample_rng(round_key: int, v: np.ndarray):
    digest = hashlib.blake2b(v.tobytes(), digest_size=8).digest()
    return np.random.default_rng([round_key, int.from_bytes(digest, "little")])


def cd1_epoch(layer, batch, alpha: float, rng) -> float:
    """One CD-1 pass over the batch; updates the layer in place and returns
    the mean reconstruction error. alpha = 0 touches nothing (bit-exact)."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    batch = np.asarray(batch, dtype=float)
    if isinstance(layer, RbmLayer) and batch.ndim == 1:
        batch = batch[None, :]
    round_key = int(rng.integers(0, 2 ** 62))
    if isinstance(layer, RbmLayer):
        return _cd1_dense(layer, batch, alpha, round_key)
    if isinstance(layer, ConvRbm):
        return _cd1_conv(layer, batch, alpha, round_key)
    raise TypeError(f"not an RBM layer: {type(layer)!r}")


def _cd1_dense(layer: RbmLayer, batch, alpha, round_key) -> float:
    B = batch.shape[0]
    dW = np.zeros_like(layer.W)
    db = np.zeros_like(layer.b)
    dc = np.zeros_like(layer.c)
    err = 0.0
    for v in batch:
        sub = _sample_rng(round_key, v)
        h_sample = rbm_hidden(layer, v, "sample", sub)
        v_mean = rbm_reconstruct(layer, h_sample, "mean")
        v_recon = v_mean + layer.sigma * sub.standard_normal(layer.n_visible)
        h_recon = rbm_hidden(layer, v_recon, "prob")
        dW += np.outer(v, h_sample) - np.outer(v_recon, h_recon)
        db += h_sample - h_recon
        dc += v - v_recon
        diff = v - v_mean
        err += float(diff @ diff)
    if alpha:
        layer.W += alpha * dW / B
        layer.b += alpha * db / B
        layer.c += alpha * dc / B
    return err / B


def _cd1_conv(layer: ConvRbm, batch, alpha, round_key) -> float:
    from numpy.lib.stride_tricks import sliding_window_view
    Z, k, d = layer.W.shape
    dW = np.zeros_like(layer.W)
    db = np.zeros_like(layer.b)
    dc = np.zeros_like(layer.c)
    err = 0.0
    B = len(batch)
    for v in batch:
        v = np.asarray(v, dtype=float)
        L = v.shape[0]
        sub = _sample_rng(round_key, v)
        p_h = conv_hidden(layer, v, "prob")
        h_sample = (sub.random(p_h.shape) < p_h).astype(float)
        v_mean = conv_reconstruct(layer, h_sample, L, "mean")
        v_recon = v_mean + layer.sigma * sub.standard_normal(v.shape)
        h_recon = conv_hidden(layer, v_recon, "prob")
        win_data = sliding_window_view(v, (k, d)).reshape(-1, k, d)
        win_recon = sliding_window_view(v_recon, (k, d)).reshape(-1, k, d)
        dW += (np.tensordot(h_sample, win_data, axes=([0], [0]))
               - np.tensordot(h_recon, win_recon, axes=([0], [0])))
        db += h_sample.sum(axis=0) - h_recon.sum(axis=0)
        dc += v.sum(axis=0) - v_recon.sum(axis=0)
        err += float(np.sum((v - v_mean) ** 2))
    if alpha:
        layer.W += alpha * dW / B
        layer.b += alpha * db / B
        layer.c += alpha * dc / B
    return err / B


def _hidden_data(layer, data):
    if isinstance(layer, RbmLayer):
        return [rbm_hidden(layer, v, "prob") for v in data]
    return [conv_hidden(layer, v, "prob") for v in data]


def pretrain_stack(stack, data, config: TrainConfig):
    """Greedy layerwise CD-1: each layer trains on the previous layer's
    hidden probabilities. Mutates the stack; returns per-layer error traces."""
    rng = np.random.default_rng(config.seed)
    cur = [np.asarray(v, dtype=float) for v in data]
    history = []
    for layer in stack:
        if cur:
            flat = np.concatenate([v.ravel() for v in cur])
            layer.sigma = max(float(flat.std()), 1e-3)
        errors = []
        for _ in range(config.epochs):
            errors.append(cd1_epoch(layer, cur, config.learning_rate, rng))
        history.append(errors)
        cur = _hidden_data(layer, cur)
    return history


# ---------------------------------------------------------------------------
# Subjectivity classifier
# ---------------------------------------------------------------------------

class SubjectivityModel:
    """Sentence classifier: fixed-window embedded grid -> sigmoid conv stack
    (CD-pretrainable) -> global max pool -> 2-way softmax."""

    def __init__(self, embedding: EmbeddingTable, window: int = 50,
                 kernel_widths=(3, 4, 5), n_maps: int = 100, seed: int = 0,
                 net: Net | None = None):
        self.embedding = embedding
        self.window = window
        self.kernel_widths = tuple(kernel_widths)
        self.n_maps = n_maps
        if net is not None:
            self.net = net
        else:
            rng = np.random.default_rng(seed)
            layers = []
            depth = embedding.dim
            for w in self.kernel_widths:
                layers += [Conv1d(n_maps, w, depth, rng), Sigmoid()]
                depth = n_maps
            layers += [MaxPool1d(None), Flatten(), Dense(n_maps, len(CLASSES), rng)]
            self.net = Net(layers)

    def embed(self, sentence: Sentence) -> np.ndarray:
        """Wrap the sentence to the fixed window: truncate, then zero-pad."""
        grid = np.zeros((self.window, self.embedding.dim))
        for i, tok in enumerate(sentence.tokens[:self.window]):
            grid[i] = self.embedding.lookup(tok.surface)
        return grid

    def conv_layers(self):
        return [l for l in self.net.layers if isinstance(l, Conv1d)]

    def probabilities(self, sentence: Sentence) -> np.ndarray:
        logits, _ = self.net.forward(self.embed(sentence), train=False)
        return softmax(logits)


def classify(model: SubjectivityModel, sentence: Sentence):
    """Predicted label plus (p_objective, p_subjective); ties go objective."""
    p = model.probabilities(sentence)
    label = CLASSES[1] if p[1] > p[0] else CLASSES[0]
    return label, (float(p[0]), float(p[1]))


def _filtered_pretraining_set(sentences, motifs):
    """Motif-filter each class separately, then pool the weighted sets."""
    out = []
    for cls in CLASSES:
        group = [s for s in sentences if s.label == cls]
        out.extend(gbn.filter_sentences(group, motifs))
    return out


def train_subjectivity(sentences, motifs, config: TrainConfig,
                       embedding: EmbeddingTable | None = None,
                       window: int = 50, kernel_widths=(3, 4, 5), n_maps: int = 100,
                       pretrain_epochs: int | None = None, embed_dim: int = 30,
                       lbl_window: int = 5, skip_pretrain: bool = False):
    """Two-phase training: CD-1 pre-training on the motif-filtered multiset,
    then supervised softmax fine-tuning on the full corpus."""
    sentences = [s for s in sentences if s.label in CLASSES]
    if not sentences:
        raise ValueError("no labeled sentences (need subjective/objective labels)")
    if embedding is None:
        embedding = gbn.lbl_init(sentences, dim=embed_dim, window=lbl_window,
                                 seed=config.seed)
    model = SubjectivityModel(embedding=embedding, window=window,
                              kernel_widths=kernel_widths, n_maps=n_maps,
                              seed=config.seed)

    pretrain_set = [] if (skip_pretrain or motifs is None or not len(motifs)) \
        else _filtered_pretraining_set(sentences, motifs)
    if pretrain_set:
        convs = model.conv_layers()
        stack = [ConvRbm(W=l.W.copy(), b=l.b.copy(), c=np.zeros(l.W.shape[2]))
                 for l in convs]
        pre_cfg = TrainConfig(learning_rate=config.learning_rate,
                              epochs=config.epochs if pretrain_epochs is None else pretrain_epochs,
                              dropout_keep=1.0, seed=config.seed)
        pretrain_stack(stack, [model.embed(s) for s in pretrain_set], pre_cfg)
        for conv, rbm in zip(convs, stack):
            conv.W[...] = rbm.W
            conv.b[...] = rbm.b

    rng = np.random.default_rng(config.seed + 1)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(sentences))
        total = 0.0
        for idx in order:
            sent = sentences[idx]
            target = CLASSES.index(sent.label)
            logits, tape = model.net.forward(model.embed(sent), train=True, rng=rng)
            loss, dlogits = cross_entropy(logits, target)
            total += loss
            _, grads = model.net.backward(dlogits, tape)
            model.net.sgd_step(grads, config.learning_rate, config.l2_max)
        losses.append(total / len(sentences))
    return model, losses


def training_accuracy(model: SubjectivityModel, sentences) -> float:
    sentences = [s for s in sentences if s.label in CLASSES]
    hits = sum(1 for s in sentences if classify(model, s)[0] == s.label)
    return hits / len(sentences)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_subjectivity(model: SubjectivityModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        widths = ",".join(str(w) for w in model.kernel_widths)
        fh.write(f"subjectivity window {model.window} dim {model.embedding.dim} "
                 f"widths {widths} maps {model.n_maps} "
                 f"unk {model.embedding.unk_policy} seed {model.embedding.seed} "
                 f"vocab {len(model.embedding.entries)}\n")
        for word in sorted(model.embedding.entries):
            vals = " ".join(repr(float(x)) for x in model.embedding.entries[word])
            fh.write(f"vec {word} {vals}\n")
        save_net(model.net, fh)


def load_subjectivity(path) -> SubjectivityModel:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if not head or head[0] != "subjectivity":
            raise NeuralError("not a subjectivity model file")
        fields = dict(zip(head[1::2], head[2::2]))
        entries = {}
        for _ in range(int(fields["vocab"])):
            parts = fh.readline().split()
            entries[parts[1]] = np.array([float(x) for x in parts[2:]])
        table = EmbeddingTable(dim=int(fields["dim"]), entries=entries,
                               unk_policy=fields["unk"], seed=int(fields["seed"]))
        net = load_net(fh)
    widths = tuple(int(w) for w in fields["widths"].split(","))
    return SubjectivityModel(embedding=table, window=int(fields["window"]),
                             kernel_widths=widths, n_maps=int(fields["maps"]), net=net)
