"""Dynamic Gaussian Bayesian network over BOW word variables.

Each candidate word i at the current instant is modelled as a linear-Gaussian
regression on a parent set a_i of (word, lag) pairs,

    x_i(t) ~ Normal(mu_i + sum_j (x_j(t - lag_j) - mu_j) * beta_j, cond_var_i),

with structure chosen per node by greedy forward selection under a
log-likelihood score penalized 0.5*log(n) per parent (ML plug-in scoring,
uniform structure prior). Same-instant (lag-0) edges are restricted to
parents with a smaller candidate index, which keeps the lag-0 subgraph
acyclic; lagged parents always point forward in time.

High-scoring nodes become motifs: their coefficient vectors padded onto an
(order+1) x n_candidates kernel that is slid over token windows to select
and weight pre-training sentences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import BowTimeSeries, EmbeddingTable, Lexicon, Sentence

VAR_FLOOR = 1e-12  # keeps log-likelihoods finite on exact linear relations


class GbnError(ValueError):
    pass


@dataclass
class FitResult:
    beta: np.ndarray
    cond_var: float
    loglik: float
    mean: float
    parent_means: np.ndarray
    n_obs: int


@dataclass
class NodeFit:
    index: int
    word: str
    parents: list[tuple[int, int]]  # (candidate index, lag)
    fit: FitResult


@dataclass
class GaussianNet:
    candidates: list[str]
    order: int
    nodes: list[NodeFit]
    n_obs: int

    def __post_init__(self):
        for node in self.nodes:
            for j, lag in node.parents:
                if not 0 <= lag <= self.order:
                    raise GbnError(f"parent lag {lag} outside 0..{self.order}")
                if lag == 0 and j >= node.index:
                    raise GbnError("lag-0 parent must have smaller candidate index")
            if node.fit.cond_var < 0:
                raise GbnError("conditional variance must be >= 0")


@dataclass
class Motif:
    node: int
    word: str
    kernel: np.ndarray  # (order+1) x n_candidates, row 0 = oldest lag
    score: float


@dataclass
class MotifSet:
    candidates: list[str]
    order: int
    motifs: list[Motif] = field(default_factory=list)
    threshold: float = -math.inf

    def __len__(self):
        return len(self.motifs)


# ---------------------------------------------------------------------------
# Node regression
# ---------------------------------------------------------------------------

def _aligned_columns(series: BowTimeSeries, node, parents, align_lag):
    if isinstance(node, tuple):
        child_idx, child_lag = node
    else:
        child_idx, child_lag = node, 0
    lags = [child_lag] + [lag for _, lag in parents]
    offset = max(lags) if align_lag is None else align_lag
    if align_lag is not None and align_lag < max(lags):
        raise GbnError(f"align_lag {align_lag} smaller than max lag {max(lags)}")
    T = series.n_instants
    n = T - offset
    if n < len(parents) + 2:
        raise GbnError(f"only {n} usable instants for {len(parents)} parents")
    y = series.matrix[child_idx, offset - child_lag:T - child_lag]
    P = np.empty((n, len(parents)))
    for col, (j, lag) in enumerate(parents):
        P[:, col] = series.matrix[j, offset - lag:T - lag]
    return y, P


def fit_node(series: BowTimeSeries, node, parents, align_lag=None, ridge: float = 0.0) -> FitResult:
    """Least-squares fit of one node on its parent set.

    Returns beta (centered regression coefficients), cond_var (mean squared
    residual), and the Gaussian log-likelihood of the node data. Covariances
    use the 1/n normalization throughout. A singular parent Gram matrix is an
    error unless ridge > 0 is supplied.
    """
    parents = list(parents)
    y, P = _aligned_columns(series, node, parents, align_lag)
    n = y.size
    mean = float(y.mean())
    yc = y - mean
    if parents:
        pmeans = P.mean(axis=0)
        Pc = P - pmeans
        gram = Pc.T @ Pc
        if ridge > 0:
            gram = gram + ridge * np.eye(len(parents))
        else:
            # rank check: reject collinear parents rather than return garbage
            if np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, float(np.trace(gram)))) < len(parents):
                raise GbnError("singular parent covariance; drop a parent or pass ridge > 0")
        beta = np.linalg.solve(gram, Pc.T @ yc)
        resid = yc - Pc @ beta
    else:
        pmeans = np.zeros(0)
        beta = np.zeros(0)
        resid = yc
    cond_var = float(resid @ resid) / n
    v = max(cond_var, VAR_FLOOR)
    loglik = -0.5 * n * math.log(2 * math.pi * v) - (n * cond_var) / (2 * v)
    return FitResult(beta=beta, cond_var=cond_var, loglik=loglik, mean=mean,
                     parent_means=pmeans, n_obs=n)


def node_score(fit: FitResult, n_parents: int) -> float:
    """Penalized per-node score: loglik minus 0.5*log(n) per parent."""
    return fit.loglik - 0.5 * math.log(fit.n_obs) * n_parents


def allowed_parents(index: int, n_candidates: int, order: int) -> list[tuple[int, int]]:
    """Lag-0 parents must precede the node in candidate (clue-rank) order."""
    same = [(j, 0) for j in range(index)]
    lagged = [(j, lag) for lag in range(1, order + 1) for j in range(n_candidates)]
    return same + lagged


def learn_structure(series: BowTimeSeries, candidates, order: int, max_parents: int,
                    epsilon: float = 1e-9, ridge: float = 1e-6) -> GaussianNet:
    """Per-node greedy forward parent selection under the penalized score."""
    candidates = list(candidates)
    if not candidates:
        raise GbnError("empty candidate set")
    vocab_pos = {w: i for i, w in enumerate(series.vocab)}
    missing = [w for w in candidates if w not in vocab_pos]
    if missing:
        raise GbnError(f"candidates not in series vocab: {missing}")
    if series.n_instants <= order + max_parents:
        raise GbnError("series too short for requested order/max_parents")

    # view of the series restricted to candidate rows, in candidate order
    sub = BowTimeSeries(vocab=candidates,
                        matrix=series.matrix[[vocab_pos[w] for w in candidates]])
    nodes = []
    n_obs = series.n_instants - order
    for i, word in enumerate(candidates):
        pool = allowed_parents(i, len(candidates), order)
        parents: list[tuple[int, int]] = []
        best_fit = fit_node(sub, i, parents, align_lag=order, ridge=ridge)
        best_score = node_score(best_fit, 0)
        while len(parents) < max_parents:
            step_best = None
            for cand in pool:
                if cand in parents:
                    continue
                trial = parents + [cand]
                try:
                    fit = fit_node(sub, i, trial, align_lag=order, ridge=ridge)
                except GbnError:
                    continue
                score = node_score(fit, len(trial))
                if step_best is None or score > step_best[0]:
                    step_best = (score, cand, fit)
            if step_best is None or step_best[0] - best_score < epsilon:
                break
            best_score, chosen, best_fit = step_best
            parents.append(chosen)
        nodes.append(NodeFit(index=i, word=word, parents=parents, fit=best_fit))
    return GaussianNet(candidates=candidates, order=order, nodes=nodes, n_obs=n_obs)


# ---------------------------------------------------------------------------
# Motifs and pre-training sentence selection
# ---------------------------------------------------------------------------

def extract_motifs(net: GaussianNet, tau: float) -> MotifSet:
    """One motif per node whose per-instant log-likelihood reaches tau.

    The motif kernel is the node's beta vector padded onto an
    (order+1) x n_candidates grid: row r holds lag (order - r), so row 0 is
    the oldest instant and the last row the current one. Motifs are ordered
    by descending score, ties broken by node index.
    """
    motifs = []
    for node in net.nodes:
        score = node.fit.loglik / node.fit.n_obs
        if score >= tau:
            kernel = np.zeros((net.order + 1, len(net.candidates)))
            for (j, lag), b in zip(node.parents, node.fit.beta):
                kernel[net.order - lag, j] = b
            motifs.append(Motif(node=node.index, word=node.word, kernel=kernel, score=score))
    motifs.sort(key=lambda m: (-m.score, m.node))
    return MotifSet(candidates=net.candidates, order=net.order, motifs=motifs, threshold=tau)


def _indicator_grid(sentence: Sentence, candidates) -> np.ndarray:
    """ind[p, j] = 1 when candidate j (word or phrase) starts at token p."""
    words = sentence.words()
    grid = np.zeros((len(words), len(candidates)))
    for j, cand in enumerate(candidates):
        parts = cand.lower().split()
        n = len(parts)
        for p in range(len(words) - n + 1):
            if words[p:p + n] == parts:
                grid[p, j] = 1.0
    return grid


def motif_responses(sentence: Sentence, motif: Motif, candidates) -> np.ndarray:
    """Convolution of the motif kernel with the sentence's candidate indicators."""
    width = motif.kernel.shape[0]
    grid = _indicator_grid(sentence, candidates)
    L = grid.shape[0]
    if L < width:
        return np.zeros(0)
    return np.array([float(np.sum(grid[p:p + width] * motif.kernel))
                     for p in range(L - width + 1)])


def filter_sentences(sentences, motifs: MotifSet) -> list[Sentence]:
    """Weight sentences by motif hits; the result repeats each sentence once
    per hit, so hit counts become pre-training frequencies.

    A hit is a token-window position whose convolution response strictly
    exceeds the motif's activation cutoff (mean + 1 std of that motif's
    responses over this corpus). Weights depend only on each sentence's own
    tokens, so the multiset is invariant to input order.
    """
    sentences = list(sentences)
    if not motifs.motifs or not sentences:
        return []
    weights = np.zeros(len(sentences), dtype=int)
    for motif in motifs.motifs:
        per_sent = [motif_responses(s, motif, motifs.candidates) for s in sentences]
        all_resp = np.concatenate([r for r in per_sent if r.size]) if any(
            r.size for r in per_sent) else np.zeros(0)
        if all_resp.size == 0:
            continue
        cutoff = float(all_resp.mean() + all_resp.std())
        for idx, resp in enumerate(per_sent):
            weights[idx] += int(np.sum(resp > cutoff))
    out = []
    for sent, w in zip(sentences, weights):
        out.extend([sent] * int(w))
    return out


def select_clue_candidates(sentences, clues: Lexicon, top_n: int = 50,
                           label: str | None = "subjective") -> list[str]:
    """Rank clue entries by frequency (in `label` sentences when labels exist)
    and keep the top_n; multiword entries become phrase candidates."""
    counted = [s for s in sentences if label is None or s.label in (None, label)]
    freq: dict[str, int] = {}
    entries = sorted(clues.entries)
    for word, pos in entries:
        parts = word.split()
        total = 0
        for sent in counted:
            words = sent.words()
            if len(parts) == 1:
                if pos == "*":
                    total += sum(1 for t in sent.tokens if t.surface.lower() == word)
                else:
                    total += sum(1 for t in sent.tokens
                                 if t.surface.lower() == word and t.pos == pos)
            else:
                total += sum(1 for p in range(len(words) - len(parts) + 1)
                             if words[p:p + len(parts)] == parts)
        freq[word] = freq.get(word, 0) + total
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, c in ranked[:top_n] if c > 0]


# ---------------------------------------------------------------------------
# Log-bilinear embedding initializer
# ---------------------------------------------------------------------------

class LblModel:
    """Predicts each word vector as a sum of context-matrix-transformed
    predecessor vectors; trained by online SGD on squared prediction error."""

    def __init__(self, dim: int, window: int, seed: int = 0):
        if dim < 1 or window < 1:
            raise ValueError("dim and window must be >= 1")
        self.dim = dim
        self.window = window
        self.seed = seed
        self.context = None  # (window, dim, dim)
        self.vectors: dict[str, np.ndarray] = {}
        self.loss_trace: list[float] = []

    def _ensure_vocab(self, sentences):
        rng = np.random.default_rng(self.seed)
        vocab = sorted({w for s in sentences for w in s.words()})
        self.context = rng.uniform(-0.01, 0.01, (self.window, self.dim, self.dim))
        for w in vocab:
            self.vectors[w] = rng.uniform(-0.1, 0.1, self.dim)

    def fit(self, sentences, epochs: int = 10, lr: float = 0.02):
        sentences = list(sentences)
        self._ensure_vocab(sentences)
        for _ in range(epochs):
            total, count = 0.0, 0
            for sent in sentences:
                words = sent.words()
                for i in range(1, len(words)):
                    ctx = words[max(0, i - self.window):i][::-1]  # nearest first
                    pred = np.zeros(self.dim)
                    for k, w in enumerate(ctx):
                        pred += self.context[k] @ self.vectors[w]
                    err = pred - self.vectors[words[i]]
                    total += float(err @ err)
                    count += 1
                    for k, w in enumerate(ctx):
                        ck = self.context[k]
                        grad_c = 2.0 * np.outer(err, self.vectors[w])
                        self.vectors[w] = self.vectors[w] - lr * 2.0 * (ck.T @ err)
                        self.context[k] = ck - lr * grad_c
                    self.vectors[words[i]] = self.vectors[words[i]] + lr * 2.0 * err
            self.loss_trace.append(total / max(count, 1))
        return self

    def embeddings(self) -> EmbeddingTable:
        return EmbeddingTable(dim=self.dim, entries=dict(self.vectors),
                              unk_policy="seeded-hash", seed=self.seed)


def lbl_init(sentences, dim: int, window: int, epochs: int = 10, lr: float = 0.02,
             seed: int = 0) -> EmbeddingTable:
    """Train the log-bilinear initializer and return its word vectors."""
    model = LblModel(dim=dim, window=window, seed=seed)
    model.fit(sentences, epochs=epochs, lr=lr)
    return model.embeddings()


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------

def save_gbn(net: GaussianNet, fh):
    fh.write(f"gbn order {net.order} n_obs {net.n_obs} candidates {len(net.candidates)}\n")
    for w in net.candidates:
        fh.write(f"cand {w}\n")
    for node in net.nodes:
        parents = " ".join(f"{j}:{lag}:{repr(float(b))}"
                           for (j, lag), b in zip(node.parents, node.fit.beta))
        fh.write(f"node {node.index} mean {repr(node.fit.mean)} "
                 f"cond_var {repr(node.fit.cond_var)} loglik {repr(node.fit.loglik)} "
                 f"n {node.fit.n_obs} parents {parents}\n")


def load_gbn(fh) -> GaussianNet:
    head = fh.readline().split()
    if not head or head[0] != "gbn":
        raise GbnError("not a serialized network")
    order, n_obs, n_cand = int(head[2]), int(head[4]), int(head[6])
    candidates = [fh.readline().split(None, 1)[1].strip() for _ in range(n_cand)]
    nodes = []
    for line in fh:
        parts = line.split()
        if not parts or parts[0] != "node":
            continue
        index = int(parts[1])
        mean, cond_var, loglik = float(parts[3]), float(parts[5]), float(parts[7])
        n = int(parts[9])
        parents, betas = [], []
        for spec in parts[11:]:
            j, lag, b = spec.split(":")
            parents.append((int(j), int(lag)))
            betas.append(float(b))
        fit = FitResult(beta=np.array(betas), cond_var=cond_var, loglik=loglik,
                        mean=mean, parent_means=np.zeros(len(betas)), n_obs=n)
        nodes.append(NodeFit(index=index, word=candidates[index], parents=parents, fit=fit))
    return GaussianNet(candidates=candidates, order=order, nodes=nodes, n_obs=n_obs)


def save_motifs(motifs: MotifSet, fh):
    fh.write(f"motifs order {motifs.order} tau {repr(float(motifs.threshold))} "
             f"candidates {len(motifs.candidates)}\n")
    for w in motifs.candidates:
        fh.write(f"cand {w}\n")
    for m in motifs.motifs:
        cells = " ".join(f"{r}:{c}:{repr(float(v))}"
                         for (r, c), v in np.ndenumerate(m.kernel) if v != 0.0)
        fh.write(f"motif {m.node} score {repr(m.score)} cells {cells}\n")


def load_motifs(fh) -> MotifSet:
    head = fh.readline().split()
    if not head or head[0] != "motifs":
        raise GbnError("not a serialized motif set")
    order, tau, n_cand = int(head[2]), float(head[4]), int(head[6])
    candidates = [fh.readline().split(None, 1)[1].strip() for _ in range(n_cand)]
    out = MotifSet(candidates=candidates, order=order, threshold=tau)
    for line in fh:
        parts = line.split()
        if not parts or parts[0] != "motif":
            continue
        node, score = int(parts[1]), float(parts[3])
        kernel = np.zeros((order + 1, n_cand))
        for spec in parts[5:]:
            r, c, v = spec.split(":")
            kernel[int(r), int(c)] = float(v)
        out.motifs.append(Motif(node=node, word=candidates[node], kernel=kernel, score=score))
    return out
