"""Comparison baseline: skip-gram token embeddings, mean-pooled per patient,
scored by an isolation forest.

The skip-gram is trained with negative sampling on the training-split token
sequences of one channel.  Each patient becomes the arithmetic mean of its
token vectors, and an isolation forest built on the training embeddings
scores evaluation patients with ``2 ** (-E[h] / c(psi))``.

Tree subsampling is keyed by point identity (a stateless 64-bit mix of seed,
tree index and point id), so reordering the input points never changes any
point's score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import PatientSequence
from .errors import ConfigurationError, DataError, VocabularyError

__all__ = [
    "SkipGramConfig",
    "IsolationForestConfig",
    "IsolationForestModel",
    "SequenceEmbedding",
    "BaselineResult",
    "train_skipgram",
    "embed_tokens",
    "embed_sequence",
    "fit_isolation_forest",
    "score_points",
    "baseline_classify",
    "run_baseline",
    "harmonic_number",
    "average_path_length",
]

EULER_MASCHERONI = 0.5772156649


@dataclass
class SkipGramConfig:
    embed_size: int = 32
    window: int = 2
    negative_samples: int = 5
    epochs: int = 5
    lr: float = 0.025
    batch_size: int = 512
    seed: int = 0

    def validate(self) -> None:
        if self.embed_size < 1 or self.window < 1 or self.negative_samples < 1:
            raise ConfigurationError("embed_size, window and negative_samples must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def train_skipgram(
    corpus: list[np.ndarray], vocab_size: int, config: SkipGramConfig
) -> tuple[np.ndarray, list[float]]:
    """Skip-gram with negative sampling over 1-based token id sequences.

    Returns the input embedding table of shape (vocab_size + 1, embed_size)
    (row 0 unused) and the per-epoch mean pair loss.  Deterministic per seed.
    """
    config.validate()
    if not corpus:
        raise DataError("empty corpus")
    counts = np.zeros(vocab_size + 1)
    centers, contexts = [], []
    for seq in corpus:
        ids = np.asarray(seq, dtype=np.int64)
        if ids.size and (ids.min() < 1 or ids.max() > vocab_size):
            raise VocabularyError("corpus token id outside 1..vocab_size")
        np.add.at(counts, ids, 1)
        for i in range(ids.size):
            lo = max(0, i - config.window)
            hi = min(ids.size, i + config.window + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(ids[i])
                    contexts.append(ids[j])
    if (counts[1:] > 0).sum() < 2:
        raise DataError("degenerate corpus: fewer than two distinct tokens")

    rng = np.random.default_rng([config.seed, 11])
    w_in = rng.uniform(-0.5, 0.5, size=(vocab_size + 1, config.embed_size)) / config.embed_size
    w_out = np.zeros((vocab_size + 1, config.embed_size))
    if config.epochs == 0 or not centers:
        return w_in, []

    centers = np.asarray(centers, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)
    noise = counts**0.75
    noise[0] = 0.0
    noise /= noise.sum()

    history = []
    k = config.negative_samples
    for epoch in range(config.epochs):
        erng = np.random.default_rng([config.seed, 13, epoch])
        order = erng.permutation(centers.size)
        total = 0.0
        for lo in range(0, order.size, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            c, o = centers[sel], contexts[sel]
            negs = erng.choice(vocab_size + 1, size=(sel.size, k), p=noise)
            v = w_in[c]
            u_pos = w_out[o]
            u_neg = w_out[negs]
            s_pos = (v * u_pos).sum(axis=1)
            s_neg = np.einsum("be,bke->bk", v, u_neg)
            g_pos = _sigmoid(s_pos) - 1.0  # d(loss)/d(s_pos)
            g_neg = _sigmoid(s_neg)
            dv = g_pos[:, None] * u_pos + np.einsum("bk,bke->be", g_neg, u_neg)
            np.add.at(w_in, c, -config.lr * dv)
            np.add.at(w_out, o, -config.lr * g_pos[:, None] * v)
            d_neg = np.einsum("bk,be->bke", g_neg, v)
            np.add.at(w_out, negs.reshape(-1), -config.lr * d_neg.reshape(-1, config.embed_size))
            total += float(
                -np.log(np.maximum(_sigmoid(s_pos), 1e-12)).sum()
                - np.log(np.maximum(_sigmoid(-s_neg), 1e-12)).sum()
            )
        history.append(total / centers.size)
    return w_in, history


@dataclass
class SequenceEmbedding:
    patient_id: str
    vector: np.ndarray


def embed_tokens(ids, table: np.ndarray) -> np.ndarray:
    """Mean of the token vectors; order-free by construction."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size == 0:
        raise DataError("cannot embed an empty token sequence")
    if idx.min() < 1 or idx.max() >= table.shape[0]:
        raise VocabularyError("token id outside the embedding table")
    return table[idx].mean(axis=0)


def embed_sequence(seq: PatientSequence, table: np.ndarray, channel: str) -> SequenceEmbedding:
    ids = seq.channel_ids(channel)[: seq.length]
    return SequenceEmbedding(seq.patient_id, embed_tokens(ids, table))


# ---------------------------------------------------------------------------
# isolation forest


def harmonic_number(m: int) -> float:
    """H(m), exact for small m, ln(m) + gamma beyond 10."""
    if m <= 0:
        return 0.0
    if m <= 10:
        return float(sum(1.0 / i for i in range(1, m + 1)))
    return math.log(m) + EULER_MASCHERONI


def average_path_length(m: int) -> float:
    """c(m) = 2 H(m-1) - 2 (m-1) / m, the unsuccessful-search normalizer."""
    if m <= 1:
        return 0.0
    return 2.0 * harmonic_number(m - 1) - 2.0 * (m - 1) / m


@dataclass
class IsolationForestConfig:
    num_trees: int = 100
    subsample_size: int = 256

    def validate(self) -> None:
        if self.num_trees < 1 or self.subsample_size < 2:
            raise ConfigurationError("need num_trees >= 1 and subsample_size >= 2")


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "size", "depth")

    def __init__(self, feature=None, threshold=None, left=None, right=None, size=0, depth=0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.size = size
        self.depth = depth


@dataclass
class IsolationForestModel:
    trees: list[_TreeNode]
    subsample_size: int
    normalizer: float  # c(effective subsample size)


def _identity_keys(seed: int, tree: int, ids: np.ndarray) -> np.ndarray:
    """Stateless 64-bit mix so subsample membership depends only on point identity."""
    mix = np.uint64((seed * 0x9E3779B97F4A7C15 + tree * 0xD1B54A32D192ED03) % 2**64)
    x = (np.asarray(ids, dtype=np.uint64) + np.uint64(1)) * np.uint64(0xBF58476D1CE4E5B9)
    x ^= mix
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def _build_tree(x: np.ndarray, idx: np.ndarray, depth: int, limit: int, rng) -> _TreeNode:
    if depth >= limit or idx.size <= 1:
        return _TreeNode(size=idx.size, depth=depth)
    sub = x[idx]
    mins = sub.min(axis=0)
    maxs = sub.max(axis=0)
    usable = np.nonzero(maxs > mins)[0]
    if usable.size == 0:  # all remaining points identical
        return _TreeNode(size=idx.size, depth=depth)
    feature = int(rng.choice(usable))
    threshold = float(rng.uniform(mins[feature], maxs[feature]))
    go_left = x[idx, feature] < threshold
    return _TreeNode(
        feature=feature,
        threshold=threshold,
        left=_build_tree(x, idx[go_left], depth + 1, limit, rng),
        right=_build_tree(x, idx[~go_left], depth + 1, limit, rng),
        size=idx.size,
        depth=depth,
    )


def fit_isolation_forest(
    points, config: IsolationForestConfig, seed: int, point_ids=None
) -> IsolationForestModel:
    config.validate()
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = x.shape[0]
    if n < 2:
        raise DataError("isolation forest needs at least two points")
    ids = np.arange(n) if point_ids is None else np.asarray(point_ids, dtype=np.int64)
    if ids.shape != (n,):
        raise DataError("point_ids must have one id per point")
    psi = min(config.subsample_size, n)
    limit = math.ceil(math.log2(psi))
    trees = []
    for t in range(config.num_trees):
        keys = _identity_keys(seed, t, ids)
        chosen = np.argpartition(keys, psi - 1)[:psi] if psi < n else np.arange(n)
        rng = np.random.default_rng([seed, 5, t])
        trees.append(_build_tree(x, np.sort(chosen), 0, limit, rng))
    return IsolationForestModel(trees, psi, average_path_length(psi))


def _path_length(node: _TreeNode, row: np.ndarray) -> float:
    depth = 0
    while node.feature is not None:
        node = node.left if row[node.feature] < node.threshold else node.right
        depth += 1
    return depth + average_path_length(node.size)


def score_points(model: IsolationForestModel, points) -> np.ndarray:
    """Anomaly scores in (0, 1): 2 ** (-mean path length / c(psi))."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scores = np.empty(x.shape[0])
    for i, row in enumerate(x):
        mean_h = sum(_path_length(tree, row) for tree in model.trees) / len(model.trees)
        scores[i] = 2.0 ** (-mean_h / model.normalizer)
    return scores


@dataclass
class BaselineResult:
    flags: np.ndarray
    n_flagged: int
    precision: float | None
    recall: float | None


def baseline_classify(scores, labels, contamination: float) -> BaselineResult:
    """Flag the top ceil(contamination * n) scores; report precision/recall."""
    if not 0.0 < contamination < 1.0:
        raise ConfigurationError(f"contamination must be in (0, 1), got {contamination}")
    s = np.asarray(scores, dtype=np.float64)
    n_flag = math.ceil(contamination * s.size)
    order = np.argsort(-s, kind="mergesort")
    flags = np.zeros(s.size, dtype=bool)
    flags[order[:n_flag]] = True
    precision = recall = None
    if labels is not None:
        y = np.asarray(labels).astype(bool)
        hits = int((flags & y).sum())
        precision = hits / n_flag if n_flag else 0.0
        recall = hits / int(y.sum()) if y.sum() else 0.0
    return BaselineResult(flags, n_flag, precision, recall)


def run_baseline(
    train_sequences: list[PatientSequence],
    eval_sequences: list[PatientSequence],
    channel: str,
    vocab_size: int,
    sg_config: SkipGramConfig,
    if_config: IsolationForestConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings trained on the train split, forest fit there, scores for eval.

    Returns (eval scores, skip-gram epoch losses as an array).
    """
    corpus = [s.channel_ids(channel)[: s.length] for s in train_sequences]
    table, history = train_skipgram(corpus, vocab_size, sg_config)
    train_emb = np.stack([embed_sequence(s, table, channel).vector for s in train_sequences])
    eval_emb = np.stack([embed_sequence(s, table, channel).vector for s in eval_sequences])
    forest = fit_isolation_forest(train_emb, if_config, seed)
    return score_points(forest, eval_emb), np.asarray(history)
