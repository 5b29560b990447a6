"""Cross-chain consensus topics: Jensen-Shannon matching, centroid iteration
with silhouette convergence, robustness filtering, and level-1 projection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class TopicSet:
    """The topics of one chain at some layer: columns are distributions."""

    chain_id: int
    topics: np.ndarray  # (V, K), column-stochastic

    def __post_init__(self):
        self.topics = np.asarray(self.topics, float)
        if self.topics.ndim != 2:
            raise ValueError("topics must be a (V, K) matrix")
        if np.abs(self.topics.sum(axis=0) - 1.0).max() > 1e-6:
            raise ValueError("topic columns must sum to 1")


@dataclass
class ConsensusResult:
    centroids: np.ndarray        # (V, K)
    assignment: list             # per chain: centroid index -> topic index
    silhouette: float
    max_jsd: np.ndarray          # per centroid, worst matched JSD across chains
    robust: np.ndarray | None = None
    n_iterations: int = 0
    restart_chain: int = 0


def _entropy2(x: np.ndarray) -> np.ndarray:
    """Base-2 entropy along the last axis with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(x > 0, x * np.log2(x), 0.0)
    return -term.sum(axis=-1)


def jsd(p, q) -> float:
    """Jensen-Shannon distance with base-2 logs, so values live in [0, 1].

    This is the square root of the divergence; it is symmetric and satisfies
    the triangle inequality.
    """
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    div = _entropy2((p + q) / 2) - (_entropy2(p) + _entropy2(q)) / 2
    return float(np.sqrt(max(div, 0.0)))


def pairwise_jsd(points: np.ndarray) -> np.ndarray:
    """All-pairs Jensen-Shannon distances for rows of `points`."""
    X = np.asarray(points, float)
    n = X.shape[0]
    H = _entropy2(X)
    out = np.zeros((n, n))
    for i in range(n):
        mid = (X[i] + X[i:]) / 2
        div = _entropy2(mid) - (H[i] + H[i:]) / 2
        out[i, i:] = np.sqrt(np.maximum(div, 0.0))
    return out + out.T - np.diag(np.diag(out))


def cross_jsd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """JSD between rows of A (n, V) and rows of B (m, V), as an (n, m) matrix."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    HA = _entropy2(A)
    HB = _entropy2(B)
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        div = _entropy2((A[i] + B) / 2) - (HA[i] + HB) / 2
        out[i] = np.sqrt(np.maximum(div, 0.0))
    return out


def hungarian_match(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square cost matrix.

    Returns the permutation `perm` with row i matched to column perm[i].
    """
    cost = np.asarray(cost, float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def silhouette(points, labels) -> float:
    """Mean silhouette score under the JSD metric.

    Points in singleton clusters contribute 0; identical a and b contribute 0.
    """
    X = np.asarray(points, float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("need at least two clusters")
    for u in uniq:
        if (labels == u).sum() == 0:
            raise ValueError("every cluster must be non-empty")
    D = pairwise_jsd(X)
    scores = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = D[i, own].sum() / (n_own - 1)
        b = min(D[i, labels == u].mean() for u in uniq if u != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def _match_all(centroids: np.ndarray, sets: list) -> list:
    """Hungarian assignment of every chain's topics to the centroids."""
    assignment = []
    for ts in sets:
        cost = cross_jsd(centroids.T, ts.topics.T)
        assignment.append(hungarian_match(cost))
    return assignment


def consensus_topics(sets: list, num_restarts: int | None = None,
                     tol: float = 1e-6, max_iter: int = 100) -> ConsensusResult:
    """Match topics across chains and iterate centroids to consensus.

    Each restart seeds the centroids with one chain's topics, then alternates
    exact assignment (Hungarian on JSD costs) with centroid recomputation
    (normalized mean of matched topics) until the silhouette score moves by
    less than `tol`.  The restart with the best silhouette wins.
    """
    if len(sets) < 2:
        raise ValueError("need at least two chains")
    K = sets[0].topics.shape[1]
    if K < 2:
        raise ValueError("degenerate single-topic input")
    if any(ts.topics.shape != sets[0].topics.shape for ts in sets):
        raise ValueError("all chains must share the same topic shape")
    restarts = range(len(sets)) if num_restarts is None else \
        range(min(num_restarts, len(sets)))

    all_topics = np.concatenate([ts.topics.T for ts in sets], axis=0)
    best = None
    for start in restarts:
        centroids = sets[start].topics.copy()
        prev_sil = None
        for it in range(1, max_iter + 1):
            assignment = _match_all(centroids, sets)
            stacked = np.stack([sets[c].topics[:, assignment[c]]
                                for c in range(len(sets))])
            centroids = stacked.mean(axis=0)
            centroids /= centroids.sum(axis=0, keepdims=True)
            labels = np.empty(all_topics.shape[0], dtype=np.int64)
            for c, perm in enumerate(assignment):
                inv = np.empty(K, dtype=np.int64)
                inv[perm] = np.arange(K)
                labels[c * K:(c + 1) * K] = inv
            sil = silhouette(all_topics, labels)
            if prev_sil is not None and abs(sil - prev_sil) < tol:
                break
            prev_sil = sil
        assignment = _match_all(centroids, sets)
        max_jsd = np.zeros(K)
        for c, ts in enumerate(sets):
            matched = ts.topics[:, assignment[c]]
            d = np.array([jsd(centroids[:, k], matched[:, k]) for k in range(K)])
            max_jsd = np.maximum(max_jsd, d)
        result = ConsensusResult(centroids=centroids, assignment=assignment,
                                 silhouette=sil, max_jsd=max_jsd,
                                 n_iterations=it, restart_chain=start)
        if best is None or result.silhouette > best.silhouette:
            best = result
    return best


def robust_filter(result: ConsensusResult, threshold: float = 0.25,
                  mode: str = "close") -> ConsensusResult:
    """Keep centroids whose worst matched topic stays within `threshold` JSD
    in every chain (mode="close").  mode="far" inverts the comparison, which
    is the alternative literal reading of the selection rule."""
    if mode == "close":
        robust = result.max_jsd <= threshold
    elif mode == "far":
        robust = result.max_jsd >= threshold
    else:
        raise ValueError("mode must be 'close' or 'far'")
    keep = np.nonzero(robust)[0]
    return replace(
        result,
        centroids=result.centroids[:, keep],
        assignment=[perm[keep] for perm in result.assignment],
        max_jsd=result.max_jsd[keep],
        robust=robust,
    )


def project_topics(phi1: np.ndarray, phi2: np.ndarray) -> np.ndarray:
    """Project layer-2 topics onto observed features: the matrix product of
    two column-stochastic maps, itself column-stochastic."""
    phi1 = np.asarray(phi1, float)
    phi2 = np.asarray(phi2, float)
    if phi1.ndim != 2 or phi2.ndim != 2 or phi1.shape[1] != phi2.shape[0]:
        raise ValueError("dimension mismatch")
    return phi1 @ phi2
