"""Ward hierarchical clustering of pixel spectra.

Linkage uses the nearest-neighbour-chain algorithm on a dense matrix of
squared Euclidean dissimilarities, updated with the Lance-Williams Ward
recurrence.  The resulting merge list is sorted by height and uses the
scipy linkage-matrix convention: leaves are ``0..n-1`` and the cluster
created by merge ``t`` gets id ``n + t``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import ParameterError, ShapeError, check_array, check_positive_int
from .hypercube import flatten
from .preprocess import SGParams, second_derivative_cube


@dataclass
class Dendrogram:
    """Ward merge tree.

    ``merges`` has one row ``(id_a, id_b, height, size)`` per merge, with
    non-decreasing heights.
    """

    merges: np.ndarray
    n_leaves: int

    def __post_init__(self):
        self.merges = np.asarray(self.merges, dtype=np.float64).reshape(-1, 4)
        if self.merges.shape[0] != self.n_leaves - 1:
            raise ShapeError(f"{self.merges.shape[0]} merges for {self.n_leaves} leaves")

    @property
    def heights(self):
        return self.merges[:, 2]

    def to_linkage(self):
        """Copy in scipy ``linkage`` matrix layout (usable by ``scipy.cluster.hierarchy``)."""
        return self.merges.copy()


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    means: np.ndarray
    sizes: np.ndarray
    dendrogram: Dendrogram | None = None

    def to_dict(self):
        return {"k": int(self.k), "sizes": [int(s) for s in self.sizes], "labels": [int(v) for v in self.labels]}


def ward_linkage(features):
    """Ward agglomeration of the rows of ``features`` by nearest-neighbour chain."""
    X = check_array(features, "features", ndim=2)
    n = X.shape[0]
    if n < 2:
        raise ParameterError(f"need at least 2 observations, got {n}")
    D = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    # label of the cluster held in each slot; a slot always contains its own leaf
    ids = np.arange(n)
    active = np.ones(n, dtype=bool)
    raw = []  # (leaf_a, leaf_b, height, size) in chain order
    chain = []
    next_id = n
    while len(raw) < n - 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        a = chain[-1]
        row = D[a]
        dmin = row.min()
        cand = np.flatnonzero(row == dmin)
        b = int(cand[np.argmin(ids[cand])]) if cand.size > 1 else int(cand[0])
        if len(chain) > 1 and row[chain[-2]] <= dmin:
            b = chain[-2]
        if len(chain) > 1 and b == chain[-2]:
            chain.pop()
            chain.pop()
            h = D[a, b]
            na, nb = size[a], size[b]
            keep, drop = (a, b) if a < b else (b, a)
            others = active.copy()
            others[[a, b]] = False
            nk = size[others]
            upd = ((na + nk) * D[a, others] + (nb + nk) * D[b, others] - nk * h) / (na + nb + nk)
            D[keep, others] = upd
            D[others, keep] = upd
            D[drop, :] = np.inf
            D[:, drop] = np.inf
            active[drop] = False
            size[keep] = na + nb
            raw.append((keep, drop, h, na + nb))
            ids[keep] = next_id
            next_id += 1
        else:
            chain.append(b)
    return _relabel(raw, n)


def _relabel(raw, n):
    """Sort chain-order merges by height and assign scipy-style cluster ids."""
    heights = np.array([m[2] for m in raw])
    order = np.argsort(heights, kind="stable")
    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    cluster_of_root = np.arange(n)
    merges = np.empty((n - 1, 4))
    for t, idx in enumerate(order):
        la, lb, h, sz = raw[idx]
        ra, rb = find(la), find(lb)
        ca, cb = cluster_of_root[ra], cluster_of_root[rb]
        merges[t] = (min(ca, cb), max(ca, cb), h, sz)
        parent[rb] = ra
        cluster_of_root[ra] = n + t
    return Dendrogram(merges, n)


def cut_dendrogram(dendrogram, k):
    """Flat labels from undoing the last ``k - 1`` merges.

    Labels are numbered in order of first appearance along the leaf index.
    """
    n = dendrogram.n_leaves
    k = check_positive_int(k, "k")
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of leaves {n}")
    parent = np.arange(2 * n - 1)
    for t in range(n - k):
        a, b = int(dendrogram.merges[t, 0]), int(dendrogram.merges[t, 1])
        parent[a] = n + t
        parent[b] = n + t
    roots = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = i
        path = []
        while parent[j] != j:
            path.append(j)
            j = parent[j]
        for q in path:
            parent[q] = j
        roots[i] = j
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse]


def cluster_means(spectra, labels, k):
    spectra = np.asarray(spectra, dtype=np.float64)
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((k, spectra.shape[1]))
    np.add.at(sums, labels, spectra)
    return sums / np.maximum(sizes, 1)[:, None], sizes


def _maxabs_normalize(F):
    scale = np.max(np.abs(F), axis=1, keepdims=True)
    return F / np.where(scale > 0, scale, 1.0)


def cluster_pipeline(cube, sg=SGParams(), k=3, normalize=False):
    """Ward clustering of SG second-derivative spectra; means over raw spectra.

    With ``normalize=True`` each derivative spectrum is scaled by its maximum
    absolute value before clustering.
    """
    k = check_positive_int(k, "k")
    features = flatten(second_derivative_cube(cube, sg))
    if normalize:
        features = _maxabs_normalize(features)
    dendro = ward_linkage(features)
    labels = cut_dendrogram(dendro, k)
    means, sizes = cluster_means(flatten(cube), labels, k)
    return ClusterResult(labels, k, means, sizes, dendro)


def _confusion(a, b, k):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ShapeError(f"label arrays differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ParameterError("empty labelings")
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= k:
        raise ParameterError(f"labels must lie in [0, {k})")
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (a, b), 1)
    return C


def match_labels(a, b, k):
    """Permutation ``pi`` maximizing ``#{p : a_p == pi[b_p]}``; returns ``(pi, matches)``."""
    C = _confusion(a, b, k)
    if k <= 6:
        best, best_pi = -1, None
        for pi in itertools.permutations(range(k)):
            score = sum(C[pi[j], j] for j in range(k))
            if score > best:
                best, best_pi = score, pi
        return np.array(best_pi), int(best)
    rows, cols = linear_sum_assignment(-C)
    pi = np.empty(k, dtype=np.int64)
    pi[cols] = rows
    return pi, int(C[rows, cols].sum())


def label_agreement(a, b, k):
    """Fraction of pixels with equal labels under the best relabelling of ``b``."""
    _, matches = match_labels(a, b, k)
    return matches / len(a)


class WardClustering(ClusterMixin, BaseEstimator):
    """Ward agglomerative clustering cut at ``n_clusters``.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    dendrogram_ : Dendrogram
    """

    def __init__(self, n_clusters=3):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        X = check_array(X, ndim=2)
        self.dendrogram_ = ward_linkage(X)
        self.labels_ = cut_dendrogram(self.dendrogram_, self.n_clusters)
        self.n_features_in_ = X.shape[1]
        return self
