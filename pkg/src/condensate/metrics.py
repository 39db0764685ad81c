"""Condensation diagnostics: feature map, cosine similarity, static neurons, clusters."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .nn import NetworkConfig, ParameterSet, _as_batch, hidden_outputs

INPUT_WEIGHTS = "input_weights"
LAYER_OUTPUTS = "layer_outputs"

DEFAULT_EPSILON = 0.05
DEFAULT_MEMORY_CAP = 512 * 2**20  # bytes


@dataclass
class FeaturePoint:
    theta: float
    amplitude: float
    neuron_index: int
    is_static: bool = False


def feature_point(w: float, b: float, index: int = 0, is_static: bool = False) -> FeaturePoint:
    amp = math.hypot(w, b)
    if amp == 0.0:
        return FeaturePoint(0.0, 0.0, index, is_static)
    # sign(b) * arccos(w / A), via atan2 so small |b| keeps full precision
    return FeaturePoint(float(np.sign(b)) * math.atan2(abs(b), w), amp, index, is_static)


def feature_map(params: ParameterSet, static=()) -> List[FeaturePoint]:
    """(theta_k, A_k) for every hidden neuron of a 1-D-input net."""
    w = params.weights[0]
    b = params.biases[0]
    if w.shape[1] != 1:
        raise ValueError(f"feature map needs 1-D input, got input dimension {w.shape[1]}")
    if b is None:
        raise ValueError("feature map needs biases")
    static = set(static)
    return [feature_point(float(w[k, 0]), float(b[k]), k, k in static) for k in range(w.shape[0])]


def feature_arrays(params: ParameterSet):
    """Vectorized (theta, amplitude) arrays, same convention as :func:`feature_map`."""
    w = params.weights[0][:, 0]
    b = params.biases[0]
    amp = np.hypot(w, b)
    theta = np.sign(b) * np.arctan2(np.abs(b), w)
    return np.where(amp > 0, theta, 0.0), amp


def reconstruct(theta: float, amplitude: float):
    """Inverse of the feature map: (w, b)."""
    return amplitude * math.cos(theta), amplitude * abs(math.sin(theta)) * float(np.sign(theta))


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities; rows/columns of zero vectors hold NaN."""

    values: np.ndarray
    labels: List[int]
    source: str = INPUT_WEIGHTS
    layer: int = 0
    zero_mask: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.values.shape[0]


def _cosine_from_gram(gram: np.ndarray, labels, source, layer) -> SimilarityMatrix:
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    d = gram / safe[:, None] / safe[None, :]
    np.clip(d, -1.0, 1.0, out=d)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 1.0)
    d[zero, :] = np.nan
    d[:, zero] = np.nan
    return SimilarityMatrix(d, list(labels), source, layer, zero)


def cosine_matrix(vectors, labels=None, source=INPUT_WEIGHTS, layer=0) -> SimilarityMatrix:
    """D(u_i, u_j) = u_i.u_j / (|u_i| |u_j|) for every pair of rows."""
    try:
        v = np.asarray(vectors, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("vectors must all have the same length") from exc
    if v.ndim != 2:
        raise ValueError("vectors must all have the same length")
    if v.shape[0] < 2:
        raise ValueError("need at least two vectors")
    labels = list(range(v.shape[0])) if labels is None else list(labels)
    return _cosine_from_gram(v @ v.T, labels, source, layer)


def weight_similarity(params: ParameterSet, config: NetworkConfig = None, layer: int = 0,
                      include_bias: Optional[bool] = None) -> SimilarityMatrix:
    """Cosine similarity of a hidden layer's input-weight vectors.

    Dense layers use (w_k, b_k); conv layers use the flattened kernels only.
    """
    if include_bias is None:
        include_bias = config is None or config.conv is None
    return cosine_matrix(params.neuron_vectors(layer, include_bias), source=INPUT_WEIGHTS, layer=layer)


def layer_output_vectors(params: ParameterSet, config: NetworkConfig, x, layer: int = 0,
                         memory_cap: int = DEFAULT_MEMORY_CAP) -> np.ndarray:
    """One row per hidden neuron/channel: its outputs over all samples (and positions).

    Raises MemoryError when the result would exceed ``memory_cap`` bytes; use
    :func:`output_similarity`, which streams, in that case.
    """
    x = _as_batch(config, x)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    width = config.layer_widths[layer + 1]
    per_row = x.shape[0] * (config.conv.positions if config.conv is not None else 1)
    if width * per_row * 8 > memory_cap:
        raise MemoryError(f"{width} x {per_row} output vectors exceed the memory cap; "
                          "use output_similarity, which streams")
    h = hidden_outputs(params, config, x, layer)
    if config.conv is not None:
        # (n, P, C) -> (C, n*P): sample-major then position, per channel
        return h.transpose(2, 0, 1).reshape(width, -1)
    return h.T.copy()


def output_gram(params: ParameterSet, config: NetworkConfig, x, layer: int = 0, chunk: int = 1000) -> np.ndarray:
    """Gram matrix of the layer output vectors, accumulated over sample chunks."""
    x = _as_batch(config, x)
    width = config.layer_widths[layer + 1]
    gram = np.zeros((width, width))
    for start in range(0, x.shape[0], chunk):
        h = hidden_outputs(params, config, x[start:start + chunk], layer)
        h = h.reshape(-1, width)
        gram += h.T @ h
    return gram


def output_similarity(params: ParameterSet, config: NetworkConfig, x, layer: int = 0,
                      memory_cap: int = DEFAULT_MEMORY_CAP) -> SimilarityMatrix:
    """Cosine similarity of layer output vectors; streams when they would not fit in memory."""
    x = _as_batch(config, x)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    width = config.layer_widths[layer + 1]
    per_sample = config.conv.positions if config.conv is not None else 1
    if width * x.shape[0] * per_sample * 8 <= memory_cap:
        vecs = layer_output_vectors(params, config, x, layer, memory_cap)
        gram = vecs @ vecs.T
    else:
        chunk = max(1, memory_cap // (8 * width * per_sample))
        gram = output_gram(params, config, x, layer, chunk)
    return _cosine_from_gram(gram, range(width), LAYER_OUTPUTS, layer)


def detect_static(params: ParameterSet, config: NetworkConfig, x, delta: float = 1e-12, layer: int = 0):
    """Neurons whose activation stays below ``delta`` on every input."""
    h = hidden_outputs(params, config, x, layer)
    if config.conv is not None:
        peak = h.max(axis=(0, 1))
    else:
        peak = h.max(axis=0)
    return {int(k) for k in np.nonzero(peak < delta)[0]}


class UnionFind:
    def __init__(self, size):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, u):
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u, v):
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return False
        if self.rank[ru] < self.rank[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        if self.rank[ru] == self.rank[rv]:
            self.rank[ru] += 1
        return True

    def groups(self, items):
        out = {}
        for i in items:
            out.setdefault(self.find(i), []).append(i)
        return sorted(out.values(), key=lambda g: g[0])


def components(adjacency: np.ndarray, include) -> List[List[int]]:
    """Connected components (via union-find) of the subgraph on ``include``."""
    include = list(include)
    uf = UnionFind(adjacency.shape[0])
    sub = adjacency[np.ix_(include, include)]
    ii, jj = np.nonzero(np.triu(sub, 1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        uf.union(include[i], include[j])
    return uf.groups(include)


@dataclass
class ClusterReport:
    directional_clusters: int
    axis_clusters: int
    members: List[List[int]]
    axis_members: List[List[int]]
    static_set: List[int]
    mean_abs_offdiag: float
    epsilon: float = DEFAULT_EPSILON
    excluded: List[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "directional_clusters": self.directional_clusters,
            "axis_clusters": self.axis_clusters,
            "members": self.members,
            "axis_members": self.axis_members,
            "static_set": self.static_set,
            "mean_abs_offdiag": self.mean_abs_offdiag,
            "epsilon": self.epsilon,
        }


def cluster_count(sim: SimilarityMatrix, epsilon: float = DEFAULT_EPSILON, exclude=()) -> ClusterReport:
    """Single-link clusters: edge iff D >= 1-eps (directional) or |D| >= 1-eps (axis).

    Neurons in ``exclude`` (e.g. static ones) and zero vectors are left out.
    """
    if not 0.0 < epsilon < 2.0:
        raise ValueError("epsilon must lie in (0, 2)")
    d = sim.values
    n = d.shape[0]
    exclude = {int(k) for k in exclude}
    zero = sim.zero_mask if sim.zero_mask is not None else np.zeros(n, dtype=bool)
    include = [k for k in range(n) if k not in exclude and not zero[k]]
    if not include:
        raise ValueError("every neuron is excluded; nothing to cluster")
    finite = np.nan_to_num(d, nan=0.0)
    cut = 1.0 - epsilon
    directional = components(finite >= cut, include)
    axis = components(np.abs(finite) >= cut, include)
    if len(include) > 1:
        sub = np.abs(finite[np.ix_(include, include)])
        k = len(include)
        mean_abs = float((sub.sum() - np.trace(sub)) / (k * (k - 1)))
    else:
        mean_abs = 1.0
    static = sorted(exclude)
    return ClusterReport(
        directional_clusters=len(directional),
        axis_clusters=len(axis),
        members=directional,
        axis_members=axis,
        static_set=static,
        mean_abs_offdiag=mean_abs,
        epsilon=epsilon,
        excluded=sorted(set(range(n)) - set(include)),
    )


def condensation_report(params: ParameterSet, config: NetworkConfig, x=None, layer: int = 0,
                        epsilon: float = DEFAULT_EPSILON, delta: float = 1e-12) -> ClusterReport:
    """Cluster the input-weight directions of a hidden layer, skipping static ReLU neurons."""
    sim = weight_similarity(params, config, layer)
    static = set()
    if x is not None and not config.activation.smooth:
        static = detect_static(params, config, x, delta, layer)
    if static and len(static) >= sim.size:
        static = set()
    return cluster_count(sim, epsilon, static)


def kernel_pair_fraction(sim: SimilarityMatrix, threshold: float = 0.9) -> float:
    """Fraction of off-diagonal pairs with |D| > threshold."""
    d = sim.values
    iu = np.triu_indices(d.shape[0], 1)
    vals = np.abs(d[iu])
    vals = vals[np.isfinite(vals)]
    return float(np.mean(vals > threshold)) if vals.size else 0.0

