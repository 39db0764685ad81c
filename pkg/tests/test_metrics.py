import itertools
import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from condensate.activations import get_activation
from condensate.metrics import (
    ClusterReport,
    UnionFind,
    cluster_count,
    cosine_matrix,
    detect_static,
    feature_arrays,
    feature_map,
    feature_point,
    layer_output_vectors,
    output_similarity,
    reconstruct,
)
from condensate.nn import ConvSpec, InitSpec, NetworkConfig, ParameterSet, init_parameters

from conftest import make_net


def transitive_closure_components(adj, include):
    """Oracle: boolean Warshall closure, then group by reachability rows."""
    include = list(include)
    k = len(include)
    reach = np.array([[adj[i, j] or i == j for j in include] for i in include], dtype=bool)
    for mid in range(k):
        reach = reach | (reach[:, [mid]] & reach[[mid], :])
    groups = {tuple(np.nonzero(row)[0]) for row in reach}
    return sorted([[include[i] for i in g] for g in groups], key=lambda g: g[0])


class TestFeatureMap:
    @pytest.mark.parametrize("w,b,theta,amp", [
        (1.0, 0.0, 0.0, 1.0),
        (0.0, 1.0, math.pi / 2, 1.0),
        (-1.0, -1.0, -3 * math.pi / 4, math.sqrt(2)),
    ])
    def test_examples(self, w, b, theta, amp):
        fp = feature_point(w, b)
        assert fp.theta == pytest.approx(theta, abs=1e-15)
        assert fp.amplitude == pytest.approx(amp, rel=1e-15)

    def test_zero_neuron(self):
        fp = feature_point(0.0, 0.0)
        assert fp.theta == 0.0 and fp.amplitude == 0.0

    def test_rejects_multidimensional_input(self):
        config, p = make_net((2, 3, 1))
        with pytest.raises(ValueError):
            feature_map(p)

    def test_vectorized_matches_scalar(self):
        config, p = make_net((1, 20, 1), seed=3)
        theta, amp = feature_arrays(p)
        pts = feature_map(p, static={4})
        assert pts[4].is_static and not pts[3].is_static
        np.testing.assert_allclose(theta, [q.theta for q in pts], atol=1e-15)
        np.testing.assert_allclose(amp, [q.amplitude for q in pts], rtol=1e-15)

    @settings(max_examples=200)
    @given(w=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6))
    @example(w=857.0, b=0.03125)  # arccos(w / A) lost ~7 digits here
    def test_reconstruct_roundtrip(self, w, b):
        fp = feature_point(w, b)
        w2, b2 = reconstruct(fp.theta, fp.amplitude)
        scale = max(1.0, fp.amplitude)
        assert abs(w2 - w) <= 1e-12 * scale
        assert abs(b2 - b) <= 1e-12 * scale


class TestCosine:
    def test_examples(self):
        u = np.array([0.3, -1.2, 2.0])
        assert cosine_matrix([u, u]).values[0, 1] == pytest.approx(1.0, abs=1e-15)
        assert cosine_matrix([u, -u]).values[0, 1] == pytest.approx(-1.0, abs=1e-15)
        assert cosine_matrix([[1.0, 0.0], [0.0, 1.0]]).values[0, 1] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_matrix([[1.0, 2.0], [1.0, 2.0, 3.0]])

    def test_needs_two_vectors(self):
        with pytest.raises(ValueError):
            cosine_matrix([[1.0, 2.0]])

    def test_zero_vector_sentinel(self):
        sim = cosine_matrix([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        assert sim.zero_mask.tolist() == [False, True, False]
        assert np.all(np.isnan(sim.values[1]))
        report = cluster_count(sim, 0.05)
        assert report.excluded == [1]

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3))
    def test_invariants(self, seed, c):
        v = np.random.default_rng(seed).normal(size=(6, 4))
        d = cosine_matrix(v).values
        assert np.array_equal(d, d.T)
        assert np.all(np.diag(d) == 1.0)
        assert np.all(np.abs(d) <= 1.0 + 1e-12)
        scaled = v.copy()
        scaled[2] *= c
        np.testing.assert_allclose(cosine_matrix(scaled).values, d, atol=1e-14)
        flipped = v.copy()
        flipped[2] *= -1
        d2 = cosine_matrix(flipped).values
        np.testing.assert_allclose(d2[2, [0, 1, 3, 4, 5]], -d[2, [0, 1, 3, 4, 5]], atol=1e-15)


class TestOutputVectors:
    def test_dense_single_sample(self, rng):
        config, p = make_net((3, 5, 1), "tanh")
        x = rng.normal(size=(1, 3))
        vecs = layer_output_vectors(p, config, x)
        direct = np.tanh(x @ p.weights[0].T + p.biases[0]).T
        np.testing.assert_array_equal(vecs, direct)
        sim = output_similarity(p, config, x)
        np.testing.assert_allclose(sim.values, cosine_matrix(direct).values, atol=1e-15)

    def test_identical_kernels(self, rng):
        config = NetworkConfig((1, 4, 10), get_activation("tanh"), 1.0, InitSpec.direct(0.3, 0.3, 1),
                               conv=ConvSpec(3, (8, 8), 1))
        p = init_parameters(config)
        p.weights[0][2] = p.weights[0][0]
        p.biases[0][2] = p.biases[0][0]
        x = rng.random((5, 8, 8))
        sim = output_similarity(p, config, x)
        assert sim.values[0, 2] == pytest.approx(1.0, abs=1e-14)
        vecs = layer_output_vectors(p, config, x)
        assert vecs.shape == (4, 5 * 64)

    def test_streaming_matches_materialized(self, rng):
        config = NetworkConfig((1, 6, 10), get_activation("tanh"), 1.0, InitSpec.direct(0.3, 0.3, 4),
                               conv=ConvSpec(3, (10, 10), 1))
        p = init_parameters(config)
        x = rng.random((40, 10, 10))
        full = output_similarity(p, config, x)
        streamed = output_similarity(p, config, x, memory_cap=6 * 100 * 8 * 3)
        np.testing.assert_allclose(streamed.values, full.values, atol=1e-13)
        with pytest.raises(MemoryError):
            layer_output_vectors(p, config, x, memory_cap=1000)

    def test_mnist_shape_bookkeeping(self):
        # 70000 samples x 28 x 28 positions per channel with same-padding
        spec = ConvSpec(3, (28, 28), 1)
        assert spec.out_shape == (28, 28)
        assert 70000 * spec.positions == 54_880_000


class TestStatic:
    def test_examples(self):
        config, p = make_net((1, 2, 1), "relu")
        p.weights[0][:, 0] = [0.0, 0.0]
        p.biases[0][:] = [-1.0, 1.0]
        assert detect_static(p, config, np.linspace(-1, 1, 11)[:, None], 1e-12) == {0}


class TestClusters:
    def test_identical_vectors(self):
        v = np.tile([0.2, -0.4, 1.0], (7, 1))
        r = cluster_count(cosine_matrix(v), 0.05)
        assert r.directional_clusters == 1 and r.axis_clusters == 1
        assert r.mean_abs_offdiag == pytest.approx(1.0)

    def test_orthogonal_vectors(self):
        r = cluster_count(cosine_matrix(np.eye(5)), 0.5)
        assert r.directional_clusters == 5
        assert r.mean_abs_offdiag == 0.0

    def test_opposite_pair_axis(self):
        v = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-3.0, 0.0]])
        r = cluster_count(cosine_matrix(v), 0.05)
        assert r.directional_clusters == 2 and r.axis_clusters == 1

    def test_exclusion(self):
        v = np.eye(4)
        r = cluster_count(cosine_matrix(v), 0.05, exclude={1, 3})
        assert r.directional_clusters == 2
        assert r.static_set == [1, 3]
        with pytest.raises(ValueError):
            cluster_count(cosine_matrix(v), 0.05, exclude={0, 1, 2, 3})

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            cluster_count(cosine_matrix(np.eye(2)), 0.0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10**6), m=st.integers(2, 12), eps=st.floats(0.01, 1.9))
    def test_union_find_equals_transitive_closure(self, seed, m, eps):
        v = np.random.default_rng(seed).normal(size=(m, 2))
        sim = cosine_matrix(v)
        r = cluster_count(sim, eps)
        assert r.members == transitive_closure_components(sim.values >= 1 - eps, range(m))
        assert r.axis_members == transitive_closure_components(np.abs(sim.values) >= 1 - eps, range(m))
        assert 1 <= r.directional_clusters <= m
        assert r.axis_clusters <= r.directional_clusters

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10**6), e1=st.floats(0.01, 1.0), e2=st.floats(0.01, 1.0))
    def test_monotone_in_epsilon(self, seed, e1, e2):
        e1, e2 = sorted((e1, e2))
        sim = cosine_matrix(np.random.default_rng(seed).normal(size=(10, 3)))
        assert cluster_count(sim, e1).directional_clusters >= cluster_count(sim, e2).directional_clusters

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(9, 2))
        perm = rng.permutation(9)
        a = cluster_count(cosine_matrix(v), 0.1)
        b = cluster_count(cosine_matrix(v[perm]), 0.1)
        assert (a.directional_clusters, a.axis_clusters) == (b.directional_clusters, b.axis_clusters)
        assert a.mean_abs_offdiag == pytest.approx(b.mean_abs_offdiag, rel=1e-12)


def test_union_find_basic():
    uf = UnionFind(5)
    assert uf.union(0, 1) and uf.union(3, 4) and not uf.union(1, 0)
    assert uf.groups(range(5)) == [[0, 1], [2], [3, 4]]
