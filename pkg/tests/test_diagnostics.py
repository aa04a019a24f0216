"""Alignment cosines, identity residuals, evolution stats, traces."""

import csv
import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gaeclust import (
    EMBED_DIM,
    CumulativeDifference,
    DataError,
    DiagnosticTrace,
    ReliableSet,
    ShapeError,
    SoftAssignment,
    StateError,
    TRACE_COLUMNS,
    all_nodes_reliable,
    backprop_theta,
    build_supervised_target,
    cosine,
    cumulative_difference,
    decomposition_residuals,
    dgae_clus_loss,
    encode,
    filter_impact,
    flatten_theta,
    graph_evolution_stats,
    init_model,
    lambda_fd,
    lambda_fr,
    lambda_prime_fd,
    lambda_prime_fr,
    make_graph,
    normalize_adjacency,
    onehot_assignment,
    passthrough_graph,
    recon_grad_z,
    student_t_assign,
    upsilon_transform,
    xi_select,
    compute_centroid_nodes,
)

from conftest import planted_partition, random_graph


def soft_from(labels, k, sharpness=0.8):
    """Soft assignment whose argmax reproduces the given labels."""
    n = labels.shape[0]
    mat = np.full((n, k), (1.0 - sharpness) / (k - 1))
    mat[np.arange(n), labels] = sharpness
    return SoftAssignment(mat, "student_t_p")


class TestLambdaFr:
    def test_exactly_one_when_pseudo_equals_truth(self, blobs3):
        model = init_model("gae", blobs3.features.shape[1], seed=0)
        p = soft_from(blobs3.labels, blobs3.k_clusters)
        got = lambda_fr(model, blobs3, p)
        assert got.value == 1.0
        assert not got.degenerate

    def test_invariant_to_pseudo_label_permutation(self, blobs3):
        # the Hungarian map reindexes truth into the prediction's space,
        # so a relabeled perfect prediction still aligns exactly
        model = init_model("gae", blobs3.features.shape[1], seed=0)
        perm = np.array([2, 0, 1])
        p = soft_from(perm[blobs3.labels], blobs3.k_clusters)
        assert lambda_fr(model, blobs3, p).value == 1.0

    def test_full_omega_equals_unrestricted(self, blobs3):
        model = init_model("gae", blobs3.features.shape[1], seed=1)
        rng = np.random.default_rng(2)
        p = soft_from(rng.integers(0, 3, blobs3.n_nodes), 3)
        full = all_nodes_reliable(blobs3.n_nodes)
        assert (lambda_fr(model, blobs3, p, omega=full).value
                == lambda_fr(model, blobs3, p).value)

    def test_omega_restriction_changes_pseudo_side_only(self, blobs3):
        model = init_model("gae", blobs3.features.shape[1], seed=1)
        rng = np.random.default_rng(3)
        noisy = blobs3.labels.copy()
        flip = rng.choice(blobs3.n_nodes, size=20, replace=False)
        noisy[flip] = (noisy[flip] + 1) % 3
        p = soft_from(noisy, 3)
        omega = ReliableSet(np.arange(0, blobs3.n_nodes, 2), np.ones(30),
                            np.zeros(30), 0.0, 0.0)
        restricted = lambda_fr(model, blobs3, p, omega=omega)
        unrestricted = lambda_fr(model, blobs3, p)
        assert restricted.value != unrestricted.value

    def test_explicit_labels_override_graph(self, blobs3):
        model = init_model("gae", blobs3.features.shape[1], seed=0)
        p = soft_from(blobs3.labels, 3)
        shuffled = np.roll(blobs3.labels, 7)
        assert lambda_fr(model, blobs3, p, labels=shuffled).value != 1.0
        assert lambda_fr(model, blobs3, p, labels=blobs3.labels).value == 1.0

    def test_requires_labels(self, blobs3):
        g = make_graph(blobs3.n_nodes, blobs3.edge_array(), features=blobs3.features,
                       k_clusters=3)
        model = init_model("gae", g.features.shape[1], seed=0)
        with pytest.raises(DataError):
            lambda_fr(model, g, soft_from(np.zeros(g.n_nodes, dtype=np.int64), 3))

    def test_dgae_without_centers(self, blobs3):
        model = init_model("dgae", blobs3.features.shape[1], seed=0)
        with pytest.raises(StateError):
            lambda_fr(model, blobs3, soft_from(blobs3.labels, 3))

    def test_dgae_perfect_pseudo_is_exactly_one(self, blobs3):
        model = init_model("dgae", blobs3.features.shape[1], seed=0)
        model.centers = np.random.default_rng(4).standard_normal((3, EMBED_DIM))
        a_prop = normalize_adjacency(blobs3, "propagation")
        z, _ = encode(model, a_prop, blobs3.features)
        p = student_t_assign(z, model.centers)
        # force truth to match the model's own hard labels
        got = lambda_fr(model, blobs3, p, labels=p.labels())
        assert got.value == 1.0

    def test_zero_embedding_degenerate(self):
        g = make_graph(6, np.array([[0, 1], [2, 3], [4, 5]]),
                       features=np.zeros((6, 2)),
                       labels=np.array([0, 0, 1, 1, 0, 1]), k_clusters=2)
        model = init_model("gae", 2, seed=0)
        got = lambda_fr(model, g, soft_from(g.labels, 2))
        assert got.degenerate
        assert got.value == 0.0


class TestExactNegation:
    def test_opposite_hard_targets_negate_kl_gradients(self):
        # a point equidistant from two centers has p = [1/2, 1/2] exactly,
        # so opposite one-hot targets produce bitwise-negated gradients
        z = np.zeros((1, 2))
        centers = np.array([[1.0, 0.0], [-1.0, 0.0]])
        p = student_t_assign(z, centers)
        assert np.array_equal(p.matrix, [[0.5, 0.5]])
        qa = onehot_assignment(np.array([0]), 2)
        qb = onehot_assignment(np.array([1]), 2)
        _, ga, _, _ = dgae_clus_loss(p, qa, z, centers)
        _, gb, _, _ = dgae_clus_loss(p, qb, z, centers)
        assert np.array_equal(ga, -gb)
        assert np.any(ga != 0.0)
        assert cosine(ga, gb).value == -1.0

    def test_backprop_is_exactly_odd(self, blobs3):
        # negating dL/dZ negates every parameter gradient bitwise, so the
        # alignment cosine reaches exactly -1 on opposing objectives
        model = init_model("gae", blobs3.features.shape[1], seed=5)
        a_prop = normalize_adjacency(blobs3, "propagation")
        z, caches = encode(model, a_prop, blobs3.features)
        g = recon_grad_z(z, blobs3.adjacency)
        fwd = flatten_theta(backprop_theta(model, caches, g))
        rev = flatten_theta(backprop_theta(model, caches, -g))
        assert np.array_equal(fwd, -rev)
        assert cosine(fwd, rev).value == -1.0


class TestLambdaFd:
    def test_exactly_one_for_identical_graphs(self, blobs3):
        model = init_model("gae", blobs3.features.shape[1], seed=0)
        ssg = passthrough_graph(blobs3.adjacency)
        got = lambda_fd(model, blobs3, ssg, passthrough_graph(blobs3.adjacency))
        assert got.value == 1.0

    def test_matches_componentwise_assembly(self, blobs3):
        model = init_model("vgae", blobs3.features.shape[1], seed=1)
        a_prop = normalize_adjacency(blobs3, "propagation")
        z, caches = encode(model, a_prop, blobs3.features)
        target = build_supervised_target(blobs3.adjacency, blobs3.labels, z,
                                         blobs3.k_clusters)
        current = passthrough_graph(blobs3.adjacency)
        g_cs = flatten_theta(backprop_theta(model, caches,
                                            recon_grad_z(z, current.adjacency)))
        g_sup = flatten_theta(backprop_theta(model, caches,
                                             recon_grad_z(z, target.adjacency)))
        expected = float(g_cs @ g_sup / (np.linalg.norm(g_cs) * np.linalg.norm(g_sup)))
        got = lambda_fd(model, blobs3, current, target)
        assert got.value == pytest.approx(expected, abs=1e-12)

    def test_rewired_graph_aligns_better_than_original(self, blobs3):
        # a partially rewired graph sits between the original and the
        # supervised target, so its alignment should not be worse
        model = init_model("gae", blobs3.features.shape[1], seed=2)
        a_prop = normalize_adjacency(blobs3, "propagation")
        z, _ = encode(model, a_prop, blobs3.features)
        target = build_supervised_target(blobs3.adjacency, blobs3.labels, z,
                                         blobs3.k_clusters)
        q = onehot_assignment(blobs3.labels, 3)
        omega = all_nodes_reliable(blobs3.n_nodes)
        pi = compute_centroid_nodes(z, q, omega, 3)
        rewired = upsilon_transform(blobs3.adjacency, q, omega, pi)
        base = lambda_fd(model, blobs3, passthrough_graph(blobs3.adjacency), target)
        improved = lambda_fd(model, blobs3, rewired, target)
        assert improved.value >= base.value


class TestPointwiseDiagnostics:
    def test_lambda_prime_fr_scalar_oracle(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((5, 3))
        a1 = sp.csr_matrix(rng.random((5, 5)) * (rng.random((5, 5)) < 0.6))
        a2 = sp.csr_matrix(rng.random((5, 5)) * (rng.random((5, 5)) < 0.6))
        for i in range(5):
            g1 = sum(a1[i, j] * (z[i] - z[j]) for j in range(5))
            g2 = sum(a2[i, j] * (z[i] - z[j]) for j in range(5))
            expected = float(np.dot(np.asarray(g1).ravel(), np.asarray(g2).ravel()))
            assert lambda_prime_fr(z, i, a1, a2) == pytest.approx(expected, rel=1e-10,
                                                                  abs=1e-12)
            assert lambda_prime_fd(z, i, a1, a2) == pytest.approx(expected, rel=1e-10,
                                                                  abs=1e-12)

    def test_filter_impact_scalar_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 3))
        a_self = sp.csr_matrix(rng.random((4, 4)))
        a_sup = sp.csr_matrix(rng.random((4, 4)))
        for i in range(4):
            h_sup = sum(a_sup[i, j] * x[j] for j in range(4))
            h_self = sum(a_self[i, j] * x[j] for j in range(4))
            expected = (np.linalg.norm(x[i] - h_sup) - np.linalg.norm(h_self - h_sup))
            assert filter_impact(x, i, a_self, a_sup) == pytest.approx(expected, rel=1e-12)

    def test_filter_impact_positive_when_aggregation_helps(self):
        # x_i far from the supervised aggregate, neighbors on it
        x = np.array([[10.0], [1.0], [1.0]])
        a = sp.csr_matrix(np.array([[0, 0.5, 0.5], [0, 0, 0], [0, 0, 0]]))
        assert filter_impact(x, 0, a, a) > 0


class TestResiduals:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2.0))
    def test_identities_hold_to_machine_precision(self, seed, gamma):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(3, 15)), int(rng.integers(2, 4))
        a = random_graph(rng, n, p=0.4)
        z = rng.standard_normal((n, 4))
        labels = rng.integers(0, k, size=n)
        out = decomposition_residuals(z, a, labels, gamma, k)
        assert out["prop1_rel"] < 1e-12
        assert out["prop2_rel"] < 1e-12
        assert out["thm1_rel"] < 1e-12

    def test_k_inferred(self):
        rng = np.random.default_rng(8)
        a = random_graph(rng, 6, p=0.5)
        z = rng.standard_normal((6, 3))
        out = decomposition_residuals(z, a, np.array([0, 1, 2, 0, 1, 2]), 0.5)
        assert out["prop2_rel"] < 1e-12


class TestEvolutionStats:
    def test_hand_case(self):
        labels = np.array([0, 0, 1, 1])
        a_orig = sp.csr_matrix(np.array([
            [0, 1, 1, 0],
            [1, 0, 0, 0],
            [1, 0, 0, 1],
            [0, 0, 1, 0],
        ], dtype=float))
        q = onehot_assignment(labels, 2)
        omega = all_nodes_reliable(4)
        z = np.array([[0.0], [0.1], [5.0], [5.1]])
        pi = compute_centroid_nodes(z, q, omega, 2)
        ssg = upsilon_transform(a_orig, q, omega, pi)
        out = graph_evolution_stats(a_orig, ssg, labels)
        # cross edge (0,2) deleted; same-cluster adds fill each pair
        assert out["links_false"] == 0
        assert out["links_deleted_false"] == 1
        assert out["links_deleted_true"] == 0
        assert out["links_added_false"] == 0
        assert out["links_total"] == out["links_true"] + out["links_false"]

    def test_passthrough_counts(self, blobs3):
        ssg = passthrough_graph(blobs3.adjacency)
        out = graph_evolution_stats(blobs3.adjacency, ssg, blobs3.labels)
        assert out["links_total"] == blobs3.n_edges
        assert out["links_added_true"] == out["links_added_false"] == 0
        assert out["links_deleted_true"] == out["links_deleted_false"] == 0
        same = sum(1 for u, v in blobs3.edge_array()
                   if blobs3.labels[u] == blobs3.labels[v])
        assert out["links_true"] == same


class TestCumulativeDifference:
    def test_hand_case(self):
        got = cumulative_difference([3.0, 1.0, 0.0], [1.0, 2.0, 0.0])
        # prefix sums of (a - b): 2, 1, 1 -> peak 2
        assert np.allclose(got.series, [1.0, 0.5, 0.5])

    def test_identical_series(self):
        got = cumulative_difference([1.0, 2.0], [1.0, 2.0])
        assert np.array_equal(got.series, [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            cumulative_difference([1.0], [1.0, 2.0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20),
           st.lists(st.floats(-100, 100), min_size=1, max_size=20))
    def test_bounded(self, a, b):
        m = min(len(a), len(b))
        got = cumulative_difference(a[:m], b[:m])
        assert np.all(np.abs(got.series) <= 1.0 + 1e-12)


class TestTrace:
    def test_append_and_column(self):
        trace = DiagnosticTrace()
        trace.append(epoch=0, acc_all=0.5, omega_size=3)
        trace.append(epoch=1, acc_all=0.75, omega_size=4)
        assert trace.column("acc_all") == [0.5, 0.75]
        assert trace.rows[0]["lambda_fr"] is None

    def test_unknown_column_rejected(self):
        trace = DiagnosticTrace()
        with pytest.raises(DataError):
            trace.append(epoch=0, accuracy=1.0)
        with pytest.raises(DataError):
            trace.column("accuracy")

    def test_csv_layout(self, tmp_path):
        trace = DiagnosticTrace()
        trace.append(epoch=0, acc_all=0.5, lambda_fr=0.9)
        trace.to_csv(tmp_path / "t.csv")
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TRACE_COLUMNS
        row = dict(zip(rows[0], rows[1]))
        assert row["epoch"] == "0"
        assert row["lambda_fr"] == "0.9"
        assert row["nmi"] == ""  # unset columns serialize empty

    def test_summary_and_json(self, tmp_path):
        trace = DiagnosticTrace()
        assert trace.summary() == {"epochs": 0}
        trace.append(epoch=0, acc_all=0.4, nmi=0.1, ari=0.0, omega_size=2, links_total=9)
        trace.append(epoch=1, acc_all=0.9, nmi=0.8, ari=0.7, omega_size=5, links_total=7)
        s = trace.summary()
        assert s["epochs"] == 2
        assert s["final_acc"] == 0.9
        assert s["best_epoch_acc"] == 0.9
        assert s["final_omega_size"] == 5
        trace.to_json(tmp_path / "t.json")
        assert json.loads((tmp_path / "t.json").read_text()) == s
