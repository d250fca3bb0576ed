import numpy as np
import pytest

from evognas.engine import (
    compile_plan,
    forward,
    init_params,
    load_params,
    loss_and_grads,
    macro_f1,
    propagate,
    save_params,
    transform,
)
from evognas.genome import P_VARIANTS, parse
from evognas.graphdata import GraphDataset, generate_sbm
from evognas.tuning import HyperparamConfig


def plain_hp(hidden=8, lr=0.01, wd=0.0):
    return HyperparamConfig(
        hidden_dim=hidden, forward_dropout=0.0, middle_dropout=0.0,
        overall_dropout=0.0, learning_rate=lr, weight_decay=wd,
    )


def tiny_graph(edges, n, f=1, seed=0):
    rng = np.random.default_rng(seed)
    return GraphDataset(
        n_nodes=n,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=rng.normal(size=(n, f)),
        labels=np.zeros(n, dtype=np.int64),
        n_classes=2,
    )


def dense_aggregate(variant, h, edges, n):
    """Brute-force per-node reference aggregator."""
    nbrs = {v: [] for v in range(n)}
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    if variant == "gcn":
        a_hat = np.eye(n)
        for u, v in edges:
            a_hat[u, v] = a_hat[v, u] = 1.0
        d = a_hat.sum(axis=1)
        out = np.zeros_like(h)
        for v in range(n):
            for u in range(n):
                if a_hat[v, u]:
                    out[v] += h[u] / np.sqrt(d[v] * d[u])
        return out
    out = np.zeros_like(h)
    for v in range(n):
        closed = np.array([v] + nbrs[v])
        if variant == "sage_mean":
            out[v] = h[closed].mean(axis=0)
        elif variant == "sage_sum":
            out[v] = h[closed].sum(axis=0)
        elif variant == "sage_max":
            out[v] = h[closed].max(axis=0)
    return out


# --- parameter-count arithmetic -----------------------------------------


def test_compile_param_count_example():
    plan = compile_plan(parse("P1-T1"), plain_hp(hidden=8), in_dim=5, n_classes=3)
    assert plan.n_params == 5 * 8 + (8 * 8 + 8) + (8 * 3 + 3) == 139


def test_compile_all_propagation_genome_has_no_hidden_weights():
    plan = compile_plan(parse("P1-P2-P3"), plain_hp(hidden=8), in_dim=5, n_classes=3)
    assert plan.n_params == 5 * 8 + 8 * 3 + 3
    assert [n for n, _ in plan.param_shapes] == ["w_in", "w_out", "b_out"]


def test_compile_repeated_transform_variants_get_independent_weights():
    plan = compile_plan(parse("T2-T2"), plain_hp(hidden=4), in_dim=2, n_classes=2)
    names = [n for n, _ in plan.param_shapes]
    assert names == ["w_in", "w_0", "b_0", "w_1", "b_1", "w_out", "b_out"]
    params = init_params(plan, np.random.default_rng(0))
    assert not np.array_equal(params[1], params[3])


# --- propagation ----------------------------------------------------------


def test_gcn_single_edge_pair():
    ds = tiny_graph([[0, 1]], 2)
    adj = ds.normalized()
    out = propagate("gcn", np.array([[1.0], [3.0]]), adj)
    assert np.allclose(out, [[2.0], [2.0]])


def test_sage_mean_preserves_constant_features():
    ds = generate_sbm([8, 8], 0.4, 0.1, 2, 0.2, seed=3)
    adj = ds.normalized()
    h = np.full((16, 3), 7.5)
    for _ in range(4):  # identity at every depth
        h = propagate("sage_mean", h, adj)
        assert np.allclose(h, 7.5)


def test_sage_max_isolated_node_self_fallback():
    ds = tiny_graph([[0, 1]], 3)
    adj = ds.normalized()
    out = propagate("sage_max", np.array([[1.0], [3.0], [7.0]]), adj)
    assert out[2, 0] == 7.0


def test_all_variants_match_dense_oracle_on_random_graphs():
    rng = np.random.default_rng(99)
    for trial in range(50):
        ds = generate_sbm([7, 8], 0.4, 0.15, 2, 0.5, seed=trial)
        adj = ds.normalized()
        h = rng.normal(size=(15, 6))
        for variant in P_VARIANTS:
            got = propagate(variant, h, adj)
            want = dense_aggregate(variant, h, ds.edges, 15)
            assert np.abs(got - want).max() < 1e-10, variant


# --- transformation -------------------------------------------------------


def test_transform_linear_identity():
    h = np.random.default_rng(1).normal(size=(4, 3))
    out = transform("linear", np.eye(3), np.zeros(3), h)
    assert np.array_equal(out, h)


def test_transform_sigmoid_of_zero_is_half():
    h = np.random.default_rng(2).normal(size=(4, 3))
    out = transform("sigmoid", np.zeros((3, 3)), np.zeros(3), h)
    assert np.allclose(out, 0.5)


def test_transform_relu6_clamps():
    h = np.array([[-1.0, 3.0, 9.0]])
    out = transform("relu6", np.eye(3), np.zeros(3), h)
    assert np.allclose(out, [[0.0, 3.0, 6.0]])


# --- macro-F1 --------------------------------------------------------------


def confusion_matrix_f1(pred, truth, n_classes):
    """Independent confusion-matrix implementation."""
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return float(np.mean(scores))


def test_macro_f1_perfect_prediction():
    truth = np.array([0, 1, 2, 1, 0, 2])
    assert macro_f1(truth, truth, 3) == 1.0


def test_macro_f1_worked_example():
    assert macro_f1(np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1]), 2) == 0.5


def test_macro_f1_absent_class_counts_as_zero():
    pred = np.array([0, 0, 1, 1])
    truth = np.array([0, 0, 1, 1])
    assert macro_f1(pred, truth, 3) == pytest.approx(2.0 / 3.0)


def test_macro_f1_rejects_empty_and_mismatched_input():
    with pytest.raises(ValueError):
        macro_f1(np.array([], dtype=int), np.array([], dtype=int), 2)
    with pytest.raises(ValueError):
        macro_f1(np.array([0]), np.array([0, 1]), 2)


def test_macro_f1_matches_confusion_matrix_oracle():
    rng = np.random.default_rng(44)
    for _ in range(1_000):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 200))
        pred = rng.integers(0, c, size=n)
        truth = rng.integers(0, c, size=n)
        assert abs(macro_f1(pred, truth, c) - confusion_matrix_f1(pred, truth, c)) < 1e-12


# --- forward-pass properties -----------------------------------------------


def test_log_softmax_rows_normalize():
    ds = generate_sbm([6, 6], 0.3, 0.1, 3, 0.4, seed=5)
    plan = compile_plan(parse("P1-T3-P2"), plain_hp(), ds.n_features, 2)
    params = init_params(plan, np.random.default_rng(8))
    logp = forward(plan, params, ds.features, ds.normalized())
    assert np.abs(np.exp(logp).sum(axis=1) - 1.0).max() < 1e-9


def test_eval_forward_is_deterministic():
    ds = generate_sbm([6, 6], 0.3, 0.1, 3, 0.4, seed=6)
    plan = compile_plan(parse("P1-T1-T4"), plain_hp(), ds.n_features, 2)
    params = init_params(plan, np.random.default_rng(9))
    a = forward(plan, params, ds.features, ds.normalized())
    b = forward(plan, params, ds.features, ds.normalized())
    assert np.array_equal(a, b)


def test_predictions_are_permutation_equivariant():
    rng = np.random.default_rng(12)
    ds = generate_sbm([6, 6], 0.4, 0.1, 4, 0.5, seed=12)
    perm = rng.permutation(12)
    inv = np.argsort(perm)
    permuted = GraphDataset(
        n_nodes=12,
        edges=np.sort(perm[ds.edges], axis=1),
        features=ds.features[inv],
        labels=ds.labels[inv],
        n_classes=ds.n_classes,
    )
    genome = parse("P3-T5-P2-T1")
    plan = compile_plan(genome, plain_hp(), ds.n_features, ds.n_classes)
    params = init_params(plan, np.random.default_rng(7))
    logp = forward(plan, params, ds.features, ds.normalized())
    logp_perm = forward(plan, params, permuted.features, permuted.normalized())
    # node v of the original graph is node perm[v] of the permuted graph
    assert np.abs(logp_perm[perm] - logp).max() < 1e-12


# --- gradients --------------------------------------------------------------


def finite_difference_grads(plan, params, features, adj, labels, mask, step=1e-5):
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = loss_and_grads(plan, params, features, adj, labels, mask)
            flat[i] = orig - step
            lo, _ = loss_and_grads(plan, params, features, adj, labels, mask)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def test_gradients_match_finite_differences_sample():
    # the full 32-pairing sweep runs in the acceptance suite
    rng = np.random.default_rng(42)
    ds = generate_sbm([5, 5], 0.5, 0.2, 4, 1.0, seed=7)
    adj = ds.normalized()
    features = rng.normal(size=(10, 4))
    labels = rng.integers(0, 3, size=10)
    mask = np.ones(10, dtype=bool)
    for text in ("P3-T7-P3", "P2-T3-P2", "P1-T8-P1", "P4-T4-P4"):
        plan = compile_plan(parse(text), plain_hp(hidden=5), 4, 3)
        params = init_params(plan, np.random.default_rng(3))
        _, analytic = loss_and_grads(plan, params, features, adj, labels, mask)
        numeric = finite_difference_grads(plan, params, features, adj, labels, mask)
        assert max_relative_error(analytic, numeric) < 1e-4, text


def test_gradients_with_dropout_masks_match_finite_differences():
    from evognas.engine import make_dropout_masks

    rng = np.random.default_rng(4)
    ds = generate_sbm([5, 5], 0.5, 0.2, 4, 1.0, seed=8)
    adj = ds.normalized()
    features = rng.normal(size=(10, 4))
    labels = rng.integers(0, 2, size=10)
    mask = np.ones(10, dtype=bool)
    hp = HyperparamConfig(hidden_dim=5, learning_rate=0.01, weight_decay=0.0)
    plan = compile_plan(parse("P1-T1-P2-T5"), hp, 4, 2)
    params = init_params(plan, np.random.default_rng(5))
    drop = make_dropout_masks(plan, 10, np.random.default_rng(6))

    def fd():
        grads = []
        for p in params:
            g = np.zeros_like(p)
            flat, gflat = p.ravel(), g.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-5
                hi, _ = loss_and_grads(plan, params, features, adj, labels, mask, drop)
                flat[i] = orig - 1e-5
                lo, _ = loss_and_grads(plan, params, features, adj, labels, mask, drop)
                flat[i] = orig
                gflat[i] = (hi - lo) / 2e-5
            grads.append(g)
        return grads

    _, analytic = loss_and_grads(plan, params, features, adj, labels, mask, drop)
    assert max_relative_error(analytic, fd()) < 1e-4


# --- parameter persistence ---------------------------------------------------


def test_params_round_trip_through_flat_binary(tmp_path):
    plan = compile_plan(parse("P1-T6-T2"), plain_hp(hidden=6), 4, 3)
    params = init_params(plan, np.random.default_rng(11))
    path = tmp_path / "model.bin"
    save_params(path, plan, params)
    loaded = load_params(path)
    for (name, _), p in zip(plan.param_shapes, params):
        assert np.array_equal(loaded[name], p)
