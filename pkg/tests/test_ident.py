import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_knn, exhaustive_best_gini, gini_of_split
from scent.ident import (
    UNLABELLED,
    ClassTooSmall,
    DegenerateData,
    EmptyDataset,
    ModelSpec,
    SchemaMismatch,
    combine_observations,
    compute_metrics,
    confusion_matrix,
    feature_importance,
    kfold_cv,
    knn_predict,
    load_and_clean,
    load_model,
    pretty_feature_name,
    save_model,
    stratified_folds,
    train_forest,
    train_knn,
    train_tree,
)
from scent.ident.data import Dataset


def _blobs(seed=0, n=60, d=4, C=3, spread=0.5):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, (C, d))
    y = np.arange(n) % C
    X = centers[y] + rng.normal(0, spread, (n, d))
    return X, y


# -- trees ----------------------------------------------------------------------

def test_separable_gives_depth_one():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.0], [1.0], [3.0]])
    y = (X[:, 0] >= 0).astype(int)
    t = train_tree(X, y)
    assert t.depth == 1 and (t.predict(X) == y).all()
    assert t.threshold[0] == -0.25


def test_pure_input_single_leaf():
    t = train_tree(np.random.rand(5, 2), np.ones(5, dtype=int), n_classes=2)
    assert t.n_nodes == 1 and t.value[0].tolist() == [0.0, 1.0]


def test_xor_needs_depth_two():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    t = train_tree(X, y, min_leaf=1)
    assert t.depth == 2 and (t.predict(X) == y).all()
    # the root split is one of the optimal ones found by exhaustive search
    best = exhaustive_best_gini(X.tolist(), y.tolist(), 2)
    assert gini_of_split(X.tolist(), y.tolist(), 2, t.feature[0], t.threshold[0]) == best[0]


def test_identical_rows_mixed_labels():
    t = train_tree(np.zeros((4, 2)), np.array([0, 1, 1, 1]))
    assert t.n_nodes == 1 and t.value[0].tolist() == [0.25, 0.75]
    with pytest.raises(DegenerateData):
        train_tree(np.zeros((0, 2)), np.zeros(0, dtype=int))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 20), st.integers(1, 3), st.integers(2, 3))
def test_root_split_is_optimal(seed, n, d, C):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, d)).astype(float)
    y = rng.integers(0, C, n)
    best = exhaustive_best_gini(X.tolist(), y.tolist(), C)
    t = train_tree(X, y, n_classes=C, max_depth=1, min_leaf=1)
    if best is None or len(set(y.tolist())) == 1:
        assert t.n_nodes == 1
        return
    assert t.n_nodes == 3
    assert gini_of_split(X.tolist(), y.tolist(), C, t.feature[0], t.threshold[0]) == best[0]


def test_forest_degenerates_to_tree():
    X, y = _blobs(1)
    tree = train_tree(X, y)
    forest = train_forest(X, y, n_trees=1, bootstrap=False, m_try="all")
    Q = np.random.default_rng(2).normal(0, 3, (200, 4))
    assert (forest.predict_proba(Q) == tree.predict_proba(Q)).all()


def test_forest_probabilities_and_importance():
    X, y = _blobs(3, n=90)
    f = train_forest(X, y, n_trees=20, seed=1)
    P = f.predict_proba(X)
    assert np.allclose(P.sum(axis=1), 1, atol=1e-9) and (P >= 0).all()
    assert (f.predict(X) == y).mean() == 1.0
    assert abs(f.feature_importances.sum() - 1) <= 1e-9
    g = train_forest(X, y, n_trees=20, seed=1)
    assert (g.predict_proba(X) == P).all()


def test_importance_finds_informative_feature():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 5))
    y = (X[:, 2] > 0).astype(int)
    f = train_forest(X, y, n_trees=30)
    names = [f"c{i}" for i in range(5)]
    ranked, selected = feature_importance(f, 0.06, names)
    assert ranked[0][0] == "c2" and "c2" in selected
    assert [s for _, s in ranked] == sorted((s for _, s in ranked), reverse=True)
    assert feature_importance(f, 1.0, names)[1] == []


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.001, 0.5, 3.0, 1024.0]), st.integers(0, 3))
def test_scaling_invariance(seed, c, col):
    X, y = _blobs(seed, n=40)
    Xs = X.copy()
    Xs[:, col] *= c
    for fit in (lambda A: train_tree(A, y), lambda A: train_forest(A, y, n_trees=5, seed=seed)):
        assert (fit(X).predict(X) == fit(Xs).predict(Xs)).all()


# -- kNN --------------------------------------------------------------------------

def test_knn_examples():
    X = np.array([[0.0, 0], [1, 0], [0, 1], [5, 5]])
    y = np.array([0, 0, 1, 1])
    m = train_knn(X, y, k=1)
    assert knn_predict(m, [5, 5]).tolist() == [0.0, 1.0]
    m3 = train_knn(X, y, k=3)
    assert knn_predict(m3, [0.1, 0.1]).tolist() == pytest.approx([2 / 3, 1 / 3])


def test_knn_tie_uses_training_order():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    m = train_knn(X, np.array([1, 0, 0, 1]), k=1)
    assert m.neighbors(np.array([[0.0]]))[0].tolist() == [0]


def test_knn_matches_brute_force():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 3)) * [1, 10, 100]
    X = np.round(X, 1)  # forces distance ties
    y = rng.integers(0, 4, 300)
    m = train_knn(X, y, k=5)
    Q = np.round(rng.normal(size=(500, 3)) * [1, 10, 100], 1)
    mean, sd = X.mean(axis=0), X.std(axis=0)
    Z, QZ = ((X - mean) / sd).tolist(), ((Q - mean) / sd).tolist()
    got = m.neighbors(Q)
    for i in range(0, 500, 5):
        exp = brute_knn(Z, y, QZ[i], 5)
        d_got = sorted(math.fsum((a - b) ** 2 for a, b in zip(Z[j], QZ[i])) for j in got[i])
        d_exp = sorted(math.fsum((a - b) ** 2 for a, b in zip(Z[j], QZ[i])) for j in exp)
        assert d_got == pytest.approx(d_exp, rel=1e-12, abs=1e-12)
    assert np.allclose(m.X.mean(axis=0), 0, atol=1e-9)
    P = m.predict_proba(Q)
    assert np.allclose(P.sum(axis=1), 1)


# -- metrics and combining -----------------------------------------------------------

def test_table_two_macro_average():
    f1 = [0.93, 0.93, 0.90, 0.85, 0.83, 0.95, 0.98, 0.75, 1.00]
    assert round(sum(f1) / len(f1), 2) == 0.90


def test_metrics_hand_computed():
    cm = np.array([[5, 1, 0], [2, 3, 0], [0, 0, 0]])
    r = compute_metrics(cm, ["a", "b", "c"])
    assert r.precision[:2] == pytest.approx([5 / 7, 3 / 4])
    assert r.recall[:2] == pytest.approx([5 / 6, 3 / 5])
    assert r.precision[2] == 0 and r.f1[2] == 0
    assert r.macro_f1 == pytest.approx(np.mean(r.f1))
    assert r.accuracy == pytest.approx(8 / 11)
    assert r.weighted["f1"] == pytest.approx((6 * r.f1[0] + 5 * r.f1[1]) / 11)
    perfect = compute_metrics(np.diag([3, 4]))
    assert perfect.macro_f1 == perfect.accuracy == perfect.weighted["recall"] == 1.0
    assert "Macro Avg." in r.table()


def test_confusion_matrix():
    assert confusion_matrix([0, 1, 1, 2], [0, 1, 0, 2], 3).tolist() == [[1, 0, 0], [1, 1, 0], [0, 0, 1]]


def test_combine_examples():
    P = np.array([[0.6, 0.4], [0.3, 0.7]])
    comb, pred, _, _ = combine_observations(P, ["d", "d"], 2)
    assert comb[0].tolist() == pytest.approx([0.45, 0.55]) and pred.tolist() == [1]
    comb, pred, _, _ = combine_observations(np.array([[0.5, 0.5]]), ["d"], 1)
    assert pred.tolist() == [0]


@given(st.integers(0, 1000), st.integers(1, 6))
def test_combine_groups(seed, n):
    rng = np.random.default_rng(seed)
    rows = 40
    P = rng.dirichlet(np.ones(3), rows)
    devs = rng.choice(["a", "b", "c"], rows)
    order = rng.permutation(rows)
    comb, pred, _, gdevs = combine_observations(P, devs, n, order)
    assert len(comb) == sum(math.ceil((devs == d).sum() / n) for d in set(devs))
    if n == 1:
        assert sorted(map(tuple, comb)) == sorted(map(tuple, P))
    for d in set(devs):
        idx = np.nonzero(devs == d)[0]
        idx = idx[np.argsort(order[idx], kind="stable")]
        exp = [P[idx[i:i + n]].mean(axis=0) for i in range(0, len(idx), n)]
        got = [c for c, g in zip(comb, gdevs) if g == d]
        assert np.allclose(got, exp)


# -- CV ---------------------------------------------------------------------------

def _dataset(X, y, devices=None):
    C = int(y.max()) + 1
    devs = np.array(devices if devices is not None else [f"0x{c:04x}" for c in y])
    return Dataset(X, y, [f"k{i}" for i in range(C)], [f"f{i}" for i in range(X.shape[1])], devs,
                   np.arange(len(y)))


def test_folds_stratified_and_partition():
    y = np.repeat([0, 1, 2], [23, 31, 10])
    fold = stratified_folds(y, 10, seed=3)
    for c in range(3):
        sizes = np.bincount(fold[y == c], minlength=10)
        assert sizes.max() - sizes.min() <= 1
    assert set(fold.tolist()) == set(range(10))
    with pytest.warns(ClassTooSmall):
        stratified_folds(np.array([0] * 20 + [1] * 3), 10)


def test_kfold_every_row_once_and_deterministic():
    X, y = _blobs(4, n=80)
    ds = _dataset(X, y)
    r1 = kfold_cv(ds, ModelSpec("tree"), k=5, seed=1)
    r2 = kfold_cv(ds, ModelSpec("tree"), k=5, seed=1)
    assert (r1.proba == r2.proba).all()
    rep = r1.report(1)
    assert sum(rep.support) == len(y) and len(rep.folds) == 5
    assert sum(f["rows"] for f in rep.folds) == len(y)
    assert rep.to_dict() == r2.report(1).to_dict()
    json.dumps(rep.to_dict())


def test_kfold_no_leakage():
    # labels independent of features: held-out accuracy must stay near chance
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 2, 200)
    rep = kfold_cv(_dataset(X, y), ModelSpec("knn", {"k": 1}), k=10).report(1)
    assert rep.accuracy < 0.65


@pytest.mark.parametrize("kind", ["tree", "forest", "knn"])
def test_model_round_trip(tmp_path, kind):
    X, y = _blobs(6)
    m = ModelSpec(kind, {"n_trees": 5} if kind == "forest" else {}).fit(X, y, 3)
    p = tmp_path / "m.json"
    save_model(p, m, ["a", "b", "c"], ["f0", "f1", "f2", "f3"])
    back, classes, names = load_model(p)
    assert classes == ["a", "b", "c"] and names == ["f0", "f1", "f2", "f3"]
    assert (back.predict_proba(X) == m.predict_proba(X)).all()


# -- loading --------------------------------------------------------------------------

HEADER = "window_start_us,window_end_us,device,pan_id,n_total,n_in,n_out,mean_pkt_len_all,mean_iat_all,std_iat_all\n"


def test_load_and_clean(tmp_path):
    lines = [HEADER]
    for i in range(100):
        dev = ["0x1a01", "0x1a02", "0x1a03"][i % 3]
        iat = "" if i % 4 == 0 else "0.5"
        lines.append(f"{i * 5_000_000},{(i + 1) * 5_000_000},{dev},0x1a62,2,0,2,40.{i},{iat},{iat}\n")
    lines[50] = lines[50].replace("40.", "4x.")
    p = tmp_path / "d.csv"
    p.write_text("".join(lines))
    ds = load_and_clean([p], {"0x1A01": "plug", "0x1a02": "lamp"})
    assert len(ds) == 99
    assert ds.classes == ["lamp", "plug", UNLABELLED]
    assert ds.feature_names == ["mean_pkt_len_all", "mean_iat_all", "std_iat_all"]
    miss = ds.X[:, 1] == 5.0
    assert miss.sum() == 25 and (ds.X[miss, 2] == 0).all()
    with pytest.raises(EmptyDataset):
        load_and_clean([p], {})
    with pytest.raises(SchemaMismatch):
        load_and_clean([p], {"0x1a01": "x"}, features=["mean_iat_in"])


def test_pretty_names():
    assert pretty_feature_name("mean_iat_all") == "Mean Inter-arrival Time"
    assert pretty_feature_name("mean_pkt_len_out") == "Mean Outgoing Packet Length"
    assert pretty_feature_name("mean_payload_len_out") == "Mean Outgoing Packet Payload Length"
    assert pretty_feature_name("mean_iat_in") == "Mean Incoming Inter-arrival Time"
