import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kmclr import autograd as ag
from kmclr.data import KnowledgeGraph
from kmclr.errors import ConfigError, ContractError, RelationLookupError, SamplerError
from kmclr.gradcheck import check_gradients
from kmclr.knowledge import (KgView, attention_weights, consistency_scores, edge_sampling_probabilities,
                             kcl_loss, kg_attention_aggregate, kg_ranking_loss, kg_view,
                             sample_negative_tails, sample_view_pair, tatec_score, transr_score,
                             view_node_embeddings)
from kmclr.optim import ModelDims, init_params


def toy_kg():
    # items 0,1; entities 2,3; relations 0 (brand), 1 (similar)
    return KnowledgeGraph(4, 2, np.array([[0, 0, 2], [1, 0, 2], [0, 1, 1], [1, 0, 3]]), num_items=2)


def toy_params(d=2, seed=0, E=4, R=2, I=3, J=2):
    return init_params(ModelDims(I, J, E, R, dim=d, layers=1), seed=seed, kg_std=0.5)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_single_and_symmetric_neighbor_weights():
    rng = np.random.default_rng(0)
    ent, rel = ag.Tensor(rng.normal(size=(3, 2))), ag.Tensor(rng.normal(size=(1, 2)))
    W1, b1 = ag.Tensor(rng.normal(size=(6, 1))), ag.Tensor([[0.3]])
    w, _ = attention_weights(ent, rel, W1, b1, np.array([0]), np.array([0]), np.array([1]), 3)
    assert w.value[0, 0] == 1.0
    ent.value[2] = ent.value[1]
    w, _ = attention_weights(ent, rel, W1, b1, np.array([0, 0]), np.array([0, 0]), np.array([1, 2]), 3)
    np.testing.assert_array_equal(w.value[:, 0], [0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_attention_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    kg = KnowledgeGraph(8, 3, np.column_stack([rng.integers(8, size=12), rng.integers(3, size=12),
                                               rng.integers(8, size=12)]), num_items=4)
    p = toy_params(d=3, seed=seed, E=8, R=3, J=4)
    view = kg_view(p, "translational")
    center, rel, nbr = kg.neighbor_edges
    w, _ = attention_weights(view.entity, view.relation, p["kg.att_W1"], p["kg.att_b1"], center, rel, nbr, 8)
    sums = np.bincount(center, weights=w.value[:, 0], minlength=8)
    np.testing.assert_allclose(sums[np.unique(center)], 1.0, atol=1e-12)


def test_aggregate_matches_direct_per_edge_oracle():
    kg = toy_kg()
    p = toy_params()
    p["kg.att_W1"].value = np.array([[0.5], [-0.2], [0.1], [0.3], [0.7], [-0.4]])
    p["kg.att_b1"].value = np.array([[0.2]])
    p["kg.att_W2"].value = np.array([[1.0, 0.5], [-0.5, 1.0]])
    p["kg.att_b2"].value = np.array([[-0.1]])
    view = kg_view(p, "semantic")
    V, Rv = view.entity.value, view.relation.value
    W1, b1, W2, b2 = (p[k].value for k in ("kg.att_W1", "kg.att_b1", "kg.att_W2", "kg.att_b2"))
    nbrs = {e: [] for e in range(4)}
    for h, r, t in kg.triples:
        nbrs[h].append((r, t))
        if h != t:
            nbrs[t].append((r, h))
    expect = np.zeros((4, 2))
    for e in range(4):
        f = [math.exp(sig(float(np.concatenate([V[e], Rv[r], V[n]]) @ W1[:, 0])) + b1[0, 0]) for r, n in nbrs[e]]
        agg = V[e] + sum(fi / sum(f) * V[n] for fi, (_, n) in zip(f, nbrs[e]))
        expect[e] = [sig(x) for x in agg @ W2 + b2[0, 0]]
    got = kg_attention_aggregate(kg, view, p, layers=1).value
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_isolated_entity_keeps_self_term():
    kg = KnowledgeGraph(3, 1, np.array([[0, 0, 1]]), num_items=1)
    p = toy_params(E=3, R=1, J=1)
    view = kg_view(p, "translational")
    got = kg_attention_aggregate(kg, view, p).value[2]
    expect = 1 / (1 + np.exp(-(view.entity.value[2] @ p["kg.att_W2"].value + p["kg.att_b2"].value[0, 0])))
    np.testing.assert_allclose(got, expect, atol=1e-15)


def make_view(variant, ent, rel, proj, diag=None):
    return KgView(variant, ag.Tensor(ent), ag.Tensor(rel), ag.Tensor(proj), None if diag is None else ag.Tensor(diag))


def test_transr_hand_values():
    v = make_view("translational", np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[0.0, 1.0]]), np.eye(2)[None])
    assert transr_score([0], [0], [1], v).item() == 0.0
    v2 = make_view("translational", np.array([[1.0, 2.0]]), np.zeros((1, 2)), np.eye(2)[None])
    assert transr_score([0], [0], [0], v2).item() == 0.0
    v3 = make_view("translational", np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 1.0]]), np.eye(2)[None])
    assert transr_score([0], [0], [1], v3).item() == -2.0
    with pytest.raises(RelationLookupError):
        transr_score([0], [1], [1], v3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_transr_nonpositive(seed):
    rng = np.random.default_rng(seed)
    v = make_view("translational", rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 3)))
    assert np.all(transr_score([0, 1, 2], [0, 1, 1], [3, 2, 0], v).value <= 0.0)


def test_tatec_hand_values():
    ent = np.array([[1.0, 2.0], [3.0, -1.0]])
    rel = np.array([[0.5, 1.0]])
    M = np.array([[[1.0, 2.0], [0.0, -1.0]]])
    D = np.array([[2.0, 3.0]])
    v = make_view("semantic", ent, rel, M, D)
    h, t, r = ent[0], ent[1], rel[0]
    bil = h[0] * (M[0, 0, 0] * t[0] + M[0, 0, 1] * t[1]) + h[1] * (M[0, 1, 0] * t[0] + M[0, 1, 1] * t[1])
    expect = bil + (h[0] * r[0] + h[1] * r[1]) + (t[0] * r[0] + t[1] * r[1]) + (h[0] * 2 * t[0] + h[1] * 3 * t[1])
    assert abs(tatec_score([0], [0], [1], v).item() - expect) < 1e-12
    zero = make_view("semantic", np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2)))
    assert tatec_score([0], [0], [1], zero).item() == 0.0
    no_bil = make_view("semantic", ent, rel, np.zeros((1, 2, 2)), np.zeros((1, 2)))
    assert abs(tatec_score([0], [0], [1], no_bil).item() - (h @ r + t @ r)) < 1e-12


def test_ranking_loss_tie_and_limits():
    v = make_view("translational", np.ones((3, 2)), np.zeros((1, 2)), np.eye(2)[None])
    assert abs(kg_ranking_loss(v, [[0, 0, 1]], [2]).item() - math.log(2)) < 1e-12
    far = make_view("translational", np.array([[0.0, 0.0], [0.0, 0.0], [30.0, 0.0]]), np.zeros((1, 2)), np.eye(2)[None])
    # true triple scores 0, corrupt scores -900
    assert kg_ranking_loss(far, [[0, 0, 1]], [2], "conventional").item() < 1e-12
    assert kg_ranking_loss(far, [[0, 0, 1]], [2], "literal").item() > 800
    with pytest.raises(ConfigError):
        kg_ranking_loss(far, [[0, 0, 1]], [2], "sideways")


def test_ranking_loss_direct_oracle():
    kg = KnowledgeGraph(5, 2, np.array([[0, 0, 1], [1, 0, 2], [2, 1, 3], [3, 1, 4], [4, 0, 0]]), num_items=2)
    rng = np.random.default_rng(5)
    v = make_view("semantic", rng.normal(size=(5, 2)), rng.normal(size=(2, 2)),
                  rng.normal(size=(2, 2, 2)), rng.normal(size=(1, 2)))
    neg = sample_negative_tails(kg, kg.triples, np.random.default_rng(0))
    for (h, r, _), tn in zip(kg.triples, neg):
        assert not kg.contains(h, r, tn)
    E, Rv, M, D = v.entity.value, v.relation.value, v.proj.value, v.diag.value[0]
    f = lambda h, r, t: E[h] @ M[r] @ E[t] + E[h] @ Rv[r] + E[t] @ Rv[r] + E[h] @ (D * E[t])
    expect = sum(-math.log(sig(f(h, r, t) - f(h, r, tn))) for (h, r, t), tn in zip(kg.triples, neg))
    assert abs(kg_ranking_loss(v, kg.triples, neg).item() - expect) < 1e-12
    again = sample_negative_tails(kg, kg.triples, np.random.default_rng(0))
    np.testing.assert_array_equal(neg, again)


def test_negative_sampler_exhaustion():
    kg = KnowledgeGraph(2, 1, np.array([[0, 0, 0], [0, 0, 1]]), num_items=1)
    with pytest.raises(SamplerError):
        sample_negative_tails(kg, [[0, 0, 0]], np.random.default_rng(0), max_tries=50)


def test_kg_gradients():
    kg = toy_kg()
    p = toy_params(d=3)
    for t in p.tensors("kg"):
        t.requires_grad = True
    neg = np.array([3, 3, 2, 0])
    for variant in ("translational", "semantic"):
        view = kg_view(p, variant)
        err = check_gradients(lambda: kg_ranking_loss(view, kg.triples, neg), p.tensors("kg"))
        assert max(err.values()) < 1e-4
        w = np.random.default_rng(1).normal(size=(4, 3))
        err = check_gradients(lambda: ag.total(ag.mul(kg_attention_aggregate(kg, view, p, 2), ag.Tensor(w))),
                              p.tensors("kg"))
        assert max(err.values()) < 1e-4


def test_consistency_rho_zero_and_replay():
    kg = toy_kg()
    p = toy_params()
    view = kg_view(p, "translational")
    c = consistency_scores(kg, view, p, 0.0, [1, 2])
    np.testing.assert_array_equal(c, 1.0)
    c1 = consistency_scores(kg, view, p, 0.5, [7, 8])
    c2 = consistency_scores(kg, view, p, 0.5, [7, 8])
    np.testing.assert_array_equal(c1, c2)
    assert np.all((c1 >= 0) & (c1 <= 1))
    with pytest.raises(ConfigError):
        consistency_scores(kg, view, p, 1.0, [1, 2])


def test_consistency_isolated_items():
    # item 1 has no KG triples at all: same self term in both subgraphs
    kg = KnowledgeGraph(3, 1, np.array([[0, 0, 2]]), num_items=2)
    p = toy_params(E=3, R=1)
    view = kg_view(p, "semantic")
    c = consistency_scores(kg, view, p, 0.5, [1, 2])
    assert c[1] == 1.0
    # item 0 loses its only triple in some subgraph pair: neutral 0.5
    seen = {float(consistency_scores(kg, view, p, 0.9, [s, s + 100])[0]) for s in range(20)}
    assert 0.5 in seen


def test_sampling_probability_examples():
    edges = np.array([[0, 0], [1, 1], [2, 2]])
    # zero embeddings give sigmoid 0.5, so c = 2P sets P directly
    zeros = np.zeros((3, 2))
    c = np.array([0.4, 1.0, 1.6])
    np.testing.assert_allclose(edge_sampling_probabilities(edges, zeros, zeros, c, 0.3, 0.7), [0.3, 0.5, 0.7],
                               atol=1e-15)
    np.testing.assert_array_equal(edge_sampling_probabilities(edges, zeros, zeros, c, 0.5, 0.5), 0.5)
    np.testing.assert_array_equal(edge_sampling_probabilities(edges, zeros, zeros, np.ones(3), 0.2, 0.6), 0.4)
    with pytest.raises(ConfigError):
        edge_sampling_probabilities(edges, zeros, zeros, c, 0.7, 0.3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1), st.sampled_from(["global", "user"]))
def test_sampling_probability_range_and_endpoints(seed, x, y, scope):
    a, b = min(x, y), max(x, y)
    rng = np.random.default_rng(seed)
    edges = np.column_stack([rng.integers(5, size=40), rng.integers(6, size=40)])
    P = edge_sampling_probabilities(edges, rng.normal(size=(5, 3)), rng.normal(size=(6, 3)),
                                    rng.random(6), a, b, scope)
    assert np.all((P >= a) & (P <= b))
    if scope == "global" and len(np.unique(P)) > 1:
        assert P.min() == a and P.max() == b


def view_setup():
    kg = toy_kg()
    p = toy_params(I=3, J=2)
    edges = np.array([[0, 0], [0, 1], [1, 0], [2, 1]])
    return kg, p, edges


def test_view_pair_extremes_and_determinism(caplog):
    kg, p, edges = view_setup()
    full = sample_view_pair(edges, kg, p, 0.1, 1.0, 1.0, seed=3)
    np.testing.assert_array_equal(full.edges1, edges)
    np.testing.assert_array_equal(full.edges2, edges)
    assert full.warnings == 0
    empty = sample_view_pair(edges, kg, p, 0.1, 0.0, 0.0, seed=3, protect_users=[0, 1])
    assert len(empty.edges1) == 0 and len(empty.edges2) == 0 and empty.warnings == 2
    a = sample_view_pair(edges, kg, p, 0.3, 0.2, 0.9, seed=11)
    b = sample_view_pair(edges, kg, p, 0.3, 0.2, 0.9, seed=11)
    for f in ("edges1", "edges2", "c1", "c2", "prob1", "prob2"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert {tuple(e) for e in a.edges1} <= {tuple(e) for e in edges}
    assert len(a.c1) == len(a.c2) == kg.num_items


def test_view_pair_save(tmp_path):
    from kmclr.data import InteractionGraph
    kg, p, edges = view_setup()
    g = InteractionGraph(3, 2, ("buy",), 0, (edges,), ("a", "b", "c"), ("x", "y"))
    sample_view_pair(edges, kg, p, 0.1, 1.0, 1.0, seed=0).save(tmp_path, g)
    assert (tmp_path / "view1_edges.tsv").read_text().splitlines()[0] == "a\tx\tview1"
    assert len((tmp_path / "consistency.tsv").read_text().splitlines()) == 2


def test_kcl_identities_and_oracle():
    same = ag.Tensor(np.ones((5, 3)))
    assert abs(kcl_loss(same, same, range(4), 0.5).item() - 4 * math.log(4)) < 1e-12
    assert kcl_loss(same, same, [2], 0.5, allow_degenerate=True).item() == 0.0
    with pytest.raises(ContractError):
        kcl_loss(same, same, [2], 0.5)
    rng = np.random.default_rng(4)
    A, B = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    expect = 0.0
    for x in range(4):
        s = [A[x] @ B[y] / (np.linalg.norm(A[x]) * np.linalg.norm(B[y])) / 0.5 for y in range(4)]
        expect -= math.log(math.exp(s[x]) / sum(math.exp(v) for v in s))
    assert abs(kcl_loss(ag.Tensor(A), ag.Tensor(B), range(4), 0.5).item() - expect) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kcl_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    A, B = ag.Tensor(rng.normal(size=(7, 3))), ag.Tensor(rng.normal(size=(7, 3)))
    batch = rng.choice(7, size=5, replace=False)
    a = kcl_loss(A, B, batch, 0.4).item()
    b = kcl_loss(A, B, rng.permutation(batch), 0.4).item()
    assert abs(a - b) < 1e-12


def test_kcl_gradient_through_views():
    rng = np.random.default_rng(6)
    U, V = ag.Tensor(rng.normal(size=(3, 3)), True, "u"), ag.Tensor(rng.normal(size=(2, 3)), True, "i")
    e1, e2 = np.array([[0, 0], [1, 1], [2, 0]]), np.array([[0, 1], [1, 1], [2, 0], [2, 1]])

    def f():
        n1 = view_node_embeddings(e1, U, V, 2)
        n2 = view_node_embeddings(e2, U, V, 2)
        return kcl_loss(n1, n2, [0, 1, 3, 4], 0.5)

    assert max(check_gradients(f, [U, V]).values()) < 1e-4
