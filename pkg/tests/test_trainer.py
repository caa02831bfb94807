import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kmclr import autograd as ag
from kmclr import synthetic
from kmclr.config import TrainConfig, load_config
from kmclr.data import load_interactions, load_kg, split_leave_one_out
from kmclr.errors import DimensionError, DivergenceError
from kmclr.evaluation import positive_ranks
from kmclr.losses import bpr_loss, total_loss
from kmclr.multibehavior import mul_cl_loss
from kmclr.trainer import VARIANTS, Trainer, combine_embeddings, train


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    synthetic.write(synthetic.SyntheticSpec(num_users=20, num_items=15, seed=1), d)
    cfg = load_config(d / "data.conf").replace(dim=8, epochs_mul=2, epochs_kg=2, epochs_main=2, kg_batch_size=16)
    g = load_interactions(cfg.interactions, cfg.behavior_list, cfg.target_behavior)
    kg = load_kg(cfg.kg, g)
    return cfg, split_leave_one_out(g, seed=0), kg


def test_combine_endpoints_and_hand_value():
    X, Y = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[-1.0, 0.0], [2.0, 8.0]])
    np.testing.assert_array_equal(combine_embeddings(X, Y, 0.0), X)
    np.testing.assert_array_equal(combine_embeddings(X, Y, 1.0), Y)
    np.testing.assert_allclose(combine_embeddings(X, Y, 0.25), [[0.5, 1.5], [2.75, 5.0]], atol=1e-15)
    t = combine_embeddings(ag.Tensor(X), ag.Tensor(Y), 0.25)
    np.testing.assert_allclose(t.value, [[0.5, 1.5], [2.75, 5.0]], atol=1e-15)
    with pytest.raises(DimensionError):
        combine_embeddings(X, Y[:1], 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_combine_linear_in_alpha(seed, a1, a2):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    mid = combine_embeddings(X, Y, (a1 + a2) / 2)
    avg = (combine_embeddings(X, Y, a1) + combine_embeddings(X, Y, a2)) / 2
    np.testing.assert_allclose(mid, avg, atol=1e-12)


def test_bpr_hand_values():
    U = ag.Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
    I = ag.Tensor(np.array([[1.0, 1.0], [0.5, 0.0], [0.0, 1.0]]))
    triples = [[0, 0, 1], [1, 2, 0], [0, 2, 1]]
    # scores: u0.i0=1, u0.i1=0.5, u1.i2=2, u1.i0=2, u0.i2=0
    expect = -(math.log(1 / (1 + math.exp(-0.5))) + math.log(0.5) + math.log(1 / (1 + math.exp(0.5))))
    assert abs(bpr_loss(U, I, triples).item() - expect) < 1e-12
    tie = bpr_loss(U, I, [[1, 2, 0]]).item()
    assert abs(tie - math.log(2)) < 1e-12
    big = ag.Tensor(np.array([[100.0, 0.0]]))
    assert bpr_loss(big, ag.Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]])), [[0, 0, 1]]).item() < 1e-80


def test_total_loss_arithmetic():
    bpr, cl = ag.Tensor([[2.0]]), ag.Tensor([[1.5]])
    w = ag.Tensor(np.array([[2.0, 0.0]]))  # squared norm 4
    assert abs(total_loss(bpr, cl, [w], 0.1, 0.01).item() - 2.19) < 1e-12
    assert total_loss(bpr, cl, [w], 0.0, 0.0).item() == 2.0
    assert total_loss(bpr, None, [ag.Tensor(np.zeros((2, 2)))], 0.1, 0.5).item() == 2.0


def test_small_lr_step_decreases_batch_loss(tiny):
    cfg, split, kg = tiny
    tr = Trainer(cfg.replace(val_fraction=0.0), split, kg)
    batch = next(tr._batches())
    m, p = tr.model, tr.params

    def loss():
        v_u, v_i, per = m.mul_forward(p)
        users = np.unique(batch[:, 0])
        cl = mul_cl_loss(per, m.mul_target, users, cfg.tau)
        return total_loss(bpr_loss(v_u, v_i, batch), cl, p.tensors("mul"), cfg.lambda_cl, cfg.lambda_reg)

    for _ in range(3):
        before = loss()
        ag.backward(before)
        # plain gradient step, lr = 1e-6
        for t in p.tensors("mul"):
            t.value = t.value - 1e-6 * t.grad
        p.zero_grad()
        with ag.no_grad():
            after = loss().item()
        ag.get_tape().clear()
        assert after < before.item()


def test_flag_semantics(tiny):
    cfg, split, kg = tiny
    res = train(cfg.replace(disable_mcl=True, disable_kcl=True), split, kg)
    assert {r["stage"] for r in res.log} == {"mul", "main"}
    for r in res.log:
        assert set(r) - {"stage", "epoch", "val_hr10"} == {"loss", "bpr", "reg"}
    full = train(cfg, split, kg)
    assert [r["stage"] for r in full.log] == ["mul"] * 2 + ["kg"] * 2 + ["main"] * 2
    assert "mul_cl" in full.log[0] and "kcl" in full.log[2] and "kg_rank" in full.log[2]
    joint = train(cfg.replace(**VARIANTS["w/o NorT"]), split, kg)
    assert [r["stage"] for r in joint.log] == ["joint"] * cfg.total_epochs
    assert {"mul_cl", "kcl", "kg_rank"} <= set(joint.log[0])
    nokcl = train(cfg.replace(**VARIANTS["w/o-Kcl"]), split, kg)
    assert "kg" not in {r["stage"] for r in nokcl.log} and nokcl.kg_frozen is None


def test_variants_table_is_composable():
    assert set(VARIANTS) == {"full", "w/o-Mcl", "w/o-Kcl", "w/o NorT"}
    combined = TrainConfig()
    for v in VARIANTS.values():
        combined = combined.replace(**v)
    assert combined.disable_mcl and combined.disable_kcl and combined.normal_training


def test_training_is_deterministic(tiny):
    cfg, split, kg = tiny
    a, b = train(cfg, split, kg), train(cfg, split, kg)
    assert a.log == b.log
    for n in a.params:
        np.testing.assert_array_equal(a.params[n].value, b.params[n].value)
    np.testing.assert_array_equal(a.user_emb, b.user_emb)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_restores_last_good_params(tiny):
    cfg, split, kg = tiny
    with pytest.raises(DivergenceError) as exc:
        train(cfg.replace(lr_mul=1e300, disable_kcl=True, epochs_mul=3), split, kg)
    res = exc.value.result
    assert all(np.all(np.isfinite(t.value)) for t in res.params.tensors())


def test_early_stopping_records_stage(tiny):
    cfg, split, kg = tiny
    res = train(cfg.replace(patience=1, epochs_mul=6, disable_kcl=True, epochs_main=1, val_fraction=0.3), split, kg)
    mul_epochs = [r for r in res.log if r["stage"] == "mul"]
    assert all("val_hr10" in r for r in mul_epochs)
    if "mul" in res.stopped_early:
        assert len(mul_epochs) == res.stopped_early["mul"] + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_ranking_invariant_to_common_scaling(seed, c):
    rng = np.random.default_rng(seed)
    U, I = rng.normal(size=(4, 3)), rng.normal(size=(9, 3))
    cand = np.array([rng.permutation(9) for _ in range(4)])
    a = positive_ranks(U, I, np.arange(4), cand)
    b = positive_ranks(c * U, c * I, np.arange(4), cand)
    np.testing.assert_array_equal(a, b)

