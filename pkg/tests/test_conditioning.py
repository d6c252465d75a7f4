"""Context-conditioned representations: gating, towers, full represent chain."""

import math

import numpy as np

from ctxrec.core import ParameterStore, check_gradients, mean, square, tensor
from ctxrec.model import ModelConfig
from ctxrec.model.conditioning import ConditioningModule, condition, tower
from ctxrec.model.context_pool import ContextModule
from ctxrec.model.embeddings import EmbeddingTable


def _cfg(**kw):
    base = dict(n_features=4, i_end=1, h_end=2, feedback="implicit", d=6,
                n_user_layers=2, n_item_layers=2, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def _module(cfg=None, seed=0):
    cfg = cfg or _cfg()
    store = ParameterStore()
    return ConditioningModule(store, cfg, np.random.default_rng(seed)), store


# -- condition -------------------------------------------------------------------


def test_zero_gate_halves_embedding():
    e = tensor([2.0, -4.0, 6.0])
    out = condition(e, tensor([0.5, 0.5]), tensor(np.zeros((3, 2))))
    np.testing.assert_allclose(out.data, [1.0, -2.0, 3.0])


def test_zero_embedding_gives_zero():
    out = condition(tensor(np.zeros(3)), tensor([1.0, 2.0]),
                    tensor(np.ones((3, 2))))
    np.testing.assert_array_equal(out.data, np.zeros(3))


def test_condition_hand_case_sigmoid_ln3(f64):
    # e=[1,2], gate=I, pooled=[0, ln 3] -> [0.5 * 1, 0.75 * 2]
    out = condition(tensor([1.0, 2.0]), tensor([0.0, math.log(3.0)]),
                    tensor(np.eye(2)))
    np.testing.assert_allclose(out.data, [0.5, 1.5], rtol=1e-12)


def test_gate_boundedness():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(10, 6))
    out = condition(tensor(e), tensor(rng.random((10, 4))),
                    tensor(rng.normal(size=(6, 4))))
    assert np.all(np.abs(out.data) <= np.abs(e) + 1e-12)


# -- tower -----------------------------------------------------------------------


def test_empty_tower_is_identity():
    x = tensor(np.arange(6.0))
    assert tower(x, []) is x


def test_identity_weight_tower_on_nonnegative():
    x = np.arange(6.0)
    out = tower(tensor(x), [(tensor(np.eye(6)), tensor(np.zeros(6)))])
    np.testing.assert_allclose(out.data, x)


def test_two_layer_tower_matches_step_oracle(f64):
    rng = np.random.default_rng(4)
    W1, b1 = rng.normal(size=(6, 6)), rng.normal(size=6)
    W2, b2 = rng.normal(size=(6, 6)), rng.normal(size=6)
    x = rng.normal(size=(3, 6))
    out = tower(tensor(x), [(tensor(W1), tensor(b1)), (tensor(W2), tensor(b2))])
    step = np.maximum(x @ W1.T + b1, 0.0)
    step = np.maximum(step @ W2.T + b2, 0.0)
    np.testing.assert_allclose(out.data, step, rtol=1e-10)


# -- represent --------------------------------------------------------------------


def test_zero_gates_empty_towers_return_half_embeddings():
    cfg = _cfg(n_user_layers=1, n_item_layers=1)
    mod, store = _module(cfg)
    store["m3.gate_user.W"].tensor[...] = 0.0
    store["m3.gate_item.W"].tensor[...] = 0.0
    emb = EmbeddingTable(store, "d", 3, 3, cfg.d, "implicit", np.random.default_rng(1))
    e_u = emb.lookup("user", [0, 1])
    e_v = emb.lookup("item", [0, 1])
    fu, fv, gu, gv = mod.represent(e_u, e_v, tensor(np.random.default_rng(2).random((2, 4))))
    np.testing.assert_allclose(fu.data, 0.5 * e_u.data, rtol=1e-6)
    np.testing.assert_allclose(fv.data, 0.5 * e_v.data, rtol=1e-6)
    np.testing.assert_allclose(gu.data, 0.5 * e_u.data, rtol=1e-6)
    np.testing.assert_allclose(gv.data, 0.5 * e_v.data, rtol=1e-6)


def test_represent_equals_manual_chain(f64):
    cfg = _cfg()
    mod, store = _module(cfg, seed=5)
    emb = EmbeddingTable(store, "d", 4, 4, cfg.d, "implicit", np.random.default_rng(6))
    pooled = tensor(np.random.default_rng(7).random((3, 4)))
    e_u = emb.lookup("user", [0, 1, 2])
    e_v = emb.lookup("item", [3, 0, 1])
    fu, fv, gu, gv = mod.represent(e_u, e_v, pooled)
    manual_gu = condition(e_u, pooled, store.leaf("m3.gate_user.W"))
    manual_fu = tower(manual_gu, mod._layers("user"))
    np.testing.assert_allclose(gu.data, manual_gu.data, rtol=1e-12)
    np.testing.assert_allclose(fu.data, manual_fu.data, rtol=1e-12)


def test_context_sensitivity_distinct_contexts_distinct_outputs():
    cfg = _cfg()
    mod, store = _module(cfg, seed=8)
    emb = EmbeddingTable(store, "d", 2, 2, cfg.d, "implicit", np.random.default_rng(9))
    rng = np.random.default_rng(10)
    p1, p2 = rng.random(4), rng.random(4)
    e_u = emb.lookup("user", [0])
    out1 = condition(e_u, tensor(p1[None, :]), store.leaf("m3.gate_user.W"))
    out2 = condition(e_u, tensor(p2[None, :]), store.leaf("m3.gate_user.W"))
    assert np.max(np.abs(out1.data - out2.data)) > 1e-6


def test_full_chain_gradients_through_embeddings(f64):
    cfg = _cfg(n_context_layers=2)
    store = ParameterStore()
    rng = np.random.default_rng(11)
    ctx_mod = ContextModule(store, cfg, rng)
    cond_mod = ConditioningModule(store, cfg, rng)
    emb = EmbeddingTable(store, "d", 3, 3, cfg.d, "implicit", rng)
    for name in store.names():
        store[name].tensor += rng.normal(0.0, 0.05, size=store[name].tensor.shape)
    contexts = rng.random((4, 4))
    users = np.array([0, 1, 2, 1])
    items = np.array([2, 0, 1, 1])

    def loss_fn():
        pooled, _ = ctx_mod.forward(tensor(contexts))
        fu, fv, _, _ = cond_mod.represent(
            emb.lookup("user", users), emb.lookup("item", items), pooled
        )
        return mean(square(fu)) + mean(square(fv))

    report = check_gradients(store, loss_fn)
    assert report.ok, report.summary()
