"""Transfer semantics: direct copy, annealing schedule, residuals, regularizers."""

import math

import numpy as np
import pytest

from ctxrec.checkpoint import load_checkpoint, save_model
from ctxrec.core import (
    ParameterStore,
    check_gradients,
    mean,
    no_grad,
    precision,
    sum_,
    tensor,
)
from ctxrec.data import DomainDataset, split
from ctxrec.errors import ConfigError, TransferError
from ctxrec.model import ModelConfig, Recommender, residual_forward
from ctxrec.training import TrainConfig
from ctxrec.transfer import (
    SITES,
    DistRegularizer,
    TransferPlan,
    anneal_adapt,
    anneal_lr,
    collect_site_inputs,
    direct_transfer,
    drr_adapt,
    kl_rows,
    kl_standard_normal,
    train_regularizer,
)


def _dataset(domain_id, n=60, n_users=5, n_items=6, seed=0, feedback="explicit"):
    rng = np.random.default_rng(seed)
    ds = DomainDataset(
        domain_id=domain_id, n_users=n_users, n_items=n_items, feedback=feedback,
        users=rng.integers(n_users, size=n).astype(np.int64),
        items=rng.integers(n_items, size=n).astype(np.int64),
        contexts=rng.random((n, 5)),
        ratings=rng.uniform(1, 5, size=n) if feedback == "explicit" else None,
        i_end=1, h_end=3,
    )
    return split(ds, seed=seed)


def _cfg(feedback="explicit", **kw):
    base = dict(n_features=5, i_end=1, h_end=3, feedback=feedback, d=6, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def _pair(seed=0, feedback="explicit"):
    """(source model, target model, target dataset) with nontrivial params."""
    cfg = _cfg(feedback)
    src = Recommender(cfg, seed=seed)
    src.add_domain("src", 5, 6, mean_rating=3.0 if feedback == "explicit" else 0.0)
    rng = np.random.default_rng([seed, 99])
    for name in src.store.names():
        src.store[name].tensor += rng.normal(0.0, 0.1, size=src.store[name].tensor.shape)
    tgt = Recommender(cfg, seed=seed + 1)
    ds = _dataset("tgt", seed=seed + 2, feedback=feedback)
    tgt.add_domain_for(ds)
    return src, tgt, ds


# -- direct transfer ---------------------------------------------------------------


def test_direct_transfer_copies_shared_bitwise_and_keeps_embeddings():
    src, tgt, _ = _pair()
    emb_before = {n: tgt.store[n].tensor.copy() for n in tgt.store.names("m2.")}
    copied = direct_transfer(src, tgt)
    assert copied == sorted(src.shared_names())
    for n in copied:
        assert tgt.store[n].tensor.tobytes() == src.store[n].tensor.tobytes()
    for n, arr in emb_before.items():
        assert tgt.store[n].tensor.tobytes() == arr.tobytes()


def test_direct_transfer_rejects_incompatible_width():
    src, _, _ = _pair()
    other = Recommender(_cfg(n_features=5, d=7))
    other.add_domain("t", 4, 4)
    with pytest.raises(TransferError):
        direct_transfer(src, other)


def test_direct_transfer_matches_hand_assembled_model():
    src, tgt, ds = _pair()
    direct_transfer(src, tgt)
    # hand assembly: fresh model, shared values from source, embeddings from target
    assembled = Recommender(tgt.config, seed=123)
    assembled.add_domain("tgt", tgt.domains["tgt"].n_users, tgt.domains["tgt"].n_items)
    for n in src.shared_names():
        np.copyto(assembled.store[n].tensor, src.store[n].tensor)
    for n in tgt.store.names("m2.tgt"):
        np.copyto(assembled.store[n].tensor, tgt.store[n].tensor)
    idx = np.arange(10)
    a = tgt.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx])
    b = assembled.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx])
    np.testing.assert_array_equal(a, b)


def test_direct_transfer_from_checkpoint(tmp_path):
    src, tgt, _ = _pair()
    save_model(src, tmp_path / "src")
    ckpt = load_checkpoint(tmp_path / "src")
    copied = direct_transfer(ckpt, tgt)
    for n in copied:
        assert tgt.store[n].tensor.tobytes() == src.store[n].tensor.tobytes()


# -- annealing ---------------------------------------------------------------------


def test_anneal_lr_closed_form():
    assert anneal_lr(0, 0.01, 1.0) == 0.01
    assert anneal_lr(1, 0.01, math.log(2.0)) == pytest.approx(0.005)
    rates = [anneal_lr(b, 0.01, 0.3) for b in range(101)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_anneal_schedule_matches_closed_form_exactly():
    src, tgt, ds = _pair()
    direct_transfer(src, tgt)
    plan = TransferPlan(method="anneal")
    plan.anneal.eta0 = 0.02
    plan.anneal.lam = 0.25
    plan.anneal.embed_epochs = 0
    tcfg = TrainConfig(lr=0.02, batch_size=16, max_epochs=3, seed=5)
    _, schedule = anneal_adapt(tgt, ds, plan, tcfg)
    assert schedule[0][0] == 1  # batch index starts at 1 inside the epoch
    for b, rate in schedule:
        assert rate == 0.02 * math.exp(-0.25 * b)


def test_large_lambda_degenerates_to_direct_transfer():
    src, tgt, ds = _pair()
    direct_transfer(src, tgt)
    shared_before = {n: tgt.store[n].tensor.copy() for n in tgt.shared_names()}
    plan = TransferPlan(method="anneal")
    plan.anneal.lam = 50.0
    plan.anneal.embed_epochs = 0
    tcfg = TrainConfig(lr=1e-3, batch_size=16, max_epochs=1, seed=6)
    anneal_adapt(tgt, ds, plan, tcfg)
    worst = max(
        np.max(np.abs(tgt.store[n].tensor - arr)) for n, arr in shared_before.items()
    )
    assert worst < 1e-6


def test_anneal_updates_embeddings_at_full_rate():
    src, tgt, ds = _pair()
    direct_transfer(src, tgt)
    emb_before = tgt.store["m2.tgt.users"].tensor.copy()
    plan = TransferPlan(method="anneal")
    plan.anneal.lam = 50.0
    plan.anneal.embed_epochs = 0
    anneal_adapt(tgt, ds, plan, TrainConfig(lr=1e-2, batch_size=16, seed=7))
    assert np.max(np.abs(tgt.store["m2.tgt.users"].tensor - emb_before)) > 1e-4


def test_transfer_plan_validation():
    with pytest.raises(ConfigError):
        TransferPlan(method="teleport")
    plan = TransferPlan(method="anneal")
    plan.anneal.eta0 = -1.0
    with pytest.raises(ConfigError):
        TransferPlan(method="anneal", anneal=plan.anneal)


# -- residual adapters ----------------------------------------------------------------


def test_residual_zero_weights_is_identity():
    x = tensor(np.random.default_rng(0).normal(size=(4, 5)))
    out = residual_forward(x, tensor(np.zeros((5, 5))), tensor(np.zeros(5)))
    assert out.data.tobytes() == x.data.tobytes()


def test_residual_perturbation_bounded_by_one():
    rng = np.random.default_rng(1)
    x = tensor(rng.normal(size=(8, 5)))
    out = residual_forward(x, tensor(rng.normal(size=(5, 5))), tensor(rng.normal(size=5)))
    assert np.max(np.abs(out.data - x.data)) <= 1.0


def test_residual_hand_case(f64):
    out = residual_forward(tensor([1.0]), tensor([[1.0]]), tensor([0.0]))
    np.testing.assert_allclose(out.data, [1.0 + math.tanh(1.0)], rtol=1e-12)
    np.testing.assert_allclose(out.data, [1.76159416], atol=1e-8)


# -- KL -----------------------------------------------------------------------------


def test_kl_zero_at_standard_normal():
    assert float(kl_standard_normal(np.zeros(4), np.zeros(4)).data) == 0.0


def test_kl_unit_mean_half():
    assert float(kl_standard_normal(np.array([1.0]), np.array([0.0])).data) == pytest.approx(0.5)


def test_kl_nonnegative_on_random_inputs():
    rng = np.random.default_rng(2)
    for _ in range(50):
        mu = rng.normal(size=6)
        lv = rng.normal(size=6)
        assert float(kl_standard_normal(mu, lv).data) >= 0.0


def test_reparametrization_gradient_matches_fd(f64):
    store = ParameterStore()
    store.add("mu", [0.3, -0.5])
    store.add("logvar", [0.2, 0.1])
    xi = np.array([0.7, -1.1])
    reg = DistRegularizer.__new__(DistRegularizer)  # only .sample is needed

    def loss_fn():
        z = DistRegularizer.sample(reg, store.leaf("mu"), store.leaf("logvar"), xi)
        return sum_(z * z)

    report = check_gradients(store, loss_fn)
    assert report.ok, report.summary()


def test_kl_gradient_wrt_mu_matches_fd(f64):
    store = ParameterStore()
    store.add("mu", [0.3, -0.5, 0.9])
    store.add("logvar", [0.2, -0.4, 0.0])

    def loss_fn():
        return kl_standard_normal(store.leaf("mu"), store.leaf("logvar"))

    report = check_gradients(store, loss_fn)
    assert report.ok, report.summary()


# -- regularizer training ----------------------------------------------------------------


def _cone_inputs(rng, n, w, dim=2):
    basis = rng.normal(size=(w, dim))
    return np.maximum(rng.normal(size=(n, dim)) @ basis.T, 0.0) * 0.8


def test_regularizer_separates_clean_from_poisoned_on_heldout():
    rng = np.random.default_rng(3)
    store = ParameterStore()
    reg = DistRegularizer(store, "c2", 8, rng=rng)
    x = rng.normal(size=(600, 8))
    train_regularizer(x, reg, epochs=20, rng=rng, batch_size=64)
    held = rng.normal(size=(256, 8))
    with no_grad():
        mu, lv = reg.encode(tensor(held))
        kl_clean = float(kl_rows(mu, lv).data.mean())
        noise = reg.poison(tensor(held)).data
        mu2, lv2 = reg.encode(tensor(held + noise))
        kl_poison = float(kl_rows(mu2, lv2).data.mean())
    assert kl_clean < kl_poison


def test_norm_term_controls_poisoner_collapse():
    rng_data = np.random.default_rng(4)
    x = _cone_inputs(rng_data, 600, 8)

    def final_norm(include_norm, seed):
        store = ParameterStore()
        rng = np.random.default_rng(seed)
        reg = DistRegularizer(store, "c2", 8, rng=rng)
        train_regularizer(x, reg, epochs=20, rng=rng, batch_size=64,
                          include_norm_term=include_norm)
        with no_grad():
            noise = reg.poison(tensor(x[:256])).data
        return float(np.linalg.norm(noise, axis=1).mean())

    assert final_norm(False, seed=5) < 0.01  # degenerate P -> 0 without the term
    assert final_norm(True, seed=5) > 0.01


def test_regularizer_training_is_deterministic():
    x = np.random.default_rng(6).normal(size=(200, 5))

    def run():
        store = ParameterStore()
        rng = np.random.default_rng(7)
        reg = DistRegularizer(store, "gated_user", 5, rng=rng)
        train_regularizer(x, reg, epochs=3, rng=rng, batch_size=64)
        return {n: store[n].tensor.copy() for n in store.names()}

    a, b = run(), run()
    for n in a:
        np.testing.assert_array_equal(a[n], b[n])


def test_regularizer_rejects_wrong_width():
    store = ParameterStore()
    reg = DistRegularizer(store, "c2", 8, rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        train_regularizer(np.zeros((10, 5)), reg, 1, np.random.default_rng(0))


# -- DRR ---------------------------------------------------------------------------------


def _drr_setup(seed=0):
    src, tgt, ds = _pair(seed=seed)
    direct_transfer(src, tgt)
    rng = np.random.default_rng([seed, 5])
    regs = {}
    widths = {"c2": 5, "gated_user": 6, "gated_item": 6}
    for site in SITES:
        regs[site] = DistRegularizer(tgt.store, site, widths[site], rng=rng)
    return src, tgt, ds, regs


def test_zero_adapters_predict_bitwise_like_direct_transfer():
    _, tgt, ds, _ = _drr_setup()
    idx = np.arange(12)
    before = tgt.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx])
    tgt.add_adapters("tgt")
    after = tgt.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx],
                            adapters="tgt")
    assert before.tobytes() == after.tobytes()


def test_one_drr_step_changes_no_shared_parameter():
    src, tgt, ds, regs = _drr_setup()
    shared_before = {n: tgt.store[n].tensor.copy() for n in tgt.shared_names()}
    reg_before = {n: tgt.store[n].tensor.copy() for n in tgt.store.names("reg.")}
    plan = TransferPlan(method="drr")
    plan.drr.adapt_epochs = 1
    tcfg = TrainConfig(lr=1e-2, batch_size=64, seed=8)
    drr_adapt(tgt, ds, plan, regs, tcfg)
    for n, arr in shared_before.items():
        assert np.max(np.abs(tgt.store[n].tensor - arr)) == 0.0
    for n, arr in reg_before.items():
        assert np.max(np.abs(tgt.store[n].tensor - arr)) == 0.0
    # but adapters and embeddings moved
    moved = sum(
        float(np.abs(tgt.store[n].tensor).max()) for n in tgt.store.names("adapter.")
    )
    assert moved > 0.0
    assert tgt.store["m1.pool2.W"].trainable  # flags restored after the run


def test_drr_missing_regularizer_is_config_error():
    _, tgt, ds, regs = _drr_setup()
    del regs["c2"]
    with pytest.raises(ConfigError):
        drr_adapt(tgt, ds, TransferPlan(method="drr"), regs, TrainConfig())


def test_drr_new_parameters_are_exactly_adapters_plus_embeddings():
    src, tgt, ds, regs = _drr_setup()
    names_before = set(tgt.store.names())
    plan = TransferPlan(method="drr")
    plan.drr.adapt_epochs = 1
    drr_adapt(tgt, ds, plan, regs, TrainConfig(batch_size=64, seed=9))
    new_names = set(tgt.store.names()) - names_before
    assert new_names == {
        f"adapter.tgt.{site}.{p}" for site in SITES for p in ("W", "b")
    }
    d, n_feat = tgt.config.d, tgt.config.n_features
    expected = (n_feat * n_feat + n_feat) + 2 * (d * d + d)
    assert sum(tgt.store[n].tensor.size for n in new_names) == expected


def test_method_hierarchy_identical_at_step_zero():
    # direct, anneal-before-epoch, and zero-adapter drr all score identically
    src, tgt, ds = _pair(seed=3)
    direct_transfer(src, tgt)
    idx = np.arange(15)
    direct_scores = tgt.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx])
    tgt.add_adapters("tgt")
    drr_scores = tgt.score_batch("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx],
                                 adapters="tgt")
    assert direct_scores.tobytes() == drr_scores.tobytes()


def test_parameter_movement_ledger_across_methods(tmp_path):
    """Diff checkpoints: direct copies, anneal boundedly updates, drr freezes."""
    src, tgt, ds = _pair(seed=7)
    direct_transfer(src, tgt)
    save_model(tgt, tmp_path / "after_direct")
    for n in tgt.shared_names():  # direct: bitwise equal to source
        assert tgt.store[n].tensor.tobytes() == src.store[n].tensor.tobytes()

    # anneal: shared parameters move, but by no more than the summed
    # schedule times a bias-correction headroom factor per coordinate
    plan = TransferPlan(method="anneal")
    plan.anneal.eta0 = 0.01
    plan.anneal.lam = 0.5
    plan.anneal.embed_epochs = 0
    _, schedule = anneal_adapt(tgt, ds, plan, TrainConfig(lr=0.01, batch_size=16, seed=8))
    budget = sum(rate for _, rate in schedule)
    after = load_checkpoint(tmp_path / "after_direct")
    deltas = [
        float(np.max(np.abs(tgt.store[n].tensor - after.arrays[n])))
        for n in tgt.shared_names()
    ]
    assert max(deltas) > 0.0  # anneal does adapt the shared layers
    assert max(deltas) <= 3.0 * budget  # and boundedly so

    # drr: shared parameters frozen, only adapters are new
    src2, tgt2, ds2 = _pair(seed=9)
    direct_transfer(src2, tgt2)
    rng = np.random.default_rng(10)
    regs = {site: DistRegularizer(tgt2.store, site, 5 if site == "c2" else 6, rng=rng)
            for site in SITES}
    before = {n: tgt2.store[n].tensor.copy() for n in tgt2.shared_names()}
    names_before = set(tgt2.store.names())
    plan2 = TransferPlan(method="drr")
    plan2.drr.adapt_epochs = 2
    drr_adapt(tgt2, ds2, plan2, regs, TrainConfig(lr=0.01, batch_size=16, seed=11))
    assert all(np.array_equal(tgt2.store[n].tensor, arr) for n, arr in before.items())
    new = set(tgt2.store.names()) - names_before
    assert all(n.startswith("adapter.") for n in new)


def test_pre_residual_regularization_toggle():
    # with zero adapters the residual is the identity, so pre- and
    # post-residual site values coincide exactly; the toggle must still
    # train only adapters + embeddings
    src, tgt, ds, regs = _drr_setup(seed=21)
    tgt.add_adapters("tgt")
    idx = np.arange(10)
    fwd = tgt.forward("tgt", ds.users[idx], ds.items[idx], ds.contexts[idx],
                      adapters="tgt")
    assert set(fwd.sites_raw) == set(SITES)
    for site, post in (("c2", fwd.c2), ("gated_user", fwd.gated_user),
                       ("gated_item", fwd.gated_item)):
        np.testing.assert_array_equal(fwd.sites_raw[site].data, post.data)

    shared_before = {n: tgt.store[n].tensor.copy() for n in tgt.shared_names()}
    plan = TransferPlan(method="drr")
    plan.drr.adapt_epochs = 1
    plan.drr.regularize_pre_residual = True
    drr_adapt(tgt, ds, plan, regs, TrainConfig(lr=1e-2, batch_size=32, seed=22))
    assert all(np.array_equal(tgt.store[n].tensor, a) for n, a in shared_before.items())
