"""Domain-specific embedding tables and rating-bias scalars."""

import numpy as np
import pytest

from ctxrec.core import ParameterStore, backward, check_gradients, square, sum_
from ctxrec.data import DomainDataset, split
from ctxrec.errors import ConfigError
from ctxrec.model import ModelConfig, Recommender
from ctxrec.model.embeddings import EmbeddingTable


def _table(feedback="implicit", mean_rating=0.0, seed=0):
    store = ParameterStore()
    t = EmbeddingTable(store, "dom", 5, 4, 8, feedback, np.random.default_rng(seed),
                       mean_rating=mean_rating)
    return t, store


def test_lookup_returns_initialized_row():
    t, store = _table()
    row = t.lookup("user", [3]).data[0]
    np.testing.assert_array_equal(row, store["m2.dom.users"].tensor[3])


def test_lookup_out_of_range_is_index_error():
    t, _ = _table()
    with pytest.raises(IndexError):
        t.lookup("item", [4])


def test_gradient_touches_only_looked_up_rows(f64):
    t, store = _table()
    backward(sum_(square(t.lookup("user", [3]))))
    grad = store["m2.dom.users"].grad
    assert np.any(grad[3] != 0.0)
    assert np.all(np.delete(grad, 3, axis=0) == 0.0)


def test_shared_row_lookups_accumulate_additively(f64):
    t, store = _table()

    def loss_fn():
        a = t.lookup("user", [2])
        b = t.lookup("user", [2])
        return sum_(square(a)) + sum_(square(b))

    report = check_gradients(store, loss_fn, names=["m2.dom.users"])
    assert report.ok, report.summary()


def test_explicit_mode_allocates_biases_at_mean_rating():
    t, store = _table(feedback="explicit", mean_rating=3.0)
    assert float(store["m2.dom.global_bias"].tensor) == 3.0
    np.testing.assert_array_equal(store["m2.dom.user_bias"].tensor, np.zeros((5, 1)))


def test_implicit_mode_has_no_bias_scalars():
    _, store = _table(feedback="implicit")
    assert "m2.dom.global_bias" not in store
    assert "m2.dom.user_bias" not in store


def test_seeded_init_is_deterministic():
    _, a = _table(seed=4)
    _, b = _table(seed=4)
    np.testing.assert_array_equal(a["m2.dom.users"].tensor, b["m2.dom.users"].tensor)


def test_mean_rating_initialization_from_dataset():
    rng = np.random.default_rng(0)
    n = 30
    ds = DomainDataset(
        domain_id="d", n_users=4, n_items=4, feedback="explicit",
        users=rng.integers(4, size=n).astype(np.int64),
        items=rng.integers(4, size=n).astype(np.int64),
        contexts=rng.random((n, 4)), ratings=np.full(n, 3.0), i_end=1, h_end=2,
    )
    ds = split(ds, seed=0)
    model = Recommender(ModelConfig(n_features=4, i_end=1, h_end=2,
                                    feedback="explicit", d=8))
    model.add_domain_for(ds)
    assert float(model.store["m2.d.global_bias"].tensor) == pytest.approx(3.0)


def test_global_bias_shift_preserves_item_ranking():
    rng = np.random.default_rng(1)
    cfg = ModelConfig(n_features=4, i_end=1, h_end=2, feedback="explicit",
                      d=8, dropout=0.0)
    model = Recommender(cfg, seed=2)
    model.add_domain("d", 3, 6, mean_rating=3.0)
    users = np.zeros(6, dtype=np.int64)
    items = np.arange(6, dtype=np.int64)
    ctx = np.tile(rng.random(4), (6, 1))
    before = model.score_batch("d", users, items, ctx)
    model.store["m2.d.global_bias"].tensor += 5.0
    after = model.score_batch("d", users, items, ctx)
    np.testing.assert_allclose(after - before, np.full(6, 5.0), atol=1e-5)
    np.testing.assert_array_equal(np.argsort(before), np.argsort(after))


def test_duplicate_domain_registration_rejected():
    cfg = ModelConfig(n_features=4, i_end=1, h_end=2, feedback="implicit", d=8)
    model = Recommender(cfg)
    model.add_domain("d", 3, 3)
    with pytest.raises(ConfigError):
        model.add_domain("d", 3, 3)
