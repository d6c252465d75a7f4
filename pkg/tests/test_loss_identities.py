"""Loss values under forced scores, and abort-on-NaN behavior."""

import numpy as np
import pytest

from ctxrec.core import ParameterStore, Tensor, tensor
from ctxrec.data import DomainDataset, split
from ctxrec.errors import CtxrecError
from ctxrec.model import ForwardResult, ModelConfig, Recommender
from ctxrec.model.scoring import LossConfig, ScoringHead, loss_implicit
from ctxrec.training import TrainConfig, train_model


class _ForcedScores:
    """Duck-typed model returning preset scores: positives 1, corruptions 0.

    loss_implicit builds one combined forward over [positives, item
    negatives, context negatives]; the first `n_pos` rows are positives.
    """

    def __init__(self, n_pos, pos_value=1.0, neg_value=0.0):
        self.n_pos = n_pos
        self.pos_value = pos_value
        self.neg_value = neg_value
        store = ParameterStore()
        cfg = ModelConfig(n_features=4, i_end=1, h_end=2, feedback="implicit", d=4)
        self.head = ScoringHead(store, cfg)

    def forward(self, domain, users, items, contexts, training=False, rng=None,
                adapters=None):
        n = len(users)
        scores = np.full(n, self.neg_value)
        scores[: self.n_pos] = self.pos_value
        z = tensor(np.zeros((n, 2)))
        return ForwardResult(score=tensor(scores), s_c=None, pooled=z, c2=z,
                             gated_user=z, gated_item=z, final_user=z, final_item=z)


def _tiny_implicit(n=10, seed=0):
    rng = np.random.default_rng(seed)
    ds = DomainDataset(
        domain_id="d", n_users=3, n_items=4, feedback="implicit",
        users=rng.integers(3, size=n).astype(np.int64),
        items=rng.integers(4, size=n).astype(np.int64),
        contexts=rng.random((n, 4)), ratings=None, i_end=1, h_end=2,
    )
    return split(ds, seed=seed)


def test_perfect_scores_give_exactly_zero_loss(f64):
    ds = _tiny_implicit()
    batch = ds.split_indices("train")[:4]
    cfg = LossConfig(feedback="implicit", context_bias=False, attenuation=False,
                     n_item_neg=2, n_ctx_neg=2)
    model = _ForcedScores(n_pos=len(batch))
    loss, reported = loss_implicit(model, ds, batch, cfg, np.random.default_rng(1))
    assert reported == 0.0
    assert float(loss.data) == 0.0


def test_all_zero_scores_give_exactly_loss_one(f64):
    # single positive scoring 0 with one zero-scoring negative family
    ds = _tiny_implicit()
    batch = ds.split_indices("train")[:1]
    cfg = LossConfig(feedback="implicit", context_bias=False, attenuation=False,
                     n_item_neg=1, n_ctx_neg=0)
    model = _ForcedScores(n_pos=1, pos_value=0.0, neg_value=0.0)
    loss, reported = loss_implicit(model, ds, batch, cfg, np.random.default_rng(2))
    assert reported == 1.0  # (1 - 0)^2 + 0^2


def test_training_aborts_on_non_finite_loss():
    rng = np.random.default_rng(3)
    n = 12
    ds = DomainDataset(
        domain_id="d", n_users=3, n_items=4, feedback="explicit",
        users=rng.integers(3, size=n).astype(np.int64),
        items=rng.integers(4, size=n).astype(np.int64),
        contexts=rng.random((n, 4)),
        ratings=rng.uniform(1, 5, size=n), i_end=1, h_end=2,
    )
    ds = split(ds, fractions=(0.8, 0.1, 0.1), seed=3)
    model = Recommender(ModelConfig(n_features=4, i_end=1, h_end=2,
                                    feedback="explicit", d=4, dropout=0.0))
    model.add_domain_for(ds)
    ds.ratings[ds.split_indices("train")[0]] = np.nan
    with pytest.raises((CtxrecError, FloatingPointError)):
        train_model(model, ds, TrainConfig(batch_size=8, max_epochs=2), early_stop=False)
