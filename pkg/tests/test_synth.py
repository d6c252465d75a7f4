"""Synthetic generator: shared rule, disjoint entities, reconstruction."""

import json

import numpy as np
import pytest

from ctxrec.errors import ConfigError
from ctxrec.synth import SynthConfig, evaluate_rule, synth_generate


def _cfg(**kw):
    base = dict(
        n_domains=3,
        users_per_domain=20,
        items_per_domain=12,
        n_features=6,
        i_end=2,
        h_end=4,
        source_interactions=400,
        target_interactions=100,
        seed=11,
    )
    base.update(kw)
    return SynthConfig(**base)


def test_same_seed_gives_identical_datasets():
    a, rule_a = synth_generate(_cfg())
    b, rule_b = synth_generate(_cfg())
    assert json.dumps(rule_a, sort_keys=True) == json.dumps(rule_b, sort_keys=True)
    for da, db in zip(a, b):
        np.testing.assert_array_equal(da.users, db.users)
        np.testing.assert_array_equal(da.items, db.items)
        np.testing.assert_array_equal(da.contexts, db.contexts)
        if da.ratings is not None:
            np.testing.assert_array_equal(da.ratings, db.ratings)


def test_domains_share_no_raw_entity_ids():
    datasets, _ = synth_generate(_cfg())
    user_sets = [set(d.extras["user_raw_ids"].tolist()) for d in datasets]
    item_sets = [set(d.extras["item_raw_ids"].tolist()) for d in datasets]
    for i in range(len(datasets)):
        for j in range(i + 1, len(datasets)):
            assert not user_sets[i] & user_sets[j]
            assert not item_sets[i] & item_sets[j]


def test_rule_serialization_identical_across_domains():
    datasets, rule = synth_generate(_cfg())
    blobs = {json.dumps(d.extras["rule"], sort_keys=True) for d in datasets}
    assert blobs == {json.dumps(rule, sort_keys=True)}


def test_source_denser_than_targets():
    datasets, _ = synth_generate(_cfg())
    assert datasets[0].n_interactions == 400
    assert all(d.n_interactions == 100 for d in datasets[1:])


def test_sparsity_premise_enforced():
    with pytest.raises(ConfigError):
        _cfg(target_interactions=400)


def test_order1_noise_free_ratings_reconstruct_exactly():
    datasets, rule = synth_generate(
        _cfg(order=1, noise_sigma=0.0, feedback="explicit", rating_range=(0.0, 10.0))
    )
    for ds in datasets:
        t_u = ds.extras["user_traits"]
        t_v = ds.extras["item_traits"]
        mid = ds.extras["rating_mid"]
        expect = np.clip(
            mid
            + np.einsum("ij,ij->i", t_u[ds.users], t_v[ds.items])
            + evaluate_rule(rule, ds.contexts),
            0.0,
            10.0,
        )
        np.testing.assert_array_equal(ds.ratings, expect)


def test_monomial_degrees_respect_order():
    _, rule = synth_generate(_cfg(order=2))
    assert all(1 <= len(m["indices"]) <= 2 for m in rule["monomials"])
    assert all(len(set(m["indices"])) == len(m["indices"]) for m in rule["monomials"])


def test_implicit_mode_emits_no_ratings_and_skews_context():
    datasets, rule = synth_generate(_cfg(feedback="implicit", source_interactions=3000))
    src = datasets[0]
    assert src.ratings is None
    observed = evaluate_rule(rule, src.contexts).mean()
    background = evaluate_rule(
        rule, np.random.default_rng(0).random((3000, 6))
    ).mean()
    # accepted interactions favor contexts the rule scores highly
    assert observed > background


def test_novelty_skew_biases_contexts_toward_common_scores():
    datasets, rule = synth_generate(_cfg(novelty_skew=0.6, feedback="explicit"))
    assert "novelty" in rule
    src = datasets[0]
    common = rule["novelty"]["commonness"]
    observed = evaluate_rule(common, src.contexts).mean()
    background = evaluate_rule(
        common, np.random.default_rng(0).random((4000, 6))
    ).mean()
    assert observed > background + 0.05  # skewed draws favor common contexts
