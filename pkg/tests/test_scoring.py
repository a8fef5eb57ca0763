import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alps.errors import UndefinedMetricError
from alps.metrics import auroc
from alps.models import Networks
from alps.scoring import ScoreSet, ScoreTriple, minmax_scale, score_images, score_sample, select_best_variant, \
    write_scores_csv


def probe(res=16):
    yy, xx = np.mgrid[0:res, 0:res]
    return (0.5 + 0.5 * np.sin(xx / 3.0) * np.cos(yy / 5.0)).astype(np.float32)[None, None]


def test_triple_is_consistent(tiny_networks):
    t = score_sample(tiny_networks, probe())
    assert t.mean == (t.plain + t.perturbed) / 2
    assert min(t.plain, t.perturbed, t.mean) >= 0


def test_perfect_reconstruction_scores_zero(tiny_model_config):
    nets = Networks.build(dataclasses.replace(tiny_model_config, delta_max=0.0), seed=0)
    # zero-initialised decoder biases give a constant 0.5 image when the code is zero
    for p in nets.encoder.parameters():
        p.data[...] = 0
    x = np.full((1, 1, 16, 16), 0.5, np.float32)
    assert score_sample(nets, x) == ScoreTriple(0.0, 0.0, 0.0)


def test_zero_delta_collapses_the_triple(tiny_model_config):
    nets = Networks.build(dataclasses.replace(tiny_model_config, delta_max=0.0), seed=1)
    t = score_sample(nets, probe())
    assert t.plain == t.perturbed == t.mean


def test_scoring_is_read_only(tiny_networks):
    before = {k: p.data.tobytes() for k, p in tiny_networks.named_parameters().items()}
    score_images(tiny_networks, np.repeat(probe(), 3, axis=0))
    after = {k: p.data.tobytes() for k, p in tiny_networks.named_parameters().items()}
    assert before == after
    assert all(p.grad is None for p in tiny_networks.named_parameters().values())


def test_batched_scoring_matches_one_at_a_time(tiny_networks):
    x = np.random.default_rng(0).uniform(0, 1, size=(7, 1, 16, 16)).astype(np.float32)
    batched = score_images(tiny_networks, x, batch_size=3)
    for i in range(7):
        single = score_sample(tiny_networks, x[i])
        assert single.plain == pytest.approx(batched.plain[i], rel=1e-6)
        assert single.perturbed == pytest.approx(batched.perturbed[i], rel=1e-6)


def test_score_sample_rejects_wrong_shape(tiny_networks):
    with pytest.raises(ValueError):
        score_sample(tiny_networks, np.zeros((2, 1, 16, 16), np.float32))
    with pytest.raises(ValueError):
        score_sample(tiny_networks, np.zeros((1, 1, 32, 32), np.float32))


# ------------------------------------------------------------- scaling


def test_minmax_examples():
    np.testing.assert_allclose(minmax_scale([2, 4, 6]), [0, 0.5, 1])
    np.testing.assert_array_equal(minmax_scale([3.3, 3.3, 3.3]), [0, 0, 0])
    with pytest.raises(ValueError):
        minmax_scale([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_minmax_preserves_order_and_range(values):
    scaled = minmax_scale(values)
    assert scaled.min() >= 0 and scaled.max() <= 1
    v = np.array(values)
    # rounding may merge nearly equal values, but never flips a pair
    i, j = np.triu_indices(len(v), 1)
    assert not np.any((v[i] < v[j]) & (scaled[i] > scaled[j]))


@given(st.lists(st.integers(-10_000, 10_000), min_size=2, max_size=50, unique=True))
def test_minmax_keeps_separated_values_strictly_ordered(values):
    scaled = minmax_scale(values)
    assert (np.argsort(values) == np.argsort(scaled)).all()
    assert len(np.unique(scaled)) == len(values)


def test_mean_is_computed_before_scaling():
    s = ScoreSet([0.0, 1.0, 4.0], [2.0, 2.0, 0.0])
    np.testing.assert_array_equal(s.mean, [1.0, 1.5, 2.0])
    assert not np.allclose(minmax_scale(s.mean), (minmax_scale(s.plain) + minmax_scale(s.perturbed)) / 2)


# ------------------------------------------------------- variant choice


def test_perfect_variant_wins():
    labels = [0, 0, 1, 1]
    s = ScoreSet([0.4, 0.1, 0.2, 0.3], [0.1, 0.2, 0.8, 0.9], labels)
    assert select_best_variant(s) == "perturbed"


def test_identical_variants_pick_plain():
    s = ScoreSet([0.1, 0.5, 0.3], [0.1, 0.5, 0.3], [0, 1, 1])
    assert select_best_variant(s) == "plain"


def test_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        select_best_variant(ScoreSet([0.1, 0.2], [0.1, 0.2], [0, 0]))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60)
def test_selection_matches_argmax_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    labels = rng.permutation(np.arange(n) % 2)
    plain, perturbed = rng.integers(0, 5, n) / 4, rng.integers(0, 5, n) / 4
    values = [auroc(plain, labels), auroc(perturbed, labels), auroc((plain + perturbed) / 2, labels)]
    expected = ["plain", "perturbed", "mean"][int(np.argmax(values))]  # argmax keeps the first maximum
    assert select_best_variant(ScoreSet(plain, perturbed, labels)) == expected


# ------------------------------------------------------------------ CSV


def test_scores_csv(tmp_path):
    s = ScoreSet([0.1, 0.3, 0.2], [0.2, 0.2, 0.6], [0, 1, 1])
    write_scores_csv(tmp_path / "s.csv", s, sample_ids=["a", "b", "c"])
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert list(rows[0]) == ["sample_id", "label", "plain", "perturbed", "mean",
                             "scaled_plain", "scaled_perturbed", "scaled_mean"]
    assert [r["sample_id"] for r in rows] == ["a", "b", "c"]
    assert float(rows[1]["mean"]) == 0.25
    assert float(rows[1]["scaled_plain"]) == 1.0 and float(rows[0]["scaled_plain"]) == 0.0


def test_score_set_alignment_checks():
    with pytest.raises(ValueError):
        ScoreSet([0.1, 0.2], [0.1])
    with pytest.raises(ValueError):
        ScoreSet([0.1, 0.2], [0.1, 0.2], [0])
    with pytest.raises(ValueError):
        ScoreSet([0.1], [0.1]).variant("median")


def test_empty_split_scores_to_empty_set(tiny_networks):
    assert len(score_images(tiny_networks, np.zeros((0, 1, 16, 16), np.float32))) == 0
