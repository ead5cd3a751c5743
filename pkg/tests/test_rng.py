import numpy as np
import pytest

from dsbbench.rng import RngStream, categorical, categorical_from_logits


def test_identical_streams_reproduce_sequences():
    a = RngStream(123, key=(4, 5)).generator()
    b = RngStream(123, key=(4, 5)).generator()
    assert np.array_equal(a.random(100), b.random(100))


def test_distinct_keys_differ():
    a = RngStream(123, key=(0,)).generator().random(50)
    b = RngStream(123, key=(1,)).generator().random(50)
    assert not np.array_equal(a, b)


def test_child_paths_compose():
    assert RngStream(7).child(1).child(2) == RngStream(7, key=(1, 2))


def test_categorical_matches_probabilities():
    rng = RngStream(0).generator()
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    draws = categorical(rng, np.tile(probs, (200000, 1)))
    freq = np.bincount(draws, minlength=4) / draws.size
    assert np.abs(freq - probs).max() < 4 * np.sqrt(0.25 / draws.size)


def test_categorical_from_logits_handles_shift():
    rng1 = RngStream(3).generator()
    rng2 = RngStream(3).generator()
    logits = np.log(np.array([[0.5, 0.25, 0.25]]))
    a = categorical_from_logits(rng1, logits + 123.0)
    b = categorical_from_logits(rng2, logits)
    assert np.array_equal(a, b)


def test_categorical_from_logits_rejects_all_neg_inf():
    rng = RngStream(0).generator()
    with pytest.raises(ValueError):
        categorical_from_logits(rng, np.array([[-np.inf, -np.inf]]))


def test_point_mass_always_drawn():
    rng = RngStream(9).generator()
    logits = np.full((64, 5), -np.inf)
    logits[:, 2] = 0.0
    assert np.array_equal(categorical_from_logits(rng, logits), np.full(64, 2))
