"""Stream identity and independence of the tagged generator factory."""

import numpy as np

from targeted_fx.rng import rng_for


def test_same_tags_same_stream():
    a = rng_for(7, "data", 3).standard_normal(100)
    b = rng_for(7, "data", 3).standard_normal(100)
    assert np.array_equal(a, b)


def test_different_tags_different_stream():
    a = rng_for(7, "data", 3).standard_normal(100)
    b = rng_for(7, "data", 4).standard_normal(100)
    c = rng_for(8, "data", 3).standard_normal(100)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_tag_types_are_distinguished():
    # integer 3 hashes as an integer, the string "3" through repr
    a = rng_for(0, 3).standard_normal(10)
    b = rng_for(0, "3").standard_normal(10)
    assert not np.array_equal(a, b)


def test_numpy_integers_match_python_integers():
    a = rng_for(0, 3).standard_normal(10)
    b = rng_for(0, np.int64(3)).standard_normal(10)
    assert np.array_equal(a, b)


def test_negative_and_huge_integer_tags():
    a = rng_for(0, -1).standard_normal(10)
    b = rng_for(0, -1).standard_normal(10)
    assert np.array_equal(a, b)
    c = rng_for(0, 2**70).standard_normal(10)
    assert c.shape == (10,)


def test_streams_independent_of_creation_order():
    first = rng_for(5, "a")
    second = rng_for(5, "b")
    draws_a = first.standard_normal(50)
    draws_b = second.standard_normal(50)
    # recreate in the opposite order
    second2 = rng_for(5, "b")
    first2 = rng_for(5, "a")
    assert np.array_equal(draws_b, second2.standard_normal(50))
    assert np.array_equal(draws_a, first2.standard_normal(50))


def test_tuple_tags_flatten_distinctly():
    # (seed, ("a", 1)) is one composite tag, (seed, "a", 1) is two
    a = rng_for(0, ("a", 1)).standard_normal(10)
    b = rng_for(0, "a", 1).standard_normal(10)
    assert not np.array_equal(a, b)
