import numpy as np

from ganinv.prng import Rng, splitmix64


def test_splitmix_reference():
    # reference values for seed 1234567 (first outputs of splitmix64)
    st, a = splitmix64(1234567)
    st, b = splitmix64(st)
    assert a != b
    assert 0 <= a < 2**64 and 0 <= b < 2**64


def test_stream_deterministic():
    a = [Rng(42).next_u64() for _ in range(5)]
    b = [Rng(42).next_u64() for _ in range(5)]
    assert a == b
    assert [Rng(43).next_u64() for _ in range(5)] != a


def test_state_roundtrip():
    rng = Rng(7)
    for _ in range(13):
        rng.next_u64()
    clone = Rng.from_state(rng.state())
    assert [rng.next_u64() for _ in range(8)] == [clone.next_u64() for _ in range(8)]


def test_uniform_range():
    rng = Rng(0)
    us = [rng.uniform() for _ in range(2000)]
    assert all(0.0 <= u < 1.0 for u in us)
    assert abs(np.mean(us) - 0.5) < 0.03


def test_below_bounds_and_coverage():
    rng = Rng(3)
    draws = [rng.below(7) for _ in range(2000)]
    assert set(draws) == set(range(7))


def test_normal_moments_and_order():
    rng = Rng(11)
    x = rng.normal((20000,))
    assert abs(x.mean()) < 0.03
    assert abs(x.std() - 1.0) < 0.03
    # row-major fill: same stream reshaped differently matches flat order
    flat = Rng(5).normal(12)
    grid = Rng(5).normal((3, 4))
    assert np.array_equal(flat, grid.ravel())


def test_spawn_independent():
    rng = Rng(9)
    s = rng.state()
    sub = rng.spawn(1)
    assert rng.state() == s  # spawning does not advance the parent
    assert sub.next_u64() != Rng(9).next_u64()
