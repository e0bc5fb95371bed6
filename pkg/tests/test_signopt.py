import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitvote import (NumericsError, ProtocolError, SignVector, UsageError,
                       apply_vote, fedavg_aggregate, fedprox_local_grad,
                       majority_vote, sign_compress)


def test_sign_compress_zero_rule():
    sv = sign_compress(np.array([0.3, -2.0, 0.0]))
    assert np.array_equal(sv.signs(), [1, -1, -1])


def test_sign_compress_nan_rejected():
    with pytest.raises(NumericsError):
        sign_compress(np.array([1.0, np.nan]))


@settings(max_examples=30, derandomize=True)
@given(st.integers(min_value=1, max_value=1000), st.integers(min_value=0, max_value=10**6))
def test_codec_roundtrip(length, seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1, 1], size=length).astype(np.int8)
    sv = SignVector.from_signs(signs)
    assert np.array_equal(SignVector.decode(sv.encode()).signs(), signs)


def test_wire_sizes():
    sv = SignVector.from_signs(np.ones(1000, dtype=np.int8))
    wire = sv.encode()
    assert len(wire) == 4 + 125  # length prefix + packed payload
    assert sv.payload_bits == 1000


def test_wire_bit_order():
    # alternating +-+-... packs MSB-first to 0b10101010
    sv = SignVector.from_signs(np.array([1, -1, 1, -1, 1, -1, 1, -1]))
    assert sv.packed == bytes([0b10101010])
    assert sv.encode()[:4] == (8).to_bytes(4, "little")


def test_majority_two_vs_one():
    votes = [SignVector.from_signs([s]) for s in (1, 1, -1)]
    assert majority_vote(votes).decision.signs()[0] == 1


def test_single_client_vote_is_identity(rng):
    signs = rng.choice([-1, 1], size=20).astype(np.int8)
    result = majority_vote([SignVector.from_signs(signs)])
    assert np.array_equal(result.decision.signs(), signs)


def test_tie_resolves_positive():
    votes = [SignVector.from_signs([1]), SignVector.from_signs([-1])]
    assert majority_vote(votes).decision.signs()[0] == 1


def test_exhaustive_against_counting_oracle():
    for m in range(1, 5):
        for g in range(1, 4):
            for combo in itertools.product([-1, 1], repeat=m * g):
                grid = np.array(combo).reshape(m, g)
                votes = [SignVector.from_signs(row) for row in grid]
                got = majority_vote(votes).decision.signs()
                for coord in range(g):
                    pos = sum(1 for k in range(m) if grid[k, coord] > 0)
                    neg = m - pos
                    want = 1 if pos >= neg else -1
                    assert got[coord] == want


def test_vote_length_mismatch_is_protocol_error():
    with pytest.raises(ProtocolError):
        majority_vote([SignVector.from_signs([1, 1]), SignVector.from_signs([1])])


def test_vote_scale_invariance(rng):
    grads = rng.normal(size=(5, 40))
    base = majority_vote([sign_compress(g) for g in grads]).decision.signs()
    scales = rng.uniform(0.1, 10.0, size=5)
    scaled = majority_vote(
        [sign_compress(g * s) for g, s in zip(grads, scales)]
    ).decision.signs()
    assert np.array_equal(base, scaled)


def test_apply_vote_basic():
    vote = SignVector.from_signs([1, -1])
    out = apply_vote(np.zeros(2), vote, 0.1)
    assert np.allclose(out, [-0.1, 0.1])


def test_apply_opposite_votes_restore(rng):
    # dyadic values so the add/subtract pair is exact in IEEE arithmetic
    w = rng.integers(-32, 32, size=8) / 16.0
    signs = rng.choice([-1, 1], size=8).astype(np.int8)
    stepped = apply_vote(w, SignVector.from_signs(signs), 0.5)
    restored = apply_vote(stepped, SignVector.from_signs(-signs), 0.5)
    assert np.array_equal(restored, w)


@settings(max_examples=30, derandomize=True)
@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=10**6))
def test_apply_vote_moves_exactly_delta(length, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=length)
    vote = SignVector.from_signs(rng.choice([-1, 1], size=length).astype(np.int8))
    out = apply_vote(w, vote, 0.3)
    assert np.max(np.abs(out - w)) == pytest.approx(0.3)
    assert np.min(np.abs(out - w)) == pytest.approx(0.3)


def test_signsgd_converges_on_quadratic():
    # f(w) = ||w - target||^2 with decaying steps reaches a 2*delta0 band
    rng = np.random.default_rng(3)
    target = rng.normal(size=10)
    w = target + rng.uniform(-2, 2, size=10)
    delta0 = 0.1
    steps = int(1 / delta0**2)
    for t in range(1, steps + 1):
        grad = 2 * (w - target)
        w = apply_vote(w, sign_compress(grad), delta0 / np.sqrt(t))
    assert np.max(np.abs(w - target)) <= 2 * delta0


def test_fedavg_identity():
    params = np.array([1.0, 2.0, 3.0])
    out = fedavg_aggregate([(params, 5), (params, 7)])
    assert np.allclose(out, params)


def test_fedavg_weighted_example():
    out = fedavg_aggregate([(np.array([0.0]), 1), (np.array([1.0]), 3)])
    assert out[0] == pytest.approx(0.75)


def test_fedavg_matches_weighted_sum_oracle(rng):
    entries = [(rng.normal(size=6), int(c)) for c in rng.integers(1, 50, size=4)]
    got = fedavg_aggregate(entries)
    total = sum(c for _, c in entries)
    want = sum(p * c for p, c in entries) / total
    assert np.allclose(got, want, atol=1e-12)


def test_fedavg_length_mismatch():
    with pytest.raises(ProtocolError):
        fedavg_aggregate([(np.zeros(2), 1), (np.zeros(3), 1)])


def test_fedprox_mu_zero_is_identity(rng):
    g = rng.normal(size=5)
    assert np.array_equal(fedprox_local_grad(g, rng.normal(size=5), rng.normal(size=5), 0.0), g)


def test_fedprox_equal_params_is_identity(rng):
    g = rng.normal(size=5)
    w = rng.normal(size=5)
    assert np.array_equal(fedprox_local_grad(g, w, w, 2.5), g)


def test_fedprox_arithmetic():
    out = fedprox_local_grad(np.array([1.0]), np.array([2.0]), np.array([0.0]), 0.5)
    assert out[0] == pytest.approx(2.0)
