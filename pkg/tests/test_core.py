import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moepredict.core import (
    ExpertSelection,
    RouterSpec,
    TraceSample,
    activation_entropy,
    gate_forward,
    gate_logits,
    layer_norm,
    softmax,
    top_k,
    top_k_batch,
)
from moepredict.exceptions import ConfigurationError


def identity_router(k=1):
    return RouterSpec(2, 2, k, np.eye(2))


class TestGateForward:
    def test_symmetric_input(self):
        out = gate_forward(identity_router(), np.zeros(2))
        assert np.allclose(out, [0.5, 0.5])

    def test_hand_softmax(self):
        # softmax(ln 3, 0) = (3/4, 1/4)
        out = gate_forward(identity_router(), np.array([np.log(3.0), 0.0]))
        assert np.allclose(out, [0.75, 0.25], atol=1e-12)

    def test_identical_rows_give_identical_scores(self, rng):
        w = rng.standard_normal((4, 6))
        w[2] = w[0]
        spec = RouterSpec(6, 4, 2, w)
        for _ in range(20):
            out = gate_forward(spec, rng.standard_normal(6))
            assert out[0] == pytest.approx(out[2], abs=1e-12)

    def test_sums_to_one_over_wide_magnitudes(self, rng):
        spec = RouterSpec(8, 5, 2, rng.standard_normal((5, 8)))
        for scale in (1e-3, 1.0, 1e2, 1e4):
            x = rng.uniform(-1, 1, 8) * scale
            assert gate_forward(spec, x).sum() == pytest.approx(1.0, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            gate_forward(identity_router(), np.zeros(3))

    def test_batch_shape(self, rng):
        spec = RouterSpec(8, 5, 2, rng.standard_normal((5, 8)))
        out = gate_forward(spec, rng.standard_normal((7, 8)))
        assert out.shape == (7, 5)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


class TestTopK:
    def test_simple(self):
        assert top_k(np.array([0.1, 0.7, 0.2]), 1).tolist() == [1]

    def test_tie_breaks_to_lower_index(self):
        assert top_k(np.array([0.5, 0.5, 0.0]), 1).tolist() == [0]

    def test_against_sort_oracle(self, rng):
        # exhaustive oracle: stable sort by (-score, index)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(1, n + 1))
            scores = rng.choice([0.0, 0.25, 0.5, 1.0], size=n)  # force ties
            oracle = sorted(
                sorted(range(n), key=lambda i: (-scores[i], i))[:k]
            )
            assert top_k(scores, k).tolist() == oracle

    def test_hand_case(self):
        assert top_k(np.array([0.4, 0.1, 0.3, 0.2]), 2).tolist() == [0, 2]

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            top_k(np.array([1.0, 2.0]), 3)

    @given(
        st.lists(
            st.floats(-100, 100, allow_nan=False), min_size=2, max_size=10, unique=True
        ),
        st.data(),
    )
    @settings(max_examples=100, deadline=None)
    def test_permutation_consistency(self, values, data):
        scores = np.array(values)
        n = len(values)
        k = data.draw(st.integers(1, n))
        perm = data.draw(st.permutations(range(n)))
        perm = np.array(perm)
        base = set(top_k(scores, k).tolist())
        permuted_scores = np.empty(n)
        permuted_scores[perm] = scores  # expert i moves to position perm[i]
        moved = set(top_k(permuted_scores, k).tolist())
        assert moved == {int(perm[i]) for i in base}

    def test_batch_matches_single(self, rng):
        scores = rng.standard_normal((50, 9))
        batch = top_k_batch(scores, 3)
        for i in range(50):
            assert np.array_equal(batch[i], top_k(scores[i], 3))


class TestLayerNorm:
    def test_ordering_and_moments(self):
        out = layer_norm(np.array([1.0, 2.0, 3.0]))
        assert abs(out.mean()) < 1e-6
        assert np.array_equal(np.argsort(out), np.argsort([1.0, 2.0, 3.0]))

    def test_constant_input_maps_to_zero(self):
        assert np.array_equal(layer_norm(np.array([5.0, 5.0, 5.0])), np.zeros(3))

    def test_rank_preservation_property(self, rng):
        for _ in range(1000):
            x = rng.standard_normal(int(rng.integers(2, 20)))
            assert np.array_equal(np.argsort(layer_norm(x)), np.argsort(x))

    def test_unit_variance_for_random_input(self, rng):
        x = rng.standard_normal(512)
        assert layer_norm(x).var() == pytest.approx(1.0, abs=1e-4)

    def test_too_short(self):
        with pytest.raises(ValueError):
            layer_norm(np.array([1.0]))


class TestSoftmaxRankingPreservation:
    def test_1000_trials(self, rng):
        for _ in range(1000):
            z = rng.standard_normal(int(rng.integers(2, 20))) * rng.uniform(0.1, 50)
            assert np.array_equal(np.argsort(softmax(z)), np.argsort(z))

    def test_gate_topk_equals_logit_topk(self, rng):
        # consequence: ranking by gate softmax == ranking by raw logits
        spec = RouterSpec(16, 12, 3, rng.standard_normal((12, 16)))
        for _ in range(1000):
            x = rng.standard_normal(16)
            assert np.array_equal(
                top_k(gate_forward(spec, x), 3), top_k(gate_logits(spec, x), 3)
            )


class TestActivationEntropy:
    def test_uniform_is_one(self):
        assert activation_entropy(np.full(64, 7)) == pytest.approx(1.0)

    def test_single_spike_is_zero(self):
        counts = np.zeros(16)
        counts[3] = 10
        assert activation_entropy(counts) == 0.0

    def test_hand_binary_case(self):
        # binary entropy of p=0.75 in bits
        assert activation_entropy(np.array([3, 1])) == pytest.approx(0.8113, abs=1e-4)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            activation_entropy(np.zeros(4))


class TestDomainTypes:
    def test_router_invariants(self):
        with pytest.raises(ConfigurationError):
            RouterSpec(2, 2, 3, np.eye(2))
        with pytest.raises(ConfigurationError):
            RouterSpec(2, 3, 1, np.eye(2))
        with pytest.raises(ConfigurationError):
            RouterSpec(2, 2, 1, np.array([[np.inf, 0], [0, 1]]))

    def test_trace_sample_checks_topk_consistency(self):
        with pytest.raises(ValueError):
            TraceSample(np.zeros(2), np.array([0.8, 0.2]), np.array([1]))

    def test_trace_sample_checks_sum(self):
        with pytest.raises(ValueError):
            TraceSample(np.zeros(2), np.array([0.8, 0.1]), np.array([0]))

    def test_expert_selection_sorts(self):
        sel = ExpertSelection(np.array([3, 1]), np.zeros(5))
        assert sel.indices.tolist() == [1, 3]

    def test_expert_selection_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ExpertSelection(np.array([1, 1]), np.zeros(5))
