"""Memory model: closed forms, exactness against instrumented counts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rece.losses import ReceParams, ce_full, rece
from rece.memcost import (
    exact_logit_elements,
    instrumented_count,
    optimal_n_b,
    peak_elements,
)


class TestOptimalBucketCount:
    def test_reference_values(self):
        assert optimal_n_b(1, 1, 1024, 4096) == 111  # sqrt(12288) = 110.85...
        assert optimal_n_b(1, 0, 1, 1) == 2  # sqrt(4)
        assert optimal_n_b(4, 2, 900, 10_000) == 268  # sqrt(72000) = 268.3...

    def test_uses_smaller_side(self):
        assert optimal_n_b(1, 1, 4096, 1024) == optimal_n_b(1, 1, 1024, 4096)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            optimal_n_b(0, 1, 10, 10)
        with pytest.raises(ValueError):
            optimal_n_b(1, -1, 10, 10)


class TestExactCount:
    def test_exhaustive_limit_is_full_matrix(self):
        assert exact_logit_elements(40, 70, 1, 0, 1) == 40 * 70

    def test_interior_chunk_arithmetic(self):
        # 64 rows, 256 items, 8 chunks, radius 1, 2 rounds: the unclamped
        # interior count would be 2*64*3*32 = 12288; clamping the two
        # boundary chunks removes one 8x32 block each per round
        unclamped = 2 * 64 * 3 * 32
        clamped = exact_logit_elements(64, 256, 8, 1, 2)
        assert clamped == unclamped - 2 * 2 * 8 * 32
        assert clamped == 11264

    def test_linear_in_rounds(self):
        one = exact_logit_elements(50, 97, 5, 1, 1)
        assert exact_logit_elements(50, 97, 5, 1, 3) == 3 * one

    def test_monotonicity(self):
        base = exact_logit_elements(48, 100, 4, 1, 2)
        assert exact_logit_elements(48, 100, 8, 1, 2) <= base  # more chunks, fewer logits
        assert exact_logit_elements(48, 100, 4, 2, 2) >= base
        assert exact_logit_elements(48, 100, 4, 1, 3) >= base

    @settings(max_examples=30, deadline=None)
    @given(
        n_rows=st.integers(2, 60),
        n_items=st.integers(2, 90),
        n_c=st.integers(1, 10),
        n_ec=st.integers(0, 3),
        rounds=st.integers(1, 3),
    )
    def test_monotone_in_radius_and_rounds(self, n_rows, n_items, n_c, n_ec, rounds):
        if n_c > min(n_rows, n_items):
            return
        count = exact_logit_elements(n_rows, n_items, n_c, n_ec, rounds)
        assert count <= exact_logit_elements(n_rows, n_items, n_c, n_ec + 1, rounds)
        assert count <= exact_logit_elements(n_rows, n_items, n_c, n_ec, rounds + 1)


class TestPeakModel:
    def test_reference_value(self):
        params = ReceParams(n_b=32, n_c=32, n_ec=1, rounds=1, seed=0)
        estimate = peak_elements(params, n_items=100_000, n_rows=1024)
        want = 2 * math.sqrt(3 * 1024) * 100_000
        assert abs(estimate.peak_elements_model - want) < 1e-6 * want
        assert abs(estimate.peak_elements_model - 1.1085e7) < 0.001e7

    def test_reduction_factor_closed_form_agrees(self):
        for n_b, n_c, n_ec, rounds, n_items, n_rows in [
            (8, 8, 1, 2, 4096, 512),
            (16, 4, 0, 1, 1000, 3000),
            (3, 7, 2, 4, 50, 900),
        ]:
            params = ReceParams(n_b=n_b, n_c=n_c, n_ec=n_ec, rounds=rounds, seed=0)
            est = peak_elements(params, n_items, n_rows)
            rel = abs(est.reduction_factor - est.reduction_factor_closed_form)
            rel /= abs(est.reduction_factor_closed_form)
            assert rel <= 1e-9

    def test_bucketing_elements(self):
        params = ReceParams(n_b=6, n_c=3, n_ec=0, rounds=2, seed=0)
        est = peak_elements(params, n_items=100, n_rows=40)
        assert est.bucketing_elements == 2 * 6 * 140
        assert est.n_b_star == optimal_n_b(params.alpha_bc, 0, 100, 40)


class TestInstrumented:
    def _instance(self, m=50, n_items=97, d=6, seed=0):
        rng = np.random.default_rng(seed)
        return (
            rng.standard_normal((m, d)),
            rng.standard_normal((n_items, d)),
            rng.integers(0, n_items, m),
        )

    def test_exhaustive_run_counts_full_matrix(self):
        x, y, targets = self._instance(m=20, n_items=30)
        params = ReceParams(n_b=1, n_c=1, n_ec=0, rounds=1, seed=0)
        assert instrumented_count(rece(x, y, targets, params)) == 20 * 30

    def test_doubling_rounds_doubles_count(self):
        x, y, targets = self._instance()
        one = rece(x, y, targets, ReceParams(n_b=5, n_c=5, n_ec=1, rounds=1, seed=4))
        two = rece(x, y, targets, ReceParams(n_b=5, n_c=5, n_ec=1, rounds=2, seed=4))
        assert instrumented_count(two) == 2 * instrumented_count(one)

    @pytest.mark.parametrize("n_c", [1, 4, 7])
    @pytest.mark.parametrize("n_ec", [0, 1, 2])
    @pytest.mark.parametrize("rounds", [1, 2, 3])
    def test_exact_equality_across_grid(self, n_c, n_ec, rounds):
        x, y, targets = self._instance()
        params = ReceParams(n_b=n_c, n_c=n_c, n_ec=n_ec, rounds=rounds, seed=11)
        result = rece(x, y, targets, params)
        assert instrumented_count(result) == exact_logit_elements(50, 97, n_c, n_ec, rounds)

    def test_valid_mask_shrinks_the_count(self):
        x, y, targets = self._instance()
        valid = np.zeros(50, dtype=bool)
        valid[:37] = True
        params = ReceParams(n_b=4, n_c=4, n_ec=1, rounds=2, seed=2)
        result = rece(x, y, targets, params, valid_mask=valid)
        assert instrumented_count(result) == exact_logit_elements(37, 97, 4, 1, 2)

    def test_ce_full_counts_every_element(self):
        x, y, targets = self._instance(m=12, n_items=9)
        assert instrumented_count(ce_full(x, y, targets)) == 12 * 9
