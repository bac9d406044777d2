from dataclasses import replace

import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsplan.fitness import (
    ChromosomeError,
    FitnessBreakdown,
    as_chromosome,
    chromosome_str,
    cost_term,
    coverage_term,
    coverage_term_batch,
    fitness_value,
    total_cost,
)


def test_all_covered_is_zero():
    assert coverage_term(np.array([-60.0, -65.0, -30.0]), -65.0) == 0.0


def test_single_receiver_deficit():
    assert coverage_term(np.array([-70.0]), -65.0) == pytest.approx(5 / 65)


def test_two_receivers_deficit():
    assert coverage_term(np.array([-70.0, -60.0]), -65.0) == pytest.approx(0.5 * 5 / 65)
    assert coverage_term(np.array([-70.0, -60.0]), -65.0) == pytest.approx(0.03846, abs=5e-6)


def test_threshold_exactly_met_is_gated():
    assert coverage_term(np.array([-65.0, -65.0]), -65.0) == 0.0


def test_dead_receiver_is_infinite():
    # a receiver with no path at all has an unbounded deficit
    assert coverage_term(np.array([-np.inf, -60.0]), -65.0) == math.inf


@settings(max_examples=100)
@given(st.lists(st.floats(-120, -20), min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_receiver_order_invariance(powers, rnd):
    p = np.array(powers)
    q = p.copy()
    rnd.shuffle(q)
    assert coverage_term(q, -65.0) == pytest.approx(coverage_term(p, -65.0), rel=1e-12, abs=1e-15)
    assert coverage_term(p, -65.0) >= 0


def test_batch_matches_scalar(rng):
    P = rng.uniform(-90, -40, (5, 17))
    np.testing.assert_allclose(coverage_term_batch(P, -65.0), [coverage_term(r, -65.0) for r in P], rtol=1e-12)


@pytest.mark.parametrize("k,q,expected", [(20, 7, 0.350), (38, 24, 24 / 38), (5, 0, 0.0)])
def test_cost_term(k, q, expected):
    chi = np.zeros(k, dtype=np.uint8)
    chi[:q] = 1
    assert cost_term(chi) == pytest.approx(expected, abs=1e-15)


def test_cost_increment_is_one_over_k():
    chi = np.zeros(12, dtype=np.uint8)
    prev = cost_term(chi)
    for k in range(12):
        chi[k] = 1
        assert cost_term(chi) - prev == pytest.approx(1 / 12)
        prev = cost_term(chi)


def test_fitness_reciprocal():
    assert fitness_value(0.5) == 2.0
    assert fitness_value(0.0) == math.inf
    assert FitnessBreakdown(0.25, 0.05, 0.2).fitness == 4.0


def test_paper_shaped_total():
    phi = 2.50e-4 + cost_term([1] * 7 + [0] * 13)
    assert round(phi, 3) == 0.350


def test_chromosome_parsing():
    np.testing.assert_array_equal(as_chromosome("10110"), [1, 0, 1, 1, 0])
    assert chromosome_str(as_chromosome("0011")) == "0011"
    with pytest.raises(ChromosomeError):
        as_chromosome("10a1")
    with pytest.raises(ChromosomeError):
        as_chromosome([0, 2, 1])
    with pytest.raises(ChromosomeError, match="K=3"):
        as_chromosome("1011", 3)
    with pytest.raises(ChromosomeError):
        as_chromosome([[0, 1]])


def test_zero_deployment_has_no_cost(demo_eval):
    b = demo_eval.breakdown(np.zeros(10, dtype=np.uint8))
    assert b.phi_cost == 0 and b.phi == b.phi_cov > 0


def test_full_coverage_full_deployment(toy):
    easy = replace(toy, coverage_threshold_dbm=-200.0)
    b = total_cost(easy, [1, 1])
    assert (b.phi_cov, b.phi_cost, b.phi) == (0.0, 1.0, 1.0)
    assert total_cost(easy, [0, 0]).fitness == math.inf


def test_roi_deficits_average_to_total(demo, demo_eval):
    chi = as_chromosome("0101000110")
    b = demo_eval.breakdown(chi)
    sizes = {r.id: len(r.receivers) for r in demo.rois}
    weighted = sum(b.roi_deficits[s] * n for s, n in sizes.items()) / sum(sizes.values())
    assert weighted == pytest.approx(b.phi_cov, rel=1e-12)
    assert set(b.to_dict()["roi_deficits"]) == {"1", "2"}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=10, max_size=10), st.integers(0, 9))
def test_coverage_term_non_increasing(demo_eval, bits, k):
    lo = np.array(bits, dtype=np.uint8)
    hi = lo.copy()
    hi[k] = 1
    assert demo_eval.coverage_term(hi) <= demo_eval.coverage_term(lo) + 1e-15


def test_evaluator_batch(demo_eval, rng):
    X = rng.integers(0, 2, (6, 10)).astype(np.uint8)
    np.testing.assert_allclose(demo_eval.coverage_terms(X), [demo_eval.coverage_term(x) for x in X], rtol=1e-12)
