import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathnewton.calculus import (
    ORACLE_CAP,
    OpCounter,
    OracleCapExceeded,
    accumulate_arcs,
    ExactUnits,
    dense_hessian_oracle,
    exact_sum,
    gradient,
    hessian_diagonal,
    hessian_vector_product,
    objective,
    refresh,
    sequential_dot,
)
from pathnewton.costs import DomainError, KleinrockDelay, Quadratic, Zero
from pathnewton.instance import single_block
from pathnewton.synthetic import diagonal, random_instance

Q = Quadratic(1.0, 0.0, 0.0)


@pytest.fixture
def gain():
    return single_block(1, [(0, 0, 0.5)], [Q], [Zero()])


class TestRefresh:
    def test_t1_flows(self, T1, x11):
        assert refresh(T1, x11).arc_flows.tolist() == [1.0, 2.0]

    def test_zero_point(self, T1):
        assert refresh(T1, np.zeros(2)).arc_flows.tolist() == [0.0, 0.0]

    def test_gain_flow(self, gain):
        assert refresh(gain, [2.0]).arc_flows.tolist() == [1.0]

    def test_cached_flows_match_recomputation(self, random_case):
        inst, x = random_case
        s = refresh(inst, x)
        assert np.array_equal(s.arc_flows, accumulate_arcs(inst, x))

    def test_revision_increases(self, T1, x11):
        a = refresh(T1, x11)
        b = refresh(T1, x11)
        assert b.revision > a.revision

    def test_infeasible_point_names_location(self):
        inst = single_block(1, [(0, 0, 1.0)], [KleinrockDelay(2.0)])
        with pytest.raises(DomainError, match="arc 0"):
            refresh(inst, [2.5])

    def test_wrong_length(self, T1):
        with pytest.raises(ValueError):
            refresh(T1, [1.0])

    def test_op_count(self, T1, x11):
        ops = OpCounter()
        refresh(T1, x11, ops)
        assert ops.count == 3 + 2 + 2  # T + P + A


class TestValues:
    def test_t1_objective(self, T1, x11):
        assert objective(refresh(T1, x11)) == 3.5

    def test_zero_objective(self, T1):
        assert objective(refresh(T1, np.zeros(2))) == 0.0

    def test_kleinrock_objective(self):
        inst = single_block(1, [(0, 0, 1.0)], [KleinrockDelay(2.0)])
        assert objective(refresh(inst, [1.0])) == 1.0

    def test_t1_gradient(self, T1, x11):
        assert gradient(refresh(T1, x11)).tolist() == [4.0, 3.0]

    def test_zero_costs_gradient(self):
        inst = single_block(2, [(0, 0, 1.0), (0, 1, 1.0)], [Zero()])
        assert gradient(refresh(inst, [3.0, -1.0])).tolist() == [0.0, 0.0]

    def test_gain_gradient(self, gain):
        assert gradient(refresh(gain, [2.0])).tolist() == [0.5]

    def test_t1_diagonal(self, T1, x11):
        assert hessian_diagonal(refresh(T1, x11)).tolist() == [3.0, 2.0]

    def test_diagonal_only(self):
        inst = diagonal([5.0, 5.0, 5.0])
        assert hessian_diagonal(refresh(inst, np.ones(3))).tolist() == [5.0] * 3

    def test_gain_diagonal(self, gain):
        s = refresh(gain, [2.0])
        assert hessian_diagonal(s).tolist() == [0.25]
        assert dense_hessian_oracle(gain, [2.0]).tolist() == [[0.25]]


class TestExactSum:
    finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e300, max_value=1e300)

    @given(st.lists(finite, max_size=40), st.randoms())
    @settings(max_examples=200, deadline=None)
    def test_matches_fsum_in_any_order(self, vals, rnd):
        ref = math.fsum(vals)
        rnd.shuffle(vals)
        assert exact_sum(vals) == ref

    def test_cancellation(self):
        assert exact_sum([1e16, 1.0, -1e16]) == 1.0
        assert np.sum([1e16, 1.0, -1e16]) == 0.0

    def test_grouping_is_associative(self):
        a, b, c = (ExactUnits.of(v) for v in (0.1, 0.2, 0.3))
        assert float((a + b) + c) == float(a + (b + c)) == math.fsum([0.1, 0.2, 0.3])

    def test_exact_objective(self, random_case):
        inst, x = random_case
        s = refresh(inst, x)
        assert objective(s, exact=True) == math.fsum(list(s.path_vals) + list(s.arc_vals))
        assert objective(s, exact=True) == pytest.approx(objective(s), rel=1e-12, abs=1e-12)


class TestHvp:
    @pytest.mark.parametrize("v, w", [((1, 0), (3, 1)), ((0, 0), (0, 0)), ((1, 1), (4, 3))])
    def test_t1(self, T1, x11, v, w):
        assert hessian_vector_product(refresh(T1, x11), np.array(v, float)).tolist() == list(w)

    def test_shape_check(self, T1, x11):
        with pytest.raises(ValueError):
            hessian_vector_product(refresh(T1, x11), np.ones(3))

    def test_op_count(self, T1, x11):
        s = refresh(T1, x11)
        before = s.ops.count
        hessian_vector_product(s, np.ones(2))
        assert s.ops.count - before == 2 * 3 + 2 + 2

    def test_matches_oracle(self, random_case):
        inst, x = random_case
        s = refresh(inst, x)
        H = dense_hessian_oracle(inst, x)
        v = np.random.default_rng(0).standard_normal(inst.num_paths)
        ref = H @ v
        assert np.max(np.abs(hessian_vector_product(s, v) - ref)) <= 1e-12 * np.max(np.abs(ref))
        assert np.allclose(hessian_diagonal(s), np.diag(H), rtol=1e-13, atol=0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        inst, x = random_instance(seed, max_paths=8)
        s = refresh(inst, x)
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal((2, inst.num_paths))
        lhs = hessian_vector_product(s, a * u + b * v)
        rhs = a * hessian_vector_product(s, u) + b * hessian_vector_product(s, v)
        assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


class TestOracle:
    def test_t1(self, T1, x11):
        assert dense_hessian_oracle(T1, x11).tolist() == [[3.0, 1.0], [1.0, 2.0]]

    def test_diag(self):
        assert dense_hessian_oracle(diagonal([1.0, 4.0]), np.zeros(2)).tolist() == [[1.0, 0.0], [0.0, 4.0]]

    def test_symmetric(self, random_case):
        inst, x = random_case
        H = dense_hessian_oracle(inst, x)
        assert np.array_equal(H, H.T)

    def test_cap(self):
        inst = diagonal(np.ones(ORACLE_CAP + 1))
        with pytest.raises(OracleCapExceeded):
            dense_hessian_oracle(inst, np.zeros(ORACLE_CAP + 1))
        assert dense_hessian_oracle(inst, np.zeros(ORACLE_CAP + 1), cap=ORACLE_CAP + 1).shape == (201, 201)


def test_sequential_dot_left_to_right():
    a = np.array([1e16, 1.0, -1e16, 1.0])
    # ((1e16 + 1) - 1e16) + 1 = 0 + 1 in left-to-right order
    assert sequential_dot(a, np.ones(4)) == 1.0
