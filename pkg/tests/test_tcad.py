import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pacfl.tcad import (
    DELTAS,
    NUM_DELTAS,
    Action,
    ActionSpace,
    apply_delta,
    apply_deltas,
    delta_index,
    enumerate_deltas,
    enumerate_joint,
    initial_action,
    joint_delta_indices,
    observed_delta,
)

SPACE = ActionSpace(lower=(1, 0.5e9, 2e6, 2), upper=(5, 3.5e9, 30e6, 32), step=(1, 0.5e9, 2e6, 4))


class TestApplyDelta:
    def test_mixed_move(self):
        a = Action(3, 2.0e9, 10e6, 8)
        assert apply_delta(a, (1, -1, 1, 0), SPACE) == Action(4, 1.5e9, 12e6, 8)

    def test_clamps_at_upper_bound(self):
        assert apply_delta(Action(5, 2e9, 10e6, 8), (1, 0, 0, 0), SPACE).n == 5

    def test_zero_delta_is_identity(self):
        a = Action(2, 1.7e9, 7e6, 10)
        assert apply_delta(a, (0, 0, 0, 0), SPACE) == a

    def test_rejects_non_ternary(self):
        with pytest.raises(ValueError):
            apply_delta(Action(2, 1e9, 4e6, 2), (2, 0, 0, 0), SPACE)
        with pytest.raises(ValueError):
            apply_delta(Action(2, 1e9, 4e6, 2), (1, 0, 0), SPACE)

    def test_repeated_increments_reach_and_hold_upper_bound(self):
        a = Action(1, 0.5e9, 2e6, 2)
        for _ in range(20):
            a = apply_delta(a, (1, 1, 1, 1), SPACE)
        assert a == Action(5, 3.5e9, 30e6, 32)
        assert apply_delta(a, (1, 1, 1, 1), SPACE) == a

    @given(
        st.integers(1, 5), st.floats(0.5e9, 3.5e9), st.floats(2e6, 30e6), st.integers(2, 32),
        st.sampled_from(enumerate_deltas()),
    )
    def test_result_in_bounds_with_integer_n_and_q(self, n, f, b, q, psi):
        out = apply_delta(Action(n, f, b, q), psi, SPACE)
        assert SPACE.contains(out)
        assert isinstance(out.n, int) and isinstance(out.q, int)

    def test_vectorized_matches_scalar(self):
        a = Action(3, 2.0e9, 10e6, 30)
        batch = apply_deltas(a.as_array(), DELTAS, SPACE)
        for row, psi in zip(batch, enumerate_deltas()):
            assert Action.from_array(row) == apply_delta(a, psi, SPACE)

    def test_lattice_connectivity(self):
        """BFS over integer dimensions reaches every lattice point from the start."""
        small = ActionSpace(lower=(1, 1.0, 1.0, 2), upper=(3, 2.0, 2.0, 10), step=(1, 1.0, 1.0, 4))
        start = Action(1, 1.0, 1.0, 2)
        seen, frontier = {start}, deque([start])
        while frontier:
            a = frontier.popleft()
            for psi in enumerate_deltas():
                b = apply_delta(a, psi, small)
                if b not in seen:
                    seen.add(b)
                    frontier.append(b)
        targets = {Action(n, f, b, q) for n in (1, 2, 3) for f in (1.0, 2.0) for b in (1.0, 2.0) for q in (2, 6, 10)}
        assert targets <= seen


class TestEnumeration:
    def test_count_order_uniqueness(self):
        deltas = enumerate_deltas()
        assert len(deltas) == NUM_DELTAS == 81
        assert len(set(deltas)) == 81
        assert deltas[0] == (-1, -1, -1, -1) and deltas[-1] == (1, 1, 1, 1)
        assert deltas == sorted(deltas)

    def test_naive_three_level_space_has_same_size(self):
        assert len(list(itertools.product(range(3), repeat=4))) == NUM_DELTAS

    def test_delta_index_inverts_enumeration(self):
        for i, psi in enumerate(enumerate_deltas()):
            assert delta_index(psi) == i

    @pytest.mark.parametrize("opponents, count", [(1, 81), (2, 6561)])
    def test_joint_counts(self, opponents, count):
        assert sum(1 for _ in enumerate_joint(opponents)) == count

    def test_three_opponents_lazily(self):
        it = enumerate_joint(3)
        assert not isinstance(it, (list, tuple))
        assert sum(1 for _ in it) == 531_441

    def test_joint_needs_an_opponent(self):
        with pytest.raises(ValueError):
            enumerate_joint(0)

    def test_joint_indices_match_iterator_order(self):
        deltas = enumerate_deltas()
        digits = joint_delta_indices(2, 0, 6561)
        for row, combo in zip(digits, enumerate_joint(2)):
            assert tuple(deltas[i] for i in row) == combo

    def test_observed_delta(self):
        assert observed_delta([3, 2e9, 1e7, 8], [4, 2e9, 8e6, 12]).tolist() == [1, 0, -1, 1]


def test_initial_action_is_symmetric_midpoint(default_config):
    a = initial_action(default_config)
    assert a == Action(3, 2.0e9, 10e6, 18)
