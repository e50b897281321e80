"""Pairwise gaps, scaled differences, distinguishability and safety margins."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banzhaf_cfe.game import TabulatedGame, ThresholdPolicy
from banzhaf_cfe.robustness import (
    brute_force_safety_margin,
    delta_k,
    difference_vector,
    is_tau_distinguishable,
    mean_delta_k,
    random_weight_function,
    safety_margin_closed_form,
    scaled_difference,
)
from banzhaf_cfe.semivalues import banzhaf_weights, exact_banzhaf, shapley_weights

import oracles


def symmetric_game(n, seed):
    """Players 0 and 1 interchangeable."""
    rng = np.random.default_rng(seed)
    inner = rng.random((3, 2 ** (n - 2)))
    idx = np.arange(2**n)
    return TabulatedGame(inner[(idx & 1) + ((idx >> 1) & 1), idx >> 2])


class TestDeltaK:
    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_symmetric_players(self, n):
        g = symmetric_game(n, 0)
        assert all(abs(delta_k(g, 0, 1, k)) < 1e-12 for k in range(1, n))

    @pytest.mark.parametrize("n", [3, 5, 6])
    def test_additive_gap(self, n):
        a = np.linspace(0.1, 1.0, n)
        g = TabulatedGame.additive(a)
        gap = a[n - 1] - a[0]
        for k in range(1, n):
            assert delta_k(g, n - 1, 0, k) == pytest.approx(math.comb(n - 2, k - 1) * gap, abs=1e-12)
            assert mean_delta_k(g, n - 1, 0, k) == pytest.approx(gap, abs=1e-12)

    def test_single_term(self):
        g = TabulatedGame.random(3, np.random.default_rng(1))
        assert delta_k(g, 0, 2, 1) == g({0}) - g({2})

    def test_range(self):
        g = TabulatedGame.random(3, np.random.default_rng(1))
        with pytest.raises(ValueError):
            delta_k(g, 0, 1, 3)
        with pytest.raises(ValueError):
            delta_k(g, 1, 1, 1)


class TestScaledDifference:
    def test_symmetric_is_zero(self):
        assert scaled_difference(symmetric_game(4, 2), banzhaf_weights(4), 0, 1) == pytest.approx(0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_dual_paths_agree(self, seed):
        g = TabulatedGame.random(4, np.random.default_rng(seed))
        for w in (banzhaf_weights(4), shapley_weights(4), random_weight_function(4, np.random.default_rng(seed))):
            d = scaled_difference(g, w, 1, 3)  # raises on internal mismatch
            assert d == pytest.approx(difference_vector(4, w, 1, 3) @ g.table, abs=1e-12)

    def test_sign_matches_value_difference(self):
        g = TabulatedGame.random(5, np.random.default_rng(3))
        phi = exact_banzhaf(g).values
        assert np.sign(scaled_difference(g, banzhaf_weights(5), 0, 4)) == np.sign(phi[0] - phi[4])


class TestDistinguishability:
    def test_symmetric_never(self):
        assert not is_tau_distinguishable(symmetric_game(4, 0), 0, 1, 1e-6)

    def test_additive_threshold(self):
        n, gap = 5, 0.3
        g = TabulatedGame.additive([gap, 0, 0, 0, 0])
        tau = min(math.comb(n - 2, k - 1) for k in range(1, n)) * gap
        assert is_tau_distinguishable(g, 0, 1, tau)
        assert not is_tau_distinguishable(g, 0, 1, tau * (1 + 1e-9))

    def test_two_players(self):
        g = TabulatedGame([0.0, 0.5, 0.2, 0.9])
        assert is_tau_distinguishable(g, 0, 1, 0.3)
        assert not is_tau_distinguishable(g, 0, 1, 0.31)


class TestClosedForm:
    def test_banzhaf_n4(self):
        assert safety_margin_closed_form(4, 1.0, banzhaf_weights(4)) == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("n", range(2, 12))
    def test_banzhaf_power_of_two(self, n):
        assert safety_margin_closed_form(n, 1.0, banzhaf_weights(n)) == pytest.approx(2 ** ((n - 2) / 2), rel=1e-12)

    def test_shapley_n4(self):
        assert safety_margin_closed_form(4, 1.0, shapley_weights(4)) == pytest.approx(math.sqrt(3.6), abs=1e-12)

    def test_n3_tie(self):
        s = safety_margin_closed_form(3, 1.0, shapley_weights(3))
        b = safety_margin_closed_form(3, 1.0, banzhaf_weights(3))
        assert s == pytest.approx(math.sqrt(2), abs=1e-12) and b == pytest.approx(s, abs=1e-12)

    @pytest.mark.parametrize("n", [3, 5, 8])
    def test_matches_exact_fraction_oracle(self, n):
        for w in (banzhaf_weights(n), shapley_weights(n)):
            exact = [oracles.banzhaf_weight(n)] * n if w.name == "banzhaf" else [
                oracles.shapley_weight(n, j) for j in range(1, n + 1)
            ]
            assert safety_margin_closed_form(n, 1.5, w) == pytest.approx(oracles.closed_form_margin(n, 1.5, exact), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 10), st.floats(1e-3, 1e3))
    def test_linear_in_tau(self, n, tau):
        w = shapley_weights(n)
        assert safety_margin_closed_form(n, 2 * tau, w) == pytest.approx(2 * safety_margin_closed_form(n, tau, w), rel=1e-12)

    def test_banzhaf_is_maximal(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(3, 9))
            w = random_weight_function(n, rng)
            assert safety_margin_closed_form(n, 1.0, banzhaf_weights(n)) >= safety_margin_closed_form(n, 1.0, w) - 1e-9


class TestBruteForce:
    def test_hand_computed_n3(self):
        """n=3, Banzhaf: D = 1.5 (gap on singletons) + 1.5 (gap on pairs); the normal has four
        entries of magnitude 1.5, so the nearest flip lies 3 tau / 3 = tau away."""
        a = difference_vector(3, banzhaf_weights(3), 0, 1)
        assert sorted(np.abs(a[a != 0])) == [1.5] * 4
        rep = brute_force_safety_margin(3, 1.0, banzhaf_weights(3))
        assert rep.converged
        assert rep.epsilon_found == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("n", [3, 4, 5])
    @pytest.mark.parametrize("name", ["banzhaf", "shapley"])
    def test_equals_closed_form_over_root_two(self, n, name):
        """Each gap term moves two table entries, so the Euclidean distance is the
        closed form divided by sqrt(2)."""
        w = banzhaf_weights(n) if name == "banzhaf" else shapley_weights(n)
        rep = brute_force_safety_margin(n, 1.0, w)
        assert rep.converged
        assert rep.epsilon_found == pytest.approx(rep.closed_form / math.sqrt(2), rel=1e-9)

    @pytest.mark.parametrize("n", [3, 4])
    def test_banzhaf_at_least_shapley(self, n):
        b = brute_force_safety_margin(n, 1.0, banzhaf_weights(n)).epsilon_found
        s = brute_force_safety_margin(n, 1.0, shapley_weights(n)).epsilon_found
        assert b >= s - 1e-9

    @pytest.mark.parametrize("n", [3, 4])
    @pytest.mark.parametrize("cut", [0.1, 0.5])
    def test_hinge_leaves_margin_unchanged(self, n, cut):
        w = shapley_weights(n)
        plain = brute_force_safety_margin(n, 1.0, w)
        hinged = brute_force_safety_margin(n, 1.0, w, ThresholdPolicy.hinge(cut, relative=False))
        assert hinged.thresholded and hinged.converged
        assert hinged.epsilon_found == pytest.approx(plain.epsilon_found, abs=1e-3)

    def test_size_limit(self):
        with pytest.raises(ValueError):
            brute_force_safety_margin(6, 1.0, banzhaf_weights(6))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1), st.floats(0, 2))
def test_hinge_shrinks_differences(size, seed, b):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=size), rng.normal(size=size)
    hinge = ThresholdPolicy.hinge(b, relative=False)
    x = u - v
    x_h = hinge.apply(u, 1.0)[0] - hinge.apply(v, 1.0)[0]
    assert np.linalg.norm(x_h) <= np.linalg.norm(x) + 1e-12
