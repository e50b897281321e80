"""Noise robustness of semivalue rankings: pairwise distinguishability and safety margins.

Utilities are full tables over the ``2**n`` coalitions (see
:class:`~banzhaf_cfe.game.TabulatedGame`). The scaled difference between two
players is linear in the table, ``D = a @ U``, so the smallest perturbation
that flips its sign is a Euclidean projection onto the hyperplane ``a @ U = 0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from banzhaf_cfe.game import TabulatedGame, ThresholdMode, ThresholdPolicy
from banzhaf_cfe.semivalues import WeightFunction, banzhaf_weights, semivalue_from_table, shapley_weights


class ConsistencyError(RuntimeError):
    pass


def _check_pair(n: int, i: int, j: int) -> None:
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"need two distinct players in [0, {n}), got {i}, {j}")


def _others_subsets(n: int, i: int, j: int, size: int) -> list[int]:
    rest = [p for p in range(n) if p not in (i, j)]
    return [sum(1 << p for p in combo) for combo in itertools.combinations(rest, size)]


def delta_k(game: TabulatedGame, i: int, j: int, k: int) -> float:
    """Sum over ``|S| = k-1``, ``S`` avoiding ``i, j``, of ``U(S + i) - U(S + j)``."""
    n = game.n_players
    _check_pair(n, i, j)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}]")
    t = game.table
    return math.fsum(t[s | (1 << i)] - t[s | (1 << j)] for s in _others_subsets(n, i, j, k - 1))


def mean_delta_k(game: TabulatedGame, i: int, j: int, k: int) -> float:
    """``delta_k`` averaged over its ``C(n-2, k-1)`` terms."""
    return delta_k(game, i, j, k) / math.comb(game.n_players - 2, k - 1)


def pair_weights(w: WeightFunction) -> np.ndarray:
    """``w(k) + w(k+1)`` for ``k = 1 .. n-1``."""
    return np.array([w(k) + w(k + 1) for k in range(1, w.n)])


def scaled_difference(game: TabulatedGame, w: WeightFunction, i: int, j: int, tol: float = 1e-9) -> float:
    """``n * (phi_i - phi_j)``, computed two ways and cross-checked."""
    n = game.n_players
    _check_pair(n, i, j)
    phi = semivalue_from_table(game.table, w)
    direct = n * (phi[i] - phi[j])
    c = pair_weights(w)
    stratified = math.fsum(
        c[k - 1] * math.comb(n - 2, k - 1) * mean_delta_k(game, i, j, k) for k in range(1, n)
    )
    if abs(direct - stratified) > tol * max(1.0, abs(direct)):
        raise ConsistencyError(f"scaled difference mismatch: {direct} vs {stratified}")
    return direct


def is_tau_distinguishable(game: TabulatedGame, i: int, j: int, tau: float) -> bool:
    """True when the averaged size-``k`` gap is at least ``tau`` for every ``k``."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return all(mean_delta_k(game, i, j, k) >= tau for k in range(1, game.n_players))


def difference_vector(n: int, w: WeightFunction, i: int, j: int) -> np.ndarray:
    """The ``a`` with ``scaled_difference(U) == a @ U.table``."""
    _check_pair(n, i, j)
    a = np.zeros(2**n)
    c = pair_weights(w)
    for size in range(n - 1):
        for s in _others_subsets(n, i, j, size):
            a[s | (1 << i)] = c[size]
            a[s | (1 << j)] = -c[size]
    return a


def safety_margin_closed_form(n: int, tau: float, w: WeightFunction) -> float:
    """``tau * sqrt((sum_k C_k c_k)**2 / sum_k C_k c_k**2)`` with ``C_k = C(n-2, k-1)``
    and ``c_k = w(k) + w(k+1)``."""
    if n < 2 or tau <= 0:
        raise ValueError("need n >= 2 and tau > 0")
    c = pair_weights(w)
    binom = np.array([math.comb(n - 2, k - 1) for k in range(1, n)], dtype=float)
    num = math.fsum(binom * c) ** 2
    den = math.fsum(binom * c * c)
    return tau * math.sqrt(num / den)


@dataclass
class RobustnessReport:
    tau: float
    epsilon_found: float
    w_name: str
    thresholded: bool
    closed_form: float
    converged: bool
    pair: tuple[int, int]
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def _least_distinguishable(n: int, tau: float, a: np.ndarray, i: int, j: int, floor: float | None):
    """Solve ``min a @ U`` over tables whose averaged gaps are all >= tau."""
    rows, rhs = [], []
    for k in range(1, n):
        row = np.zeros(2**n)
        scale = 1.0 / math.comb(n - 2, k - 1)
        for s in _others_subsets(n, i, j, k - 1):
            row[s | (1 << i)] -= scale
            row[s | (1 << j)] += scale
        rows.append(row)
        rhs.append(-tau)
    bounds = [(floor, None)] * 2**n if floor is not None else [(0.0, None)] * 2**n
    res = linprog(a, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x


def _hinge(x: np.ndarray, cut: float) -> np.ndarray:
    return np.maximum(x - cut, 0.0)


def _min_flip_distance(u: np.ndarray, a: np.ndarray, cut: float | None, rng: np.random.Generator, restarts: int):
    """Smallest ``||u_hat - u||`` with ``D(u) * D(u_hat) <= 0``; hinge applied when ``cut`` is set."""
    transform = (lambda x: x) if cut is None else (lambda x: _hinge(x, cut))
    d0 = float(a @ transform(u))
    if d0 <= 0:
        return 0.0, True
    projection = u - (a @ u) / (a @ a) * a
    best = math.inf
    ok = False
    if a @ transform(projection) <= 1e-12:
        best = float(np.linalg.norm(projection - u))
        ok = True
    if cut is None:
        return best, ok

    span = float(np.linalg.norm(projection - u)) + 1.0
    for _ in range(restarts):
        x0 = u + rng.normal(scale=span, size=u.shape) / math.sqrt(len(u))
        res = minimize(
            lambda x: float(np.sum((x - u) ** 2)),
            x0,
            jac=lambda x: 2 * (x - u),
            constraints=[{"type": "ineq", "fun": lambda x: -float(a @ transform(x))}],
            method="SLSQP",
            options={"maxiter": 500, "ftol": 1e-14},
        )
        if a @ transform(res.x) <= 1e-9:
            ok = True
            best = min(best, float(np.linalg.norm(res.x - u)))
    return best, ok


def brute_force_safety_margin(
    n: int,
    tau: float,
    w: WeightFunction,
    policy: ThresholdPolicy | None = None,
    *,
    restarts: int = 8,
    seed: int = 0,
) -> RobustnessReport:
    """Numerically minimize the sign-flipping perturbation over all player pairs.

    For every pair the least-separated tau-distinguishable table is found by
    linear programming, then the nearest table whose scaled difference has the
    opposite (or zero) sign is found by hyperplane projection; with a hinge
    policy the flip is measured after the hinge and confirmed with constrained
    optimization from random starts. Hinged searches keep every utility above
    the cutoff (``floor = cutoff + tau``).
    """
    if not 2 <= n <= 5:
        raise ValueError("brute force is limited to 2 <= n <= 5")
    if w.n != n:
        raise ValueError("weight function size does not match n")
    policy = policy or ThresholdPolicy()
    hinged = policy.mode is ThresholdMode.HINGE
    cut = policy.cutoff(1.0) if hinged else None
    floor = cut + tau if hinged else None
    rng = np.random.default_rng(seed)

    best, best_pair, converged = math.inf, (0, 1), True
    for i, j in itertools.permutations(range(n), 2):
        a = difference_vector(n, w, i, j)
        u = _least_distinguishable(n, tau, a, i, j, floor)
        if u is None:
            converged = False
            continue
        dist, ok = _min_flip_distance(u, a, cut, rng, restarts)
        converged &= ok
        if dist < best:
            best, best_pair = dist, (i, j)
    return RobustnessReport(
        tau=tau,
        epsilon_found=best,
        w_name=w.name,
        thresholded=hinged,
        closed_form=safety_margin_closed_form(n, tau, w),
        converged=converged and math.isfinite(best),
        pair=best_pair,
        n=n,
    )


def random_weight_function(n: int, rng: np.random.Generator) -> WeightFunction:
    """Positive weights rescaled to satisfy the semivalue normalization."""
    raw = rng.random(n) + 1e-3
    total = sum(math.comb(n - 1, j) * raw[j] for j in range(n))
    return WeightFunction(n, tuple(float(x) for x in raw * (n / total)), "random")


def named_weights(name: str, n: int) -> WeightFunction:
    if name == "banzhaf":
        return banzhaf_weights(n)
    if name == "shapley":
        return shapley_weights(n)
    raise ValueError(f"unknown weight function {name!r}")
