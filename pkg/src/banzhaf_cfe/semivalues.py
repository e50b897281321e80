"""Exact and sampled semivalues over coalition games.

Coalitions are boolean rows over the ordered player sequence. Sample streams
are drawn row by row from one generator, so a larger sample count always
extends a smaller one with the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from banzhaf_cfe.game import CoalitionGame, ThresholdPolicy, all_coalitions, coalition_keys

EXACT_CAP = 20
_CHUNK_ROWS = 1 << 18


class Method(str, Enum):
    EXACT_SEMIVALUE = "exact-semivalue"
    EXACT_SHAPLEY = "exact-shapley"
    EXACT_BANZHAF = "exact-banzhaf"
    SHAPLEY_PERM_MC = "shapley-perm-mc"
    BANZHAF_MC = "banzhaf-mc"
    BANZHAF_MSR = "banzhaf-msr"


@dataclass(frozen=True)
class WeightFunction:
    """Size weights ``w(1..n)`` with ``sum_j C(n-1, j-1) w(j) = n``."""

    n: int
    w: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1 or len(self.w) != self.n:
            raise ValueError("need exactly n weights, n >= 1")
        total = normalization(self.n, self.w)
        if not math.isclose(total, self.n, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"weights not normalized: sum C(n-1,j-1) w(j) = {total}, want {self.n}")

    def __call__(self, j: int) -> float:
        """``w(j)`` for ``1 <= j <= n``; ``w(n+1)`` is 0 by convention."""
        if j == self.n + 1:
            return 0.0
        return self.w[j - 1]

    def array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)


def normalization(n: int, w: Sequence[float]) -> float:
    terms = []
    for j, wj in enumerate(w, start=1):
        if wj == 0:
            continue
        log_c = math.lgamma(n) - math.lgamma(j) - math.lgamma(n - j + 1)
        terms.append(math.copysign(math.exp(log_c + math.log(abs(wj))), wj))
    return math.fsum(terms)


def shapley_weights(n: int) -> WeightFunction:
    """``w(j) = 1 / C(n-1, j-1)``, i.e. ``n (j-1)! (n-j)! / n!``, computed exactly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = tuple(float(Fraction(1, math.comb(n - 1, j - 1))) for j in range(1, n + 1))
    return WeightFunction(n, w, "shapley")


def banzhaf_weights(n: int) -> WeightFunction:
    """Constant ``w(j) = n / 2**(n-1)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c = float(Fraction(n, 2 ** (n - 1)))
    return WeightFunction(n, (c,) * n, "banzhaf")


@dataclass(frozen=True)
class SamplePolicy:
    """``count`` coalitions; ``size=None`` draws from the uniform power set,
    an integer draws uniformly among coalitions of exactly that size."""

    count: int = 1500
    size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size is not None and self.size < 0:
            raise ValueError("size must be >= 0")


@dataclass
class SemivalueResult:
    values: np.ndarray
    method: Method
    players: tuple = ()
    samples_used: int = 0
    utility_calls: int = 0
    pruned_count: int = 0
    skipped_count: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        keys = self.players or tuple(range(len(self.values)))
        return {k: float(v) for k, v in zip(keys, self.values)}


def _players(game) -> tuple:
    return tuple(getattr(game, "players", range(game.n_players)))


def _popcount(idx: np.ndarray) -> np.ndarray:
    counts = np.zeros(idx.shape, dtype=np.int64)
    x = idx.copy()
    while np.any(x):
        counts += x & 1
        x >>= 1
    return counts


# -- exact --------------------------------------------------------------------


def semivalue_from_table(table: np.ndarray, w: WeightFunction) -> np.ndarray:
    """Apply the weighted marginal-contribution sum to a full utility table."""
    n = w.n
    idx = np.arange(2**n, dtype=np.int64)
    size = _popcount(idx)
    weights = w.array() / n
    out = np.empty(n)
    for i in range(n):
        bit = np.int64(1) << i
        without = idx[(idx & bit) == 0]
        marg = table[without | bit] - table[without]
        out[i] = float(np.sum(weights[size[without]] * marg))
    return out


def exact_semivalue(
    game: CoalitionGame,
    w: WeightFunction,
    policy: ThresholdPolicy | None = None,
    cap: int = EXACT_CAP,
    method: Method = Method.EXACT_SEMIVALUE,
) -> SemivalueResult:
    """Full enumeration; pruned coalitions count as utility 0."""
    n = game.n_players
    if n > cap:
        raise ValueError(f"{n} players exceeds the enumeration cap {cap}; use an estimator")
    if w.n != n:
        raise ValueError("weight function size does not match the game")
    policy = policy or ThresholdPolicy()
    before = game.utility_calls
    raw = game.values(all_coalitions(n))
    table, pruned = policy.apply(raw, game.scale)
    values = semivalue_from_table(table, w)
    return SemivalueResult(
        values, method, _players(game), 2**n, game.utility_calls - before, int(pruned.sum())
    )


def exact_shapley(game, policy=None, cap=EXACT_CAP) -> SemivalueResult:
    return exact_semivalue(game, shapley_weights(game.n_players), policy, cap, Method.EXACT_SHAPLEY)


def exact_banzhaf(game, policy=None, cap=EXACT_CAP) -> SemivalueResult:
    return exact_semivalue(game, banzhaf_weights(game.n_players), policy, cap, Method.EXACT_BANZHAF)


# -- sampling helpers ---------------------------------------------------------


def _fixed_size_rows(keys: np.ndarray, size: int) -> np.ndarray:
    """Rows with the ``size`` smallest keys set; keys of excluded players are >= 1."""
    if size <= 0:
        return np.zeros(keys.shape, dtype=bool)
    kth = np.partition(keys, size - 1, axis=-1)[..., size - 1 : size]
    return keys <= kth


def sample_coalitions(n: int, count: int, size: int | None, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. coalitions over ``n`` players (uniform power set or fixed size)."""
    keys = rng.random((count, n))
    if size is None:
        return keys < 0.5
    return _fixed_size_rows(keys, min(size, n))


# -- estimators ---------------------------------------------------------------


def shapley_perm_mc(
    game: CoalitionGame,
    num_permutations: int,
    policy: ThresholdPolicy | None = None,
    rng: np.random.Generator | int | None = None,
) -> SemivalueResult:
    """Average marginal contribution along random player orderings."""
    if num_permutations < 1:
        raise ValueError("num_permutations must be >= 1")
    rng = np.random.default_rng(rng)
    policy = policy or ThresholdPolicy()
    n = game.n_players
    before = game.utility_calls
    total = np.zeros(n)
    pruned = 0
    steps = np.arange(n + 1)[:, None]
    per_chunk = max(1, _CHUNK_ROWS // (n + 1))
    done = 0
    while done < num_permutations:
        p = min(per_chunk, num_permutations - done)
        perms = np.argsort(rng.random((p, n)), axis=1)
        rank = np.argsort(perms, axis=1)
        prefixes = rank[:, None, :] < steps[None, :, :]  # (p, n+1, n)
        raw = game.values(prefixes.reshape(-1, n)).reshape(p, n + 1)
        vals, mask = policy.apply(raw, game.scale)
        pruned += int(mask.sum())
        marg = np.diff(vals, axis=1)  # marg[:, t] belongs to perms[:, t]
        np.add.at(total, perms.ravel(), marg.ravel())
        done += p
    return SemivalueResult(
        total / num_permutations,
        Method.SHAPLEY_PERM_MC,
        _players(game),
        num_permutations,
        game.utility_calls - before,
        pruned,
    )


def banzhaf_mc(
    game: CoalitionGame, policy: ThresholdPolicy | None = None, sample: SamplePolicy | None = None
) -> SemivalueResult:
    """Per-player Monte Carlo: ``count`` subsets of the other players for each player.

    Costs ``2 * count * n`` utility calls before memoization.
    """
    policy = policy or ThresholdPolicy()
    sample = sample or SamplePolicy()
    rng = np.random.default_rng(sample.seed)
    n = game.n_players
    before = game.utility_calls
    sums = np.zeros(n)
    pruned = 0
    eye = np.eye(n, dtype=bool)
    per_chunk = max(1, _CHUNK_ROWS // (n * n))
    done = 0
    while done < sample.count:
        m = min(per_chunk, sample.count - done)
        keys = rng.random((m, n, n))  # [sample, player, :]
        if sample.size is None:
            without = (keys < 0.5) & ~eye
        else:
            keys = np.where(eye, 2.0, keys)
            without = _fixed_size_rows(keys, min(sample.size, n - 1))
        with_i = without | eye
        rows = np.concatenate([without.reshape(-1, n), with_i.reshape(-1, n)])
        raw = game.values(rows)
        vals, mask = policy.apply(raw, game.scale)
        pruned += int(mask.sum())
        lo, hi = vals[: m * n].reshape(m, n), vals[m * n :].reshape(m, n)
        sums += (hi - lo).sum(axis=0)
        done += m
    return SemivalueResult(
        sums / sample.count,
        Method.BANZHAF_MC,
        _players(game),
        sample.count,
        game.utility_calls - before,
        pruned,
    )


def _msr_from_values(coalitions: np.ndarray, vals: np.ndarray) -> np.ndarray:
    inside = coalitions.sum(axis=0)
    outside = len(coalitions) - inside
    sum_in = coalitions.T.astype(float) @ vals
    sum_out = (~coalitions).T.astype(float) @ vals
    ok = (inside > 0) & (outside > 0)
    est = np.zeros(coalitions.shape[1])
    est[ok] = sum_in[ok] / inside[ok] - sum_out[ok] / outside[ok]
    return est


def msr_estimate(coalitions: np.ndarray, utilities: Sequence[float]) -> np.ndarray:
    """Maximum-sample-reuse Banzhaf estimate from fixed samples and their utilities.

    Each player's value is the mean utility of samples containing it minus the
    mean over samples without it, or 0 when either group is empty.
    """
    return _msr_from_values(np.asarray(coalitions, dtype=bool), np.asarray(utilities, dtype=float))


def banzhaf_msr(
    game: CoalitionGame,
    policy: ThresholdPolicy | None = None,
    sample: SamplePolicy | None = None,
    prune_patience: int = 2,
) -> SemivalueResult:
    """Maximum-sample-reuse Banzhaf estimator; one utility call per sampled coalition.

    Under a pruning policy (``b > 0``) pruned coalitions contribute utility 0.
    A player is exhausted once it has been in at least ``prune_patience``
    pruned samples. A coalition not evaluated yet whose members are all
    exhausted is predicted pruned and skipped without a utility call. Raising
    ``b`` only adds pruned samples, so it never adds utility calls.
    """
    policy = policy or ThresholdPolicy()
    sample = sample or SamplePolicy()
    rng = np.random.default_rng(sample.seed)
    n = game.n_players
    before = game.utility_calls
    coalitions = sample_coalitions(n, sample.count, sample.size, rng)

    skipped = 0
    if not policy.prunes:
        vals, pruned = policy.apply(game.values(coalitions), game.scale)
    else:
        vals, pruned, skipped = _msr_pruned_pass(game, coalitions, policy, prune_patience)

    return SemivalueResult(
        _msr_from_values(coalitions, vals),
        Method.BANZHAF_MSR,
        _players(game),
        sample.count,
        game.utility_calls - before,
        int(np.sum(pruned)),
        skipped,
    )


def _block_bounds(count: int, first: int = 16) -> list[int]:
    """Block edges with doubling sizes: 0, 16, 48, 112, ... , count."""
    bounds, size = [0], first
    while bounds[-1] < count:
        bounds.append(min(count, bounds[-1] + size))
        size *= 2
    return bounds


def _msr_pruned_pass(game, coalitions, policy, patience):
    """Decide block by block which samples to evaluate; skips use the counts at block start.

    Blocks double in size so early decisions react quickly while the number of
    passes stays logarithmic in the sample count.
    """
    count, n = coalitions.shape
    cutoff = policy.cutoff(game.scale)
    peek = getattr(game, "is_cached", None)
    keys = coalition_keys(coalitions)
    hits = np.zeros(n, dtype=np.int64)  # pruned appearances
    known: dict = {}
    precached: dict = {}  # key -> already in the game's memo before this pass
    vals = np.full(count, np.nan)
    skipped = 0
    edges = _block_bounds(count)
    for lo, hi in zip(edges[:-1], edges[1:]):
        rows = coalitions[lo:hi]
        exhausted = hits >= patience
        doomed = (rows.any(axis=1) & (~rows | exhausted).all(axis=1)).tolist()
        todo, decided = [], set()
        for t, key in enumerate(keys[lo:hi]):
            if key in known or key in decided:
                continue
            decided.add(key)
            if not doomed[t]:
                todo.append(t)
            elif peek is not None:
                if key not in precached:
                    precached[key] = peek(rows[t])
                if precached[key]:
                    todo.append(t)
        if todo:
            for t, u in zip(todo, game.values(rows[todo])):
                known[keys[lo + t]] = float(u)
        for t, key in enumerate(keys[lo:hi]):
            if key in known:
                vals[lo + t] = known[key]
            else:
                skipped += 1
        part = vals[lo:hi]
        low = np.isnan(part) | (part < cutoff)
        hits += rows[low].sum(axis=0)
    pruned = np.isnan(vals) | (vals < cutoff)
    return np.where(pruned, 0.0, vals), pruned, skipped


# -- selection and budgets ----------------------------------------------------


def top_k(result: SemivalueResult | np.ndarray, k: int) -> list:
    """Indices (or player ids) of the ``k`` largest values; ties go to the lower index."""
    values = np.asarray(result.values if isinstance(result, SemivalueResult) else result, dtype=float)
    n = len(values)
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    order = np.lexsort((np.arange(n), -values))[:k]
    players = result.players if isinstance(result, SemivalueResult) and result.players else None
    return [players[i] for i in order] if players else [int(i) for i in order]


def _check_eps_delta(epsilon: float, delta: float) -> None:
    if epsilon <= 0 or not 0 < delta < 1:
        raise ValueError("need epsilon > 0 and 0 < delta < 1")


def required_samples_mc(n: int, epsilon: float, delta: float) -> int:
    """Utility calls for per-player MC to rank every epsilon-separated pair w.p. 1 - delta."""
    _check_eps_delta(epsilon, delta)
    return math.ceil(4 * n / epsilon**2 * math.log(2 * n / delta))


def required_samples_msr(n: int, epsilon: float, delta: float) -> int:
    """Utility calls for the MSR estimator under the same guarantee."""
    _check_eps_delta(epsilon, delta)
    return math.ceil(128 / epsilon**2 * math.log(5 * n / delta))


def mc_count_for_budget(calls: int, n: int) -> int:
    """Per-player sample count that fits ``calls`` utility calls (two per sample)."""
    return max(1, calls // (2 * n))
