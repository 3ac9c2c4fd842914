"""Assurance bounds, the basic-reward cost model and the no-profit check for
hunters that guess instead of solving."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

Number = float | int | Fraction


class RangeError(ValueError):
    pass


class NoSolution(ValueError):
    pass


def _prob(p: Number, name: str = "p") -> Fraction:
    # str() keeps decimal literals exact: Fraction("0.7") == 7/10
    f = p if isinstance(p, Fraction) else Fraction(str(p))
    if not 0 <= f <= 1:
        raise RangeError(f"{name} must lie in [0, 1], got {p}")
    return f


def _count(x: int, name: str) -> int:
    if isinstance(x, bool) or int(x) != x or x < 0:
        raise RangeError(f"{name} must be a non-negative integer, got {x}")
    return int(x)


def failure_mass(m: int, p: Number, T: int) -> Fraction:
    """P[fewer than T effective verifications among m] for Binomial(m, p)."""
    m, T = _count(m, "m"), _count(T, "T")
    q = _prob(p)
    return sum((math.comb(m, k) * q**k * (1 - q) ** (m - k) for k in range(min(T, m + 1))), Fraction(0))


def assurance_exact(m: int, p: Number, T: int) -> Fraction:
    return 1 - failure_mass(m, p, T)


def assurance_probability(m: int, p: Number, T: int) -> float:
    return float(assurance_exact(m, p, T))


def binary_assurance_exact(N: int, m: int, p: Number, T: int) -> Fraction:
    N = _count(N, "N")
    return max(Fraction(0), 1 - N * failure_mass(m, p, T))


def binary_assurance(N: int, m: int, p: Number, T: int) -> float:
    """Union-bound lower bound that all ``N`` functions are verified."""
    return float(binary_assurance_exact(N, m, p, T))


def min_verification_count(p: Number, T: int, target: Number, N: int = 1, limit: int = 1_000_000) -> int:
    q = _prob(p)
    tau = _prob(target, "target")
    if not 0 < tau < 1:
        raise RangeError("target must lie strictly between 0 and 1")
    T = _count(T, "T")
    if T == 0:
        return 0
    if q == 0:
        raise NoSolution("no verification count reaches the target when p = 0")
    m = T
    while m <= limit:
        if binary_assurance_exact(N, m, q, T) >= tau:
            return m
        m += 1
    raise NoSolution(f"target not reached below m = {limit}")


@dataclass(frozen=True)
class CostBreakdown:
    m: int
    submissions: int
    per_bundle: Fraction
    bundles: int
    cost: float


def cost_breakdown(
    N: int, T: int, p: Number, q: Number, bundle_size: int, basic_reward: Number, target: Number = 0.99
) -> CostBreakdown:
    """Each bundle carries ``q * bundle_size`` genuine tasks, sampled uniformly
    over functions, so ``N * m`` genuine submissions need that many bundles."""
    qf = _prob(q, "q")
    per_bundle = qf * _count(bundle_size, "bundleSize")
    if per_bundle < 1:
        raise RangeError("q * bundleSize must be at least one genuine task per bundle")
    m = min_verification_count(p, T, target, N)
    submissions = N * m
    bundles = math.ceil(Fraction(submissions) / per_bundle)
    cost = bundles * Fraction(str(basic_reward))
    return CostBreakdown(m, submissions, per_bundle, bundles, float(cost))


def expected_cost(
    N: int, T: int, p: Number, q: Number, bundle_size: int, basic_reward: Number, target: Number = 0.99
) -> float:
    return cost_breakdown(N, T, p, q, bundle_size, basic_reward, target).cost


# -- guessing strategies ----------------------------------------------------

def profit_analytic(n: int, t: int, P: Number, r_basic: Number = 1) -> Fraction:
    """Expected profit of solving ``t`` of ``n`` tasks (cost ``t/n`` of the
    basic reward) and answering UNSAT on the rest: the reward arrives only
    when all ``n - t`` guessed tasks are genuine."""
    if not 0 <= t <= n or n <= 0:
        raise RangeError(f"need 0 <= t <= n and n > 0, got t={t}, n={n}")
    prob = _prob(P, "P")
    r = Fraction(str(r_basic))
    return r * (prob ** (n - t) - Fraction(t, n))


@dataclass(frozen=True)
class ProfitEstimate:
    mean: float
    stderr: float
    analytic: float
    trials: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - 3 * self.stderr, self.mean + 3 * self.stderr

    @property
    def agrees(self) -> bool:
        lo, hi = self.ci
        return lo - 1e-12 <= self.analytic <= hi + 1e-12


def profit_expectation(
    n: int, t: int, P: float, r_basic: float = 0.021, trials: int = 1_000_000, seed: int = 0
) -> ProfitEstimate:
    """Monte Carlo estimate of the guessing strategy's profit per bundle."""
    if trials <= 0:
        raise RangeError("trials must be positive")
    analytic = float(profit_analytic(n, t, P, r_basic))
    rng = np.random.default_rng(seed)
    cost = r_basic * t / n
    if t == n:
        return ProfitEstimate(r_basic - cost, 0.0, analytic, trials)
    # payoff is r_basic * Bernoulli - cost; the standard error uses the
    # Agresti-Coull proportion so a run with no successes is not a point mass
    wins = int((rng.random((trials, n - t)) < P).all(axis=1).sum())
    mean = r_basic * wins / trials - cost
    adj = (wins + 2) / (trials + 4)
    stderr = r_basic * math.sqrt(adj * (1 - adj) / trials)
    return ProfitEstimate(mean, stderr, analytic, trials)


def guessing_grid(n_max: int = 10, probs: tuple[float, ...] = tuple(k / 10 for k in range(1, 10))):
    """All (n, t, P) with P^(n-t) <= t/n, paired with the analytic profit."""
    for n in range(1, n_max + 1):
        for t in range(n):
            for P in probs:
                if _prob(P) ** (n - t) <= Fraction(t, n):
                    yield n, t, P, profit_analytic(n, t, P)
