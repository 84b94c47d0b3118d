"""Shared test oracles and generators.

Everything here is deliberately independent of the package's table builders:
transitions are recomputed on raw (v, T, n) tuples and expectations come from
closed forms or fresh Monte Carlo, so these routines stay valid checks.
"""

import numpy as np
from scipy.stats import norm

from couponmdp.coupon_core import make_coupon_set
from couponmdp.value_engine import DiscreteDistribution, ValueTable


# ------------------------------------------------- closed-form lognormal bits

def lognormal_emin(a, mu, sigma):
    """E min(p, a) for log p ~ N(mu, sigma^2), a > 0."""
    if sigma == 0.0:
        return min(np.exp(mu), a)
    d = (np.log(a) - mu) / sigma
    return float(np.exp(mu + sigma**2 / 2) * norm.cdf(d - sigma) + a * (1 - norm.cdf(d)))


def lognormal_eput(b, mu, sigma):
    """E max(b - p, 0) for log p ~ N(mu, sigma^2)."""
    if b <= 0.0:
        return 0.0
    if sigma == 0.0:
        return max(b - np.exp(mu), 0.0)
    d = (np.log(b) - mu) / sigma
    return float(b * norm.cdf(d) - np.exp(mu + sigma**2 / 2) * norm.cdf(d - sigma))


def single_coupon_value_closed(v, T, lam, mu, sigma):
    """Exact one-coupon value by the closed-form recursion (valid while V < v)."""
    val = 0.0
    emin = lognormal_emin(v, mu, sigma)
    for _ in range(T + 1):
        assert val < v
        val = val + lam * (emin - val + lognormal_eput(val, mu, sigma))
    return val


# ---------------------------------------------- tuple-space value recursions

def tuple_step(state, chosen=None):
    """Aging/redemption on frozensets of (v, T, n); chosen is a (v, T) key."""
    out = {}
    for v, T, n in state:
        m = n - 1 if chosen == (v, T) else n
        if m >= 1 and T >= 1:
            out[(v, T - 1)] = m
    return frozenset((v, t, m) for (v, t), m in out.items())


def mc_value_recursive(state, lam, mu, sigma, samples, seed):
    """From-scratch recursive wallet value with its own fresh-MC expectations."""
    rng = np.random.default_rng(seed)
    memo = {}

    def V(s):
        if not s:
            return 0.0
        if s in memo:
            return memo[s]
        vf = V(tuple_step(s))
        fares = rng.lognormal(mu, sigma, samples)
        best = np.full(samples, vf)
        for v, T, n in s:
            np.maximum(best, np.minimum(fares, v) + V(tuple_step(s, (v, T))), out=best)
        out = vf + lam * float(np.mean(np.maximum(best - vf, 0.0)))
        memo[s] = out
        return out

    return V(frozenset(state))


def exact_value_recursive(state, lam, fare_support, u_support):
    """Exact optimal value on finite supports, recomputed on raw tuples."""
    fa, fp = np.asarray(fare_support.atoms), np.asarray(fare_support.probs)
    ua, up = np.asarray(u_support.atoms), np.asarray(u_support.probs)
    base_u = float(up @ np.maximum(ua, 0.0))
    memo = {}

    def V(s):
        if not s:
            return 0.0
        if s in memo:
            return memo[s]
        vf = V(tuple_step(s))
        best = np.full(fa.shape, vf)
        for v, T, n in s:
            np.maximum(best, np.minimum(fa, v) + V(tuple_step(s, (v, T))), out=best)
        m = float(fp @ best)
        out = vf + lam * (float(up @ np.maximum(ua + (m - vf), 0.0)) - base_u)
        memo[s] = out
        return out

    return V(frozenset(state))


# --------------------------------------------------------------- generators

def random_small_instance(rng):
    """(C, lam, fare_support, utility_support) with <=2 groups, T<=4, n<=2,
    3-atom supports straddling zero utility."""
    k = int(rng.integers(1, 3))
    groups = {}
    for _ in range(k):
        v = float(rng.integers(1, 7) * 5)
        T = int(rng.integers(0, 5))
        groups[(v, T)] = int(rng.integers(1, 3))
    C = make_coupon_set([(v, T, n) for (v, T), n in groups.items()])
    lam = float(rng.uniform(0.2, 1.0))
    fare_atoms = np.sort(rng.uniform(1.0, 30.0, 3))
    u_atoms = np.sort(rng.uniform(-3.0, 4.0, 3))
    fare_probs = rng.dirichlet(np.ones(3))
    u_probs = rng.dirichlet(np.ones(3))
    fare = DiscreteDistribution(tuple(fare_atoms), tuple(fare_probs))
    util = DiscreteDistribution(tuple(u_atoms), tuple(u_probs))
    return C, lam, fare, util


def random_coupon_set(rng, max_groups=3, max_t=8, max_n=3):
    k = int(rng.integers(1, max_groups + 1))
    groups = {}
    for _ in range(k):
        v = float(rng.integers(1, 8) * 5)
        T = int(rng.integers(0, max_t + 1))
        groups[(v, T)] = int(rng.integers(1, max_n + 1))
    return make_coupon_set([(v, T, n) for (v, T), n in groups.items()])


def fake_value_table(states, rng, scale=20.0):
    """Arbitrary nonnegative values over the given states (normalization and
    gradient tests do not care whether the values solve any recursion)."""
    return ValueTable(kind="hat", entries={s: float(rng.uniform(0, scale)) for s in states})
