"""Wallet value recursions: Monte Carlo tables, bounds, and exact small oracles.

The behavioral value of a wallet C under trip rate lam and lognormal fares:

    V(C)  = V(f(C)) + rate * E_p[ max_c { min(v_c, p) + V(f(C, c)) } - V(f(C)) ]
    V({c0}) = 0

where f(C, c) = step_set(C, c) and the max runs over every group including
c0 (whose bracket term is exactly V(f(C))), so the expectation is the mean of
a nonnegative surplus. Tables are filled bottom-up along the topological
order of the reachable closure; expectations are sample means over a shared
("common random numbers") fare draw, or per-state substreams keyed by the
canonical state when CRN is off.

Three rate choices give the three table kinds:
    hat:   rate = profile.lambda_hat                       (behavioral value)
    lower: rate = lambda0                                  (wallet ignored)
    upper: rate = clamp(lambda0 + kappa * surplus, 0, 1)   (wallet boosts trips)

value_optimal_oracle evaluates the same recursion with exact finite-support
expectations and an explicit trip-utility draw u:

    V*(C) = V*(f(C)) + lam * E_u[ max(u + M(C) - V*(f(C)), 0) - max(u, 0) ]
    M(C)  = E_p max_c { min(v_c, p) + V*(f(C, c)) }

value_bounds_exact computes the matching exact-expectation envelope whose
selection probabilities come from the oracle itself, so lower <= V* <= upper
holds state-by-state up to float rounding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .coupon_core import (
    CouponGroup,
    CouponSet,
    DEFAULT_GROUP,
    EMPTY_SET,
    REACHABLE_CAP,
    coupon_set_from_obj,
    coupon_set_to_obj,
    make_coupon_set,
    reachable_union,
    step_set,
)
from .errors import CapacityError, DomainError, NumericError, ValidationError

__all__ = [
    "TravelerProfile",
    "McConfig",
    "SelectionRateModel",
    "DiscreteDistribution",
    "ValueTable",
    "value_hat",
    "value_hat_many",
    "value_hat_single",
    "value_bounds",
    "value_optimal_oracle",
    "value_bounds_exact",
    "delta_value",
    "default_chain",
    "single_value",
    "value_table_to_obj",
    "value_table_from_obj",
]

ORACLE_STATE_CAP = 10**4
ORACLE_SUPPORT_CAP = 100


@dataclass(frozen=True)
class TravelerProfile:
    """Per-traveler primitives: daily trip rate and lognormal fare moments."""

    lambda_hat: float
    mu_p: float
    sigma_p: float

    def __post_init__(self):
        if not (0.0 <= self.lambda_hat <= 1.0):
            raise ValidationError(f"lambda_hat must lie in [0, 1], got {self.lambda_hat}")
        if not math.isfinite(self.mu_p):
            raise ValidationError(f"mu_p must be finite, got {self.mu_p}")
        if not (self.sigma_p >= 0.0 and math.isfinite(self.sigma_p)):
            raise ValidationError(f"sigma_p must be finite and >= 0, got {self.sigma_p}")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings for expectation estimates inside table builds."""

    samples: int = 10_000
    seed: int = 0
    common_random_numbers: bool = True

    def __post_init__(self):
        if not isinstance(self.samples, int) or self.samples < 1:
            raise ValidationError(f"samples must be a positive int, got {self.samples!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative int, got {self.seed!r}")


@dataclass(frozen=True)
class SelectionRateModel:
    """Trip rate response to the wallet's per-trip coupon gain.

    The gain shifts the log-odds of the wallet-blind rate:
    rate(s) = sigmoid(logit(base_rate) + value_slope * s), the same link the
    promotion simulator uses for its trip draw. Zero slope or zero surplus
    returns base_rate itself, so paired recursions built from shared fare
    draws collapse to equality in that case.
    """

    base_rate: float
    value_slope: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.base_rate <= 1.0):
            raise ValidationError(f"base_rate must lie in [0, 1], got {self.base_rate}")
        if not (self.value_slope >= 0.0 and math.isfinite(self.value_slope)):
            raise ValidationError(f"value_slope must be >= 0, got {self.value_slope}")

    def rate(self, surplus: float) -> float:
        shift = self.value_slope * surplus
        if shift == 0.0 or self.base_rate in (0.0, 1.0):
            return self.base_rate
        z = math.log(self.base_rate / (1.0 - self.base_rate)) + shift
        if z < -700.0:      # exp() overflows past the double range
            return 0.0
        if z > 700.0:
            return 1.0
        return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution; probabilities are normalized on entry."""

    atoms: tuple
    probs: tuple

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        probs = tuple(float(q) for q in self.probs)
        if len(atoms) == 0 or len(atoms) != len(probs):
            raise ValidationError("atoms and probs must be equal-length and nonempty")
        if any(not math.isfinite(a) for a in atoms):
            raise ValidationError("atoms must be finite")
        if any(q < 0 or not math.isfinite(q) for q in probs):
            raise ValidationError("probs must be finite and >= 0")
        total = sum(probs)
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-6):
            raise ValidationError(f"probs must sum to 1 (got {total})")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", tuple(q / total for q in probs))

    def as_arrays(self):
        return np.asarray(self.atoms, dtype=float), np.asarray(self.probs, dtype=float)


@dataclass
class ValueTable:
    """kind + canonical-state -> value map, plus the provenance that built it."""

    kind: str
    entries: dict[CouponSet, float]
    profile: TravelerProfile | None = None
    mc: McConfig | None = None
    meta: dict = field(default_factory=dict)

    def value(self, C: CouponSet) -> float:
        try:
            return self.entries[C]
        except KeyError:
            raise DomainError(f"state {C.groups} not present in this {self.kind} table") from None

    def __contains__(self, C: CouponSet) -> bool:
        return C in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# ----------------------------------------------------------- sample streams

def _state_seed(seed: int, key: str) -> np.random.SeedSequence:
    digest = hashlib.blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
    return np.random.SeedSequence(int.from_bytes(digest, "big"))


def _fare_samples(profile: TravelerProfile, mc: McConfig, key: str | None = None) -> np.ndarray:
    """Lognormal fare draw; key=None uses the shared (CRN) stream."""
    if key is None:
        rng = np.random.default_rng(mc.seed)
    else:
        rng = np.random.default_rng(_state_seed(mc.seed, key))
    z = rng.standard_normal(mc.samples)
    with np.errstate(over="ignore"):
        fares = np.exp(profile.mu_p + profile.sigma_p * z)
    if not np.all(np.isfinite(fares)):
        raise NumericError("fare samples overflowed; check mu_p/sigma_p")
    return fares


# ------------------------------------------------------------- table builds

def _build_table(roots, profile, mc, rate_of_surplus, kind, meta, cap) -> ValueTable:
    states = reachable_union(roots, cap)
    shared = _fare_samples(profile, mc) if mc.common_random_numbers else None
    values: dict[CouponSet, float] = {}
    for C in states:
        if C.is_empty:
            values[C] = 0.0
            continue
        fares = shared if shared is not None else _fare_samples(profile, mc, C.key_str())
        base = values[step_set(C)]
        best = np.full(fares.shape, base)
        for g in C.non_default:
            np.maximum(best, np.minimum(fares, g.v) + values[step_set(C, g)], out=best)
        surplus = float(np.mean(np.maximum(best - base, 0.0)))
        val = base + rate_of_surplus(surplus) * surplus
        if not math.isfinite(val):
            raise NumericError(f"non-finite value at state {C.groups}")
        values[C] = val
    return ValueTable(kind=kind, entries=values, profile=profile, mc=mc, meta=dict(meta))


def value_hat_many(roots, profile: TravelerProfile, mc: McConfig = McConfig(),
                   cap: int = REACHABLE_CAP) -> ValueTable:
    """Behavioral value table covering the union closure of several root states."""
    lam = profile.lambda_hat
    return _build_table(list(roots), profile, mc, lambda s: lam, "hat", {}, cap)


def value_hat(C: CouponSet, profile: TravelerProfile, mc: McConfig = McConfig(),
              cap: int = REACHABLE_CAP) -> ValueTable:
    """Behavioral value table over the reachable closure of C."""
    return value_hat_many([C], profile, mc, cap)


def value_hat_single(v: float, T: int, profile: TravelerProfile,
                     mc: McConfig = McConfig()) -> float:
    """One-coupon shortcut recursion.

    V(v, t) = V(v, t-1) + lam * E max(min(p, v) - V(v, t-1), 0), V = 0 below
    t = 0 or at v = 0. With common random numbers this reproduces
    value_hat({c0, <v,T,1>}) bit for bit (same shared fare draw, same
    operation order).
    """
    v = float(v)
    if not v >= 0.0:
        raise ValidationError(f"face value must be >= 0, got {v}")
    if v == 0.0 or T < 0:
        return 0.0
    key = None if mc.common_random_numbers else f"single:{v!r}"
    fares = _fare_samples(profile, mc, key)
    m = np.minimum(fares, v)
    lam = profile.lambda_hat
    val = 0.0
    for _ in range(T + 1):
        val = val + lam * float(np.mean(np.maximum(m - val, 0.0)))
    if not math.isfinite(val):
        raise NumericError("non-finite single-coupon value")
    return val


def value_bounds(C: CouponSet, profile: TravelerProfile, sel: SelectionRateModel,
                 mc: McConfig = McConfig(), cap: int = REACHABLE_CAP):
    """(lower, upper) tables around the optimal wallet value.

    The lower table uses the wallet-blind rate (base_rate alone); the upper
    lets the wallet surplus lift the rate through sel.rate. With common
    random numbers and value_slope = 0 the two tables coincide exactly.
    """
    meta = {"base_rate": sel.base_rate, "value_slope": sel.value_slope}
    lower = _build_table([C], profile, mc, lambda s: sel.base_rate, "lower", meta, cap)
    upper = _build_table([C], profile, mc, sel.rate, "upper", meta, cap)
    return lower, upper


# ------------------------------------------------------------ exact oracles

def _check_supports(fare_support: DiscreteDistribution, u_support: DiscreteDistribution):
    for name, dist in (("fare", fare_support), ("utility", u_support)):
        if len(dist.atoms) > ORACLE_SUPPORT_CAP:
            raise CapacityError(
                f"{name} support has {len(dist.atoms)} atoms (cap {ORACLE_SUPPORT_CAP})",
                size=len(dist.atoms),
            )
    if any(a < 0 for a in fare_support.atoms):
        raise ValidationError("fare atoms must be >= 0")


def _redeem_expectation(C, values, fare_atoms, fare_probs):
    """E_p max_c { min(v_c, p) + values[f(C, c)] } over a finite fare support."""
    best = np.full(fare_atoms.shape, values[step_set(C)])
    for g in C.non_default:
        np.maximum(best, np.minimum(fare_atoms, g.v) + values[step_set(C, g)], out=best)
    return float(fare_probs @ best)


def value_optimal_oracle(C: CouponSet, lam: float, fare_support: DiscreteDistribution,
                         u_support: DiscreteDistribution,
                         cap: int = ORACLE_STATE_CAP) -> ValueTable:
    """Exact optimal values on finite fare/trip-utility supports (small states)."""
    if not (0.0 <= lam <= 1.0):
        raise ValidationError(f"lam must lie in [0, 1], got {lam}")
    _check_supports(fare_support, u_support)
    fare_atoms, fare_probs = fare_support.as_arrays()
    u_atoms, u_probs = u_support.as_arrays()
    base_u = float(u_probs @ np.maximum(u_atoms, 0.0))
    states = reachable_union([C], cap)
    values: dict[CouponSet, float] = {}
    for S in states:
        if S.is_empty:
            values[S] = 0.0
            continue
        vf = values[step_set(S)]
        m = _redeem_expectation(S, values, fare_atoms, fare_probs)
        inc = float(u_probs @ np.maximum(u_atoms + (m - vf), 0.0)) - base_u
        values[S] = vf + lam * inc
    meta = {"lam": lam, "fare_support": fare_support, "u_support": u_support}
    return ValueTable(kind="oracle", entries=values, meta=meta)


def value_bounds_exact(C: CouponSet, lam: float, fare_support: DiscreteDistribution,
                       u_support: DiscreteDistribution, cap: int = ORACLE_STATE_CAP):
    """Exact-expectation envelope around value_optimal_oracle.

    Selection probabilities follow the optimal traveler: the lower recursion
    conditions them on the empty wallet (P(u >= 0)), the upper on the actual
    wallet via the oracle's own surplus. Returns (lower, upper) tables over
    the same states as the oracle.
    """
    star = value_optimal_oracle(C, lam, fare_support, u_support, cap)
    fare_atoms, fare_probs = fare_support.as_arrays()
    u_atoms, u_probs = u_support.as_arrays()
    p_u_pos = float(u_probs @ (u_atoms >= 0.0))
    lower: dict[CouponSet, float] = {}
    upper: dict[CouponSet, float] = {}
    for S in star.entries:  # insertion order is already topological
        if S.is_empty:
            lower[S] = upper[S] = 0.0
            continue
        nxt = step_set(S)
        g_star = _redeem_expectation(S, star.entries, fare_atoms, fare_probs) - star.entries[nxt]
        p_sel = float(u_probs @ (u_atoms + g_star >= 0.0))
        lo_f = lower[nxt]
        lower[S] = lo_f + lam * p_u_pos * (
            _redeem_expectation(S, lower, fare_atoms, fare_probs) - lo_f
        )
        up_f = upper[nxt]
        upper[S] = up_f + lam * p_sel * (
            _redeem_expectation(S, upper, fare_atoms, fare_probs) - up_f
        )
    meta = {"lam": lam, "exact": True}
    return (
        ValueTable(kind="lower", entries=lower, meta=dict(meta)),
        ValueTable(kind="upper", entries=upper, meta=dict(meta)),
    )


# ------------------------------------------------------------- diagnostics

def default_chain(C: CouponSet, horizon: int) -> list[CouponSet]:
    """[C, f(C), f(f(C)), ...] out to the given number of aging steps."""
    chain = [C]
    for _ in range(horizon):
        chain.append(step_set(chain[-1]))
    return chain


def delta_value(table: ValueTable, C: CouponSet, c: CouponGroup, horizon: int) -> list[float]:
    """Option value of still holding one coupon from group c, per aging step.

    Entry t (t = 1..horizon) compares aging the full wallet t steps against
    redeeming from c now and aging t-1 steps:

        dV(t) = table[f^(t)(C)] - table[f^(t-1)(f(C, c))]

    Both paths sit at the same date, so the difference isolates the coupon.
    Missing table states raise DomainError.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    kept = C
    spent = step_set(C, c)
    series = []
    for _ in range(horizon):
        kept = step_set(kept)
        series.append(table.value(kept) - table.value(spent))
        spent = step_set(spent)
    return series


def single_value(table: ValueTable, v: float, T: int) -> float:
    """Continuation value of a lone coupon <v, T>; zero below the boundary."""
    if T < 0 or float(v) == 0.0:
        return 0.0
    return table.value(make_coupon_set([(float(v), T, 1)]))


# -------------------------------------------------------------------- JSON

def value_table_to_obj(table: ValueTable) -> dict:
    order = sorted(table.entries, key=lambda s: (s.horizon, s.groups))
    obj = {
        "kind": table.kind,
        "profile": None,
        "mc": None,
        "entries": [
            {"set": coupon_set_to_obj(S), "value": table.entries[S]} for S in order
        ],
    }
    if table.profile is not None:
        p = table.profile
        obj["profile"] = {"lambda_hat": p.lambda_hat, "mu_p": p.mu_p, "sigma_p": p.sigma_p}
    if table.mc is not None:
        obj["mc"] = {
            "samples": table.mc.samples,
            "seed": table.mc.seed,
            "common_random_numbers": table.mc.common_random_numbers,
        }
    extras = {k: v for k, v in table.meta.items() if isinstance(v, (int, float, bool, str))}
    if extras:
        obj["meta"] = extras
    return obj


def value_table_from_obj(obj) -> ValueTable:
    try:
        kind = obj["kind"]
        entries = {
            coupon_set_from_obj(e["set"]): float(e["value"]) for e in obj["entries"]
        }
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad value table object: {exc}") from exc
    profile = None
    if obj.get("profile"):
        p = obj["profile"]
        profile = TravelerProfile(p["lambda_hat"], p["mu_p"], p["sigma_p"])
    mc = None
    if obj.get("mc"):
        m = obj["mc"]
        mc = McConfig(int(m["samples"]), int(m["seed"]), bool(m["common_random_numbers"]))
    return ValueTable(kind=kind, entries=entries, profile=profile, mc=mc,
                      meta=dict(obj.get("meta", {})))
