"""Coupon awareness: activation records, noticing probabilities, updates.

Each real group of a wallet carries an activation flag I_a: 1 once the
traveler has provably seen the coupon (it sat in the wallet during an earlier
redemption), else 0. A coupon is noticed on a given trip with probability

    q = sigmoid(theta_a + theta_as * I_a)

independently per coupon (coupon_level), or all-or-nothing per group
(group_level). The noticed sub-wallet is an awareness subset of C.

After a trip the flags move with the wallet: a redemption (c != c0) opens the
wallet, so every surviving group's flag turns 1; pure aging keeps each
survivor's flag. Flags follow group identity through T-decrements, so the
state after an update is keyed by the aged (v, T-1) groups. Activation is
monotone: a flag never falls back to 0 while its group lives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .coupon_core import (
    CouponGroup,
    CouponSet,
    DEFAULT_GROUP,
    step_group,
    step_set,
    subset_counts,
)
from .errors import DomainError, ValidationError

__all__ = [
    "AttentionParams",
    "AttentionState",
    "full_attention",
    "awareness_level",
    "awareness_prob",
    "awareness_set_prob",
    "sample_awareness_set",
    "update_attention",
    "attention_to_obj",
    "attention_from_obj",
]


@dataclass(frozen=True)
class AttentionParams:
    theta_a: float
    theta_as: float

    def __post_init__(self):
        if not (math.isfinite(self.theta_a) and math.isfinite(self.theta_as)):
            raise ValidationError("attention parameters must be finite")


@dataclass(frozen=True)
class AttentionState:
    """Activation flags keyed by group identity (v, T) of the current wallet."""

    flags: tuple[tuple[float, int, int], ...]  # ((v, T, I_a), ...) sorted

    def __post_init__(self):
        rows = []
        seen = set()
        for v, T, f in self.flags:
            v = float(v)
            if f not in (0, 1):
                raise ValidationError(f"activation flag must be 0 or 1, got {f!r}")
            if (v, T) in seen:
                raise ValidationError(f"duplicate attention key ({v}, {T})")
            seen.add((v, T))
            rows.append((v, int(T), int(f)))
        object.__setattr__(self, "flags", tuple(sorted(rows)))

    @classmethod
    def from_dict(cls, mapping) -> "AttentionState":
        return cls(tuple((v, T, f) for (v, T), f in mapping.items()))

    def get(self, g: CouponGroup) -> int:
        for v, T, f in self.flags:
            if v == g.v and T == g.T:
                return f
        raise DomainError(f"no activation flag for group ({g.v}, {g.T})")

    def covers(self, C: CouponSet) -> bool:
        keys = {(v, T) for v, T, _ in self.flags}
        return all(g.key() in keys for g in C.non_default)


def full_attention(C: CouponSet, flag: int = 1) -> AttentionState:
    """Uniform flags over every real group of C."""
    return AttentionState(tuple((g.v, g.T, flag) for g in C.non_default))


def awareness_level(params: AttentionParams, activated: int) -> float:
    """Log-odds of noticing a coupon with the given activation flag."""
    return params.theta_a + params.theta_as * activated


def awareness_prob(params: AttentionParams, activated: int) -> float:
    return float(expit(awareness_level(params, activated)))


def awareness_set_prob(C: CouponSet, S_a: AttentionState, params: AttentionParams,
                       C_a: CouponSet, group_level: bool = False) -> float:
    """Probability that the noticed sub-wallet of C is exactly C_a.

    coupon_level: independent noticing per coupon, binomial within groups.
    group_level: each group is noticed whole (counts 0 or n_i only).
    """
    if not S_a.covers(C):
        raise DomainError("attention state does not cover every group of the wallet")
    counts = subset_counts(C, C_a)
    prob = 1.0
    for g, k in zip(C.non_default, counts):
        q = awareness_prob(params, S_a.get(g))
        if group_level:
            if k == 0:
                prob *= 1.0 - q
            elif k == g.n:
                prob *= q
            else:
                raise DomainError(
                    f"group-level awareness admits only 0 or {g.n} coupons of {g}"
                )
        else:
            prob *= math.comb(g.n, k) * q**k * (1.0 - q) ** (g.n - k)
    return prob


def sample_awareness_set(C: CouponSet, S_a: AttentionState, params: AttentionParams,
                         rng: np.random.Generator, group_level: bool = False) -> CouponSet:
    """Draw one noticed sub-wallet of C."""
    if not S_a.covers(C):
        raise DomainError("attention state does not cover every group of the wallet")
    groups = []
    for g in C.non_default:
        q = awareness_prob(params, S_a.get(g))
        if group_level:
            k = g.n if rng.random() < q else 0
        else:
            k = int(rng.binomial(g.n, q))
        if k >= 1:
            groups.append(CouponGroup(g.v, g.T, k))
    return CouponSet((DEFAULT_GROUP, *sorted(groups)))


def update_attention(S_a: AttentionState, C: CouponSet, c: CouponGroup) -> AttentionState:
    """Move the flags through one wallet transition step_set(C, c).

    A redemption (c != c0) turns every survivor's flag to 1; pure aging keeps
    each survivor's prior flag. Keys are re-addressed to the aged groups, so
    the result covers step_set(C, c) exactly.
    """
    if not S_a.covers(C):
        raise DomainError("attention state does not cover every group of the wallet")
    if not c.is_default and C.find(c.v, c.T) is None:
        raise DomainError(f"cannot redeem {c}: no such group in {C.groups}")
    rows = []
    for g in C.non_default:
        m = g.n - 1 if g.key() == c.key() else g.n
        if m < 1:
            continue
        aged = step_group(CouponGroup(g.v, g.T, m))
        if aged.is_default:
            continue
        flag = 1 if not c.is_default else S_a.get(g)
        rows.append((aged.v, aged.T, flag))
    return AttentionState(tuple(rows))


def attention_to_obj(S_a: AttentionState) -> dict:
    """JSON-ready form: {"v,T": flag} keyed like '10.0,3'."""
    return {f"{v!r},{T}": f for v, T, f in S_a.flags}


def attention_from_obj(obj) -> AttentionState:
    if not isinstance(obj, dict):
        raise ValidationError("attention JSON must be an object of 'v,T': flag pairs")
    rows = []
    for key, f in obj.items():
        try:
            v_text, t_text = key.rsplit(",", 1)
            rows.append((float(v_text), int(t_text), int(f)))
        except (ValueError, AttributeError) as exc:
            raise ValidationError(f"bad attention entry {key!r}: {f!r}") from exc
    return AttentionState(tuple(rows))
