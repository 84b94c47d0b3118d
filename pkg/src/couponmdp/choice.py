"""Redemption choice models over a wallet, with optional limited attention.

On a trip with realized fare p the traveler picks one option from wallet C
(a coupon group, or c0 = pay full fare) by a logit over

    score(c) = theta_eps * [ min(v_c, p) + theta_V * V(f(C, c))
                             - theta_v * v_c * extra ] / div(c)

where V comes from a value table, div(c) = v_c under the scaled variant
(c0 keeps divisor 1), and extra adds a transaction-cost term. Flags:

    clip:   whenever some coupon has 0 < v <= p, paying full fare is
            dominated and P(c0) = 0 (the rest renormalizes);
    iid:    groups weigh by their coupon count n_c instead of 1;
    unaware: the traveler only sees a noticed sub-wallet. P(c0) mixes
            pi(c0 | p, C_a) over awareness subsets; conditional on opening
            the wallet the final coupon is re-chosen over the full C minus
            c0 ("attention recovery"), so

        P(c0 | p, C, S_a) = sum_a P(C_a | C, S_a) * pi(c0 | p, C_a)
        P(c  | p, C, S_a) = (1 - P(c0 | ...)) * pi_r(c | p, C minus c0).

Softmaxes are evaluated with a max shift, so theta_eps and fares in the 1e3
range stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .attention import AttentionParams, AttentionState, awareness_set_prob
from .coupon_core import (
    AWARENESS_CAP,
    CouponGroup,
    CouponSet,
    DEFAULT_GROUP,
    enumerate_awareness_subsets,
    step_set,
)
from .errors import DomainError, NumericError, ValidationError
from .value_engine import ValueTable, single_value

__all__ = [
    "ChoiceModelSpec",
    "single_coupon_prob",
    "general_coupon_prob",
    "awareness_conditional_prob",
    "mixture_prob",
    "argmax_choice",
    "spec_to_obj",
    "spec_from_obj",
]

AWARENESS_MODES = ("coupon_level", "group_level")


@dataclass(frozen=True)
class ChoiceModelSpec:
    """Model flags and parameters; theta_a/theta_as matter only when unaware."""

    unaware: bool = False
    clip: bool = False
    extra: bool = False
    scaled: bool = False
    iid: bool = False
    theta_eps: float = 1.0
    theta_V: float = 1.0
    theta_v: float = 0.0
    theta_a: float = 0.0
    theta_as: float = 0.0
    awareness_mode: str = "coupon_level"

    def __post_init__(self):
        if not (self.theta_eps > 0.0 and math.isfinite(self.theta_eps)):
            raise ValidationError(f"theta_eps must be > 0, got {self.theta_eps}")
        for name in ("theta_V", "theta_v", "theta_a", "theta_as"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.awareness_mode not in AWARENESS_MODES:
            raise ValidationError(f"awareness_mode must be one of {AWARENESS_MODES}")

    @property
    def attention(self) -> AttentionParams:
        return AttentionParams(self.theta_a, self.theta_as)

    def with_params(self, **updates) -> "ChoiceModelSpec":
        return replace(self, **updates)


@dataclass
class ScoreBlock:
    """Scores plus per-parameter derivatives for one softmax evaluation.

    d(score)/d(log theta_eps) equals the score itself, so only the theta_V
    and theta_v sensitivities are materialized.
    """

    options: list[CouponGroup]  # c0 first
    scores: np.ndarray
    d_theta_V: np.ndarray
    d_theta_v: np.ndarray
    weights: np.ndarray


def score_block(spec: ChoiceModelSpec, S: CouponSet, p: float, vtable: ValueTable) -> ScoreBlock:
    """Option scores for wallet S at fare p (the c0 row is index 0)."""
    if not (p >= 0.0):
        raise ValidationError(f"fare must be >= 0, got {p}")
    options = [DEFAULT_GROUP, *S.non_default]
    k = len(options)
    scores = np.empty(k)
    d_V = np.empty(k)
    d_v = np.zeros(k)
    weights = np.ones(k)
    succ0 = vtable.value(step_set(S))
    scores[0] = spec.theta_eps * (spec.theta_V * succ0)
    d_V[0] = spec.theta_eps * succ0
    for i, g in enumerate(S.non_default, start=1):
        succ = vtable.value(step_set(S, g))
        z = min(g.v, p) + spec.theta_V * succ
        if spec.extra:
            z -= spec.theta_v * g.v
        div = g.v if spec.scaled else 1.0
        scores[i] = spec.theta_eps * z / div
        d_V[i] = spec.theta_eps * succ / div
        if spec.extra:
            d_v[i] = -spec.theta_eps * g.v / div
        if spec.iid:
            weights[i] = g.n
    if not np.all(np.isfinite(scores)):
        raise NumericError(f"non-finite choice score for wallet {S.groups}")
    return ScoreBlock(options, scores, d_V, d_v, weights)


def softmax_weighted(scores: np.ndarray, weights: np.ndarray,
                     active: np.ndarray | None = None) -> np.ndarray:
    """Max-shifted weighted softmax; inactive options get exactly 0."""
    if active is None:
        active = np.ones(scores.shape, dtype=bool)
    shifted = scores - scores[active].max()
    raw = np.where(active, weights * np.exp(shifted), 0.0)
    return raw / raw.sum()


def _clip_active(spec: ChoiceModelSpec, S: CouponSet, p: float, k: int) -> np.ndarray:
    active = np.ones(k, dtype=bool)
    if spec.clip and any(0.0 < g.v <= p for g in S.non_default):
        active[0] = False
    return active


def general_coupon_prob(spec: ChoiceModelSpec, C: CouponSet, p: float,
                        vtable: ValueTable) -> dict[CouponGroup, float]:
    """Full-awareness choice distribution over C's options (c0 included)."""
    block = score_block(spec, C, p, vtable)
    active = _clip_active(spec, C, p, len(block.options))
    probs = softmax_weighted(block.scores, block.weights, active)
    return dict(zip(block.options, probs.tolist()))


def _restricted_prob(spec: ChoiceModelSpec, C: CouponSet, p: float,
                     vtable: ValueTable) -> dict[CouponGroup, float]:
    """Choice over C minus c0 (attention recovery re-evaluation)."""
    block = score_block(spec, C, p, vtable)
    active = np.ones(len(block.options), dtype=bool)
    active[0] = False
    probs = softmax_weighted(block.scores, block.weights, active)
    return dict(zip(block.options[1:], probs[1:].tolist()))


def awareness_conditional_prob(spec: ChoiceModelSpec, C: CouponSet, C_a: CouponSet,
                               p: float, vtable: ValueTable) -> dict[CouponGroup, float]:
    """Choice distribution over C given that the noticed sub-wallet is C_a.

    The no-redemption branch follows pi(c0 | p, C_a) evaluated on the
    subset's own states; opening the wallet re-selects over the full C.
    """
    if C.is_empty:
        return {DEFAULT_GROUP: 1.0}
    if C_a.is_empty:
        pi0 = 1.0
    else:
        pi0 = general_coupon_prob(spec, C_a, p, vtable)[DEFAULT_GROUP]
    out = {DEFAULT_GROUP: pi0}
    if pi0 < 1.0:
        restricted = _restricted_prob(spec, C, p, vtable)
    else:
        restricted = {g: 0.0 for g in C.non_default}
    for g in C.non_default:
        out[g] = (1.0 - pi0) * restricted[g]
    return out


def mixture_prob(spec: ChoiceModelSpec, C: CouponSet, S_a: AttentionState, p: float,
                 vtable: ValueTable, cap: int = AWARENESS_CAP) -> dict[CouponGroup, float]:
    """Unconditional choice probabilities under limited attention.

    Mixes the no-redemption probability over every awareness subset of C and
    spreads the rest over the full wallet via the recovery distribution.
    """
    if not spec.unaware:
        raise DomainError("mixture_prob requires an unaware spec; use general_coupon_prob")
    if C.is_empty:
        return {DEFAULT_GROUP: 1.0}
    group_level = spec.awareness_mode == "group_level"
    params = spec.attention
    p0 = 0.0
    for C_a in enumerate_awareness_subsets(C, cap, group_level=group_level):
        weight = awareness_set_prob(C, S_a, params, C_a, group_level=group_level)
        if weight == 0.0:
            continue
        if C_a.is_empty:
            p0 += weight
        else:
            p0 += weight * general_coupon_prob(spec, C_a, p, vtable)[DEFAULT_GROUP]
    p0 = min(p0, 1.0)  # guard against float drift in the subset sum
    out = {DEFAULT_GROUP: p0}
    restricted = _restricted_prob(spec, C, p, vtable)
    for g in C.non_default:
        out[g] = (1.0 - p0) * restricted[g]
    return out


def single_coupon_prob(spec: ChoiceModelSpec, v: float, T: int, p: float,
                       vtable: ValueTable) -> float:
    """Redemption probability for the one-coupon wallet {c0, <v,T,1>}.

    This is the two-option formula family: the continuation value enters as
    V(v, T-1), the scaled variant divides the whole score by v, and clip
    forces redemption whenever p >= v. Attention is not applied here; the
    unaware composition q * pi comes out of mixture_prob.
    """
    v = float(v)
    if not v > 0.0:
        raise ValidationError(f"face value must be > 0, got {v}")
    if not (p >= 0.0):
        raise ValidationError(f"fare must be >= 0, got {p}")
    if spec.clip and p >= v:
        return 1.0
    s = min(p, v) - spec.theta_V * single_value(vtable, v, T - 1)
    if spec.extra:
        s -= spec.theta_v * v
    if spec.scaled:
        s /= v
    return float(expit(spec.theta_eps * s))


def argmax_choice(dist: dict[CouponGroup, float]) -> CouponGroup:
    """Most likely option; ties break toward c0, then toward smaller (v, T)."""
    options = sorted(dist, key=lambda g: (not g.is_default, g))
    best = options[0]
    for g in options[1:]:
        if dist[g] > dist[best]:
            best = g
    return best


def spec_to_obj(spec: ChoiceModelSpec) -> dict:
    return {
        "unaware": spec.unaware,
        "clip": spec.clip,
        "extra": spec.extra,
        "scaled": spec.scaled,
        "iid": spec.iid,
        "theta_eps": spec.theta_eps,
        "theta_V": spec.theta_V,
        "theta_v": spec.theta_v,
        "theta_a": spec.theta_a,
        "theta_as": spec.theta_as,
        "awareness_mode": spec.awareness_mode,
    }


def spec_from_obj(obj) -> ChoiceModelSpec:
    if not isinstance(obj, dict):
        raise ValidationError("choice model JSON must be an object")
    allowed = {
        "unaware", "clip", "extra", "scaled", "iid",
        "theta_eps", "theta_V", "theta_v", "theta_a", "theta_as", "awareness_mode",
    }
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"unknown choice model fields: {sorted(unknown)}")
    kwargs = dict(obj)
    for flag in ("unaware", "clip", "extra", "scaled", "iid"):
        if flag in kwargs:
            kwargs[flag] = bool(kwargs[flag])
    for num in ("theta_eps", "theta_V", "theta_v", "theta_a", "theta_as"):
        if num in kwargs:
            kwargs[num] = float(kwargs[num])
    return ChoiceModelSpec(**kwargs)
