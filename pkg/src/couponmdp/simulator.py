"""Forward simulation of coupon promotions, and synthetic dataset generation.

simulate_promotion runs the wallet through t_max daily steps, per replication:

    1. draw the awareness subset C_a of the current wallet (full wallet when
       inattention is off);
    2. draw a fare p ~ lognormal(mu_p, sigma_p^2);
    3. the trip happens with probability
           sigma(logit(lambda0) + beta * gain(C_a, p)),
       gain = max(0, max_c { min(v_c,p) + theta_V*V(f(C_a,c)) } - theta_V*V(f(C_a))),
       which equals sigma(beta*(u0 + gain)) for u0 = logit(lambda0)/beta, so an
       empty gain gives exactly lambda0;
    4. on a trip the traveler declines redemption with the no-coupon
       probability of C_a; otherwise the redeemed group is drawn over the full
       wallet (attention recovery), the face value accrues, and every
       surviving coupon's activation flag switches on;
    5. the wallet ages one day either way.

Because every group ages in lockstep, the wallet state after t steps is fully
described by (t, per-group remaining counts); values are precomputed into a
dense [t, count-index] array and all replications advance as numpy rows.
Replications are processed in fixed 65,536-row chunks, each with its own
child seed of the config seed, so results depend only on the seed and the
replication count, never on scheduling.

The promotional effect is the pooled ratio

    rho = (sum N_trip - R*lambda0*t_max) / sum V_redeemed,

absent (None) when nothing was redeemed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import expit, logit

from .attention import AttentionState, attention_from_obj, attention_to_obj, full_attention
from .choice import ChoiceModelSpec, mixture_prob, general_coupon_prob, spec_from_obj, spec_to_obj
from .coupon_core import (
    CouponSet,
    DEFAULT_GROUP,
    coupon_set_from_obj,
    coupon_set_to_obj,
    enumerate_awareness_subsets,
    make_coupon_set,
)
from .errors import ValidationError
from .estimation import TripRecord
from .value_engine import McConfig, TravelerProfile, value_hat_many

__all__ = [
    "SimConfig",
    "SimResult",
    "simulate_promotion",
    "SingleCouponScenario",
    "FixedSetScenario",
    "generate_dataset",
    "scenario_from_obj",
    "scenario_to_obj",
    "sim_config_to_obj",
    "sim_config_from_obj",
    "sim_result_to_obj",
]

CHUNK = 65_536


@dataclass(frozen=True)
class SimConfig:
    lambda0: float
    beta: float
    spec: ChoiceModelSpec
    coupon_set: CouponSet
    mu_p: float
    sigma_p: float
    t_max: int
    replications: int
    seed: int = 0
    inattention_on: bool = True
    initial_attention: AttentionState | None = None   # None = every flag on
    table_mc: McConfig = field(default_factory=McConfig)

    def __post_init__(self):
        if not (0.0 < self.lambda0 < 1.0):
            raise ValidationError(f"lambda0 must lie in (0, 1), got {self.lambda0}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if not math.isfinite(self.mu_p):
            raise ValidationError("mu_p must be finite")
        if not (self.sigma_p >= 0.0 and math.isfinite(self.sigma_p)):
            raise ValidationError("sigma_p must be finite and >= 0")
        if not (isinstance(self.t_max, int) and self.t_max >= 1):
            raise ValidationError(f"t_max must be an int >= 1, got {self.t_max!r}")
        if not (isinstance(self.replications, int) and self.replications >= 1):
            raise ValidationError(f"replications must be an int >= 1, got {self.replications!r}")
        if self.initial_attention is not None and not self.initial_attention.covers(self.coupon_set):
            raise ValidationError("initial attention does not cover the coupon set")


@dataclass(frozen=True)
class SimResult:
    n_trip_mean: float
    n_trip_std: float
    v_redeemed_mean: float
    v_redeemed_std: float
    rho: float | None
    n_trip_0: float
    replications: int
    v_redeemed_max: float   # per-replication maximum (bounded by total face)


def _dense_values(config: SimConfig):
    """Value array V[t, count-index] over the uniform-aging state space."""
    groups = config.coupon_set.non_default
    profile = TravelerProfile(config.lambda0, config.mu_p, config.sigma_p)
    roots = enumerate_awareness_subsets(config.coupon_set)
    table = value_hat_many(roots, profile, config.table_mc)
    radix = [g.n + 1 for g in groups]
    strides = np.ones(len(groups), dtype=np.int64)
    for i in range(len(groups) - 2, -1, -1):
        strides[i] = strides[i + 1] * radix[i + 1]
    size = int(np.prod(radix)) if groups else 1
    V = np.zeros((config.t_max + 1, size))
    for t in range(config.t_max + 1):
        for counts in product(*[range(r) for r in radix]):
            state = make_coupon_set([
                (g.v, g.T - t, c) for g, c in zip(groups, counts)
                if c >= 1 and g.T - t >= 0
            ])
            idx = int(np.dot(counts, strides)) if groups else 0
            V[t, idx] = table.value(state)
    return V, strides, groups


def _chunk_run(config: SimConfig, V, strides, groups, rng, rows: int):
    """Advance `rows` replications through all steps; returns (trips, redeemed)."""
    spec = config.spec
    m = len(groups)
    v_faces = np.array([g.v for g in groups])
    T_arr = np.array([g.T for g in groups])
    n0 = np.array([g.n for g in groups], dtype=np.int64)
    S0 = config.initial_attention or full_attention(config.coupon_set)
    flags0 = np.array([S0.get(g) for g in groups], dtype=np.int64) if m else np.zeros(0, dtype=np.int64)

    k = np.tile(n0, (rows, 1))
    flags = np.tile(flags0, (rows, 1))
    trips = np.zeros(rows, dtype=np.int64)
    redeemed = np.zeros(rows)
    logit0 = float(logit(config.lambda0))
    group_level = spec.awareness_mode == "group_level"

    for t in range(config.t_max):
        alive = (T_arr - t) >= 0                      # (m,)
        # draw order is fixed per step: awareness, fare, trip, decline, pick
        if m and config.inattention_on:
            q = expit(spec.theta_a + spec.theta_as * flags)
            if group_level:
                ka = k * alive * (rng.random((rows, m)) < q)
            else:
                ka = rng.binomial(k * alive, q)
        else:
            ka = k * alive
        p = rng.lognormal(config.mu_p, config.sigma_p, rows)
        u_trip = rng.random(rows)
        u_decline = rng.random(rows)
        u_pick = rng.random(rows)

        if m == 0:
            trips += u_trip < config.lambda0
            continue

        vt = V[t + 1]
        idx_ka = ka @ strides
        keep_a = vt[idx_ka]
        minvp = np.minimum(p[:, None], v_faces[None, :])
        can_a = (ka >= 1) & alive[None, :]
        spend_a = np.where(can_a, vt[np.maximum(idx_ka[:, None] - strides[None, :], 0)], 0.0)

        # trip probability from the awareness set's redemption surplus
        gain_terms = np.where(
            can_a,
            minvp + spec.theta_V * spend_a - spec.theta_V * keep_a[:, None],
            -np.inf,
        )
        gain = np.maximum(gain_terms.max(axis=1), 0.0)
        trip = u_trip < expit(logit0 + config.beta * gain)
        trips += trip

        # decline probability: the no-coupon share of the awareness wallet
        s0 = spec.theta_eps * spec.theta_V * keep_a
        sc = np.where(can_a,
                      spec.theta_eps * (minvp + spec.theta_V * spend_a), -np.inf)
        w_a = (ka if spec.iid else 1.0) * can_a
        shift = np.maximum(s0, sc.max(axis=1))
        denom = np.exp(s0 - shift) + (w_a * np.exp(sc - shift[:, None])).sum(axis=1)
        pi0 = np.exp(s0 - shift) / denom
        if spec.clip:
            dominated = (can_a & (minvp == v_faces[None, :])).any(axis=1)
            pi0 = np.where(dominated, 0.0, pi0)
        redeem = trip & (u_decline >= pi0)

        # recovery pick over the full wallet
        can_f = (k >= 1) & alive[None, :]
        idx_k = k @ strides
        spend_f = np.where(can_f, vt[np.maximum(idx_k[:, None] - strides[None, :], 0)], 0.0)
        sf = np.where(can_f,
                      spec.theta_eps * (minvp + spec.theta_V * spend_f), -np.inf)
        w_f = (k if spec.iid else 1.0) * can_f
        shift_f = sf.max(axis=1)
        shift_f = np.where(np.isfinite(shift_f), shift_f, 0.0)
        raw = w_f * np.exp(sf - shift_f[:, None])
        total = raw.sum(axis=1)
        total = np.where(total == 0.0, 1.0, total)
        cum = np.cumsum(raw / total[:, None], axis=1)
        pick = (u_pick[:, None] > cum).sum(axis=1)
        pick = np.minimum(pick, m - 1)

        row_ids = np.nonzero(redeem)[0]
        chosen = pick[row_ids]
        redeemed[row_ids] += v_faces[chosen]
        k[row_ids, chosen] -= 1
        flags[row_ids] = 1     # a redemption reveals every surviving coupon

    return trips, redeemed


def simulate_promotion(config: SimConfig) -> SimResult:
    V, strides, groups = _dense_values(config)
    root = np.random.SeedSequence(config.seed)
    n_chunks = (config.replications + CHUNK - 1) // CHUNK
    children = root.spawn(n_chunks)

    n = 0
    s_t = s_t2 = 0.0
    s_v = s_v2 = 0.0
    v_max = 0.0
    for c in range(n_chunks):
        rows = min(CHUNK, config.replications - c * CHUNK)
        rng = np.random.default_rng(children[c])
        trips, redeemed = _chunk_run(config, V, strides, groups, rng, rows)
        n += rows
        s_t += float(trips.sum())
        s_t2 += float((trips.astype(float) ** 2).sum())
        s_v += float(redeemed.sum())
        s_v2 += float((redeemed ** 2).sum())
        if rows:
            v_max = max(v_max, float(redeemed.max()))

    def std(s, s2):
        if n < 2:
            return 0.0
        var = max((s2 - s * s / n) / (n - 1), 0.0)
        return math.sqrt(var)

    base = config.lambda0 * config.t_max
    rho = (s_t - n * base) / s_v if s_v > 0.0 else None
    return SimResult(
        n_trip_mean=s_t / n,
        n_trip_std=std(s_t, s_t2),
        v_redeemed_mean=s_v / n,
        v_redeemed_std=std(s_v, s_v2),
        rho=rho,
        n_trip_0=base,
        replications=n,
        v_redeemed_max=v_max,
    )


# ------------------------------------------------------- dataset generation

@dataclass(frozen=True)
class SingleCouponScenario:
    """One-coupon wallets drawn from weighted (v, T) entries.

    entries: ((v, T, weight), ...). Weights need not be normalized. The
    activation flag is Bernoulli(activation_rate).
    """

    entries: tuple
    activation_rate: float = 1.0

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("scenario needs at least one (v, T, weight) entry")
        for v, T, w in self.entries:
            if not (float(v) > 0.0 and int(T) >= 0 and float(w) > 0.0):
                raise ValidationError(f"bad scenario entry {(v, T, w)!r}")
        if not (0.0 <= self.activation_rate <= 1.0):
            raise ValidationError("activation_rate must lie in [0, 1]")

    def sample(self, rng):
        weights = np.array([w for _, _, w in self.entries], dtype=float)
        i = int(rng.choice(len(self.entries), p=weights / weights.sum()))
        v, T, _ = self.entries[i]
        C = make_coupon_set([(float(v), int(T), 1)])
        flag = int(rng.random() < self.activation_rate)
        return C, AttentionState(((float(v), int(T), flag),))


@dataclass(frozen=True)
class FixedSetScenario:
    """Every record carries the same wallet; flags are Bernoulli per group."""

    coupon_set: CouponSet
    activation_rate: float = 1.0

    def __post_init__(self):
        if self.coupon_set.is_empty:
            raise ValidationError("fixed scenario needs a non-empty wallet")
        if not (0.0 <= self.activation_rate <= 1.0):
            raise ValidationError("activation_rate must lie in [0, 1]")

    def sample(self, rng):
        flags = tuple(
            (g.v, g.T, int(rng.random() < self.activation_rate))
            for g in self.coupon_set.non_default
        )
        return self.coupon_set, AttentionState(flags)


def generate_dataset(true_spec: ChoiceModelSpec, profiles, scenario, n_records: int,
                     seed: int = 0, mc: McConfig = McConfig()) -> list[TripRecord]:
    """Synthetic trip records labeled by the true model's choice probabilities.

    Two passes: draw (profile, wallet, attention, fare) for every record,
    build one value table per profile over every awareness subset seen, then
    sample each chosen option from the model's distribution.
    """
    profiles = list(profiles)
    if not profiles:
        raise ValidationError("need at least one traveler profile")
    if not (isinstance(n_records, int) and n_records >= 1):
        raise ValidationError(f"n_records must be an int >= 1, got {n_records!r}")

    rng = np.random.default_rng(seed)
    draws = []
    roots: dict[TravelerProfile, set] = {}
    group_level = true_spec.awareness_mode == "group_level"
    for _ in range(n_records):
        profile = profiles[int(rng.integers(len(profiles)))]
        C, S_a = scenario.sample(rng)
        p = float(rng.lognormal(profile.mu_p, profile.sigma_p))
        draws.append((profile, C, S_a, p))
        bucket = roots.setdefault(profile, set())
        if true_spec.unaware:
            bucket.update(enumerate_awareness_subsets(C, group_level=group_level))
        else:
            bucket.add(C)

    tables = {
        profile: value_hat_many(sorted(sets, key=lambda s: (s.horizon, s.groups)),
                                profile, mc)
        for profile, sets in roots.items()
    }

    records = []
    for i, (profile, C, S_a, p) in enumerate(draws):
        table = tables[profile]
        if true_spec.unaware:
            dist = mixture_prob(true_spec, C, S_a, p, table)
        else:
            dist = general_coupon_prob(true_spec, C, p, table)
        u = rng.random()
        acc = 0.0
        chosen = DEFAULT_GROUP
        for g in (DEFAULT_GROUP, *C.non_default):
            acc += dist[g]
            if u < acc:
                chosen = g
                break
        records.append(TripRecord(f"g{i}", p, chosen, C, S_a, profile))
    return records


# ------------------------------------------------------------------ JSON

def scenario_from_obj(obj):
    if not isinstance(obj, dict):
        raise ValidationError("scenario JSON must be an object with a 'type' field")
    kind = obj.get("type")
    try:
        if kind == "single_coupon":
            entries = tuple((float(v), int(T), float(w)) for v, T, w in obj["entries"])
            return SingleCouponScenario(entries, float(obj.get("activation_rate", 1.0)))
        if kind == "fixed_set":
            from .coupon_core import coupon_set_from_obj as _from_obj
            return FixedSetScenario(_from_obj(obj["coupon_set"]),
                                    float(obj.get("activation_rate", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad scenario JSON: {exc}") from exc
    raise ValidationError(f"unknown scenario type {kind!r}")


def scenario_to_obj(scenario) -> dict:
    if isinstance(scenario, SingleCouponScenario):
        return {"type": "single_coupon",
                "entries": [list(e) for e in scenario.entries],
                "activation_rate": scenario.activation_rate}
    if isinstance(scenario, FixedSetScenario):
        return {"type": "fixed_set",
                "coupon_set": coupon_set_to_obj(scenario.coupon_set),
                "activation_rate": scenario.activation_rate}
    raise ValidationError(f"not a scenario: {scenario!r}")


def sim_config_to_obj(config: SimConfig) -> dict:
    return {
        "lambda0": config.lambda0,
        "beta": config.beta,
        "spec": spec_to_obj(config.spec),
        "coupon_set": coupon_set_to_obj(config.coupon_set),
        "mu_p": config.mu_p,
        "sigma_p": config.sigma_p,
        "t_max": config.t_max,
        "replications": config.replications,
        "seed": config.seed,
        "inattention_on": config.inattention_on,
        "initial_attention": (None if config.initial_attention is None
                              else attention_to_obj(config.initial_attention)),
        "mc_samples": config.table_mc.samples,
        "mc_seed": config.table_mc.seed,
    }


def sim_config_from_obj(obj) -> SimConfig:
    if not isinstance(obj, dict):
        raise ValidationError("simulation config JSON must be an object")
    try:
        attention = obj.get("initial_attention")
        return SimConfig(
            lambda0=float(obj["lambda0"]),
            beta=float(obj["beta"]),
            spec=spec_from_obj(obj.get("spec", {})),
            coupon_set=coupon_set_from_obj(obj["coupon_set"]),
            mu_p=float(obj["mu_p"]),
            sigma_p=float(obj["sigma_p"]),
            t_max=int(obj["t_max"]),
            replications=int(obj["replications"]),
            seed=int(obj.get("seed", 0)),
            inattention_on=bool(obj.get("inattention_on", True)),
            initial_attention=(None if attention is None
                               else attention_from_obj(attention)),
            table_mc=McConfig(samples=int(obj.get("mc_samples", 10_000)),
                              seed=int(obj.get("mc_seed", 0))),
        )
    except KeyError as exc:
        raise ValidationError(f"simulation config is missing field {exc}") from exc


def sim_result_to_obj(result: SimResult) -> dict:
    return {
        "n_trip_mean": result.n_trip_mean,
        "n_trip_std": result.n_trip_std,
        "v_redeemed_mean": result.v_redeemed_mean,
        "v_redeemed_std": result.v_redeemed_std,
        "rho": result.rho,
        "n_trip_0": result.n_trip_0,
        "replications": result.replications,
        "v_redeemed_max": result.v_redeemed_max,
    }
