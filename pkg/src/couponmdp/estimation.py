"""Maximum-likelihood fitting of choice models on trip records.

A record is one observed trip: the wallet C, the attention flags, the realized
fare, the traveler's profile, and which option was picked. Likelihoods come
from the choice module; value tables are prebuilt once per distinct traveler
profile and treated as constants with respect to the choice parameters, so the
fit never re-solves the wallet recursion inside the optimizer loop.

Free parameters are optimized in the packed order

    log_theta_eps, theta_V, theta_v (extra only), theta_a, theta_as (unaware only)

by minibatch Adam with a fixed shuffling stream. theta_eps lives in log space
to stay positive. Gradients are analytic everywhere, with a central-difference
fallback (fd_log_prob_grad) kept around as an independent cross-check.

Datasets with only single-coupon wallets (one group, n = 1) take a fully
vectorized path: the two-option logit and its derivatives collapse to closed
forms, which is what makes 50k-record fits take seconds instead of minutes.
The vectorized path and the per-record path are interchangeable and tests pin
them together.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .attention import (
    AttentionState,
    attention_from_obj,
    attention_to_obj,
    awareness_set_prob,
)
from .choice import (
    ChoiceModelSpec,
    argmax_choice,
    general_coupon_prob,
    mixture_prob,
    score_block,
    softmax_weighted,
    spec_from_obj,
    spec_to_obj,
)
from .coupon_core import (
    AWARENESS_CAP,
    CouponGroup,
    CouponSet,
    DEFAULT_GROUP,
    REACHABLE_CAP,
    awareness_subset_count,
    coupon_set_from_obj,
    coupon_set_to_obj,
    enumerate_awareness_subsets,
    subset_counts,
)
from .errors import DomainError, NumericError, ValidationError
from .value_engine import (
    McConfig,
    TravelerProfile,
    ValueTable,
    single_value,
    value_hat_many,
)

__all__ = [
    "TripRecord",
    "FitConfig",
    "Metrics",
    "FitResult",
    "build_tables",
    "rebalance_weights",
    "evaluate",
    "record_log_prob",
    "record_log_prob_grad",
    "fd_log_prob_grad",
    "free_param_names",
    "pack_params",
    "apply_params",
    "fit",
    "write_dataset",
    "read_dataset",
    "metrics_to_obj",
    "fit_result_to_obj",
]

PARAM_ORDER = ("log_theta_eps", "theta_V", "theta_v", "theta_a", "theta_as")
DEFAULT_AWARENESS_FILTER = 64

# Initial values used when a caller has no better prior (mid-range of the
# estimates we expect these models to produce).
DEFAULT_INIT = ChoiceModelSpec(theta_eps=0.1, theta_V=0.5, theta_v=0.0,
                               theta_a=0.5, theta_as=1.0)


@dataclass(frozen=True)
class TripRecord:
    """One observed trip; chosen is the exact group object (c0 = DEFAULT_GROUP)."""

    traveler_id: str
    fare: float
    chosen: CouponGroup
    coupon_set: CouponSet
    attention: AttentionState
    profile: TravelerProfile

    def __post_init__(self):
        if not (self.fare > 0.0 and math.isfinite(self.fare)):
            raise ValidationError(f"fare must be finite and > 0, got {self.fare}")
        if self.coupon_set.is_empty:
            raise ValidationError("trip records require a non-empty wallet")
        if not self.chosen.is_default:
            found = self.coupon_set.find(self.chosen.v, self.chosen.T)
            if found != self.chosen:
                raise ValidationError(
                    f"chosen group {self.chosen} is not a group of the wallet")
        if not self.attention.covers(self.coupon_set):
            raise ValidationError("attention state does not cover the wallet")

    @property
    def redeemed(self) -> bool:
        return not self.chosen.is_default


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    weighting: str = "uniform"
    awareness_cap: int = DEFAULT_AWARENESS_FILTER

    def __post_init__(self):
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            raise ValidationError(f"batch_size must be an int >= 1, got {self.batch_size!r}")
        if not (isinstance(self.epochs, int) and self.epochs >= 1):
            raise ValidationError(f"epochs must be an int >= 1, got {self.epochs!r}")
        if self.weighting not in ("uniform", "face_value_rebalanced"):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        if not (isinstance(self.awareness_cap, int) and self.awareness_cap >= 1):
            raise ValidationError("awareness_cap must be an int >= 1")


@dataclass(frozen=True)
class Metrics:
    """Weighted-mean fit diagnostics over a dataset."""

    log_likelihood: float
    accuracy: float
    ms: float            # predicted aggregate redemption share
    observed_ms: float
    n_records: int
    n_zero_prob: int = 0


@dataclass
class FitResult:
    spec: ChoiceModelSpec
    metrics: Metrics
    history: tuple          # epoch-end mean log-likelihoods
    best_epoch: int
    diverged: bool
    n_filtered: int
    free: tuple
    weighting: str


# ------------------------------------------------------------ table provider

def build_tables(records, mc: McConfig = McConfig(), mode: str | None = None,
                 threads: int = 1, cap: int = REACHABLE_CAP,
                 subset_cap: int = AWARENESS_CAP) -> dict[TravelerProfile, ValueTable]:
    """One behavioral value table per distinct traveler profile.

    mode None covers just the observed wallets (enough for full-awareness
    evaluation); "coupon_level"/"group_level" add every awareness subset so
    mixture probabilities can be scored.
    """
    by_profile: dict[TravelerProfile, set] = {}
    for rec in records:
        by_profile.setdefault(rec.profile, set()).add(rec.coupon_set)

    def roots_for(sets):
        if mode is None:
            roots = set(sets)
        else:
            roots = set()
            for C in sets:
                roots.update(
                    enumerate_awareness_subsets(C, subset_cap,
                                                group_level=(mode == "group_level")))
        return sorted(roots, key=lambda s: (s.horizon, s.groups))

    profiles = sorted(by_profile, key=lambda pr: (pr.lambda_hat, pr.mu_p, pr.sigma_p))
    if threads > 1 and len(profiles) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(profiles))) as pool:
            tables = list(pool.map(
                lambda pr: value_hat_many(roots_for(by_profile[pr]), pr, mc, cap),
                profiles))
    else:
        tables = [value_hat_many(roots_for(by_profile[pr]), pr, mc, cap)
                  for pr in profiles]
    return dict(zip(profiles, tables))


def rebalance_weights(records) -> list[float]:
    """w = N / N(v) on single-coupon records, so every face-value class
    contributes the same total weight N."""
    faces = []
    for rec in records:
        nd = rec.coupon_set.non_default
        if len(nd) != 1:
            raise DomainError("face-value rebalancing requires single-coupon wallets")
        faces.append(nd[0].v)
    counts = Counter(faces)
    n = len(records)
    return [n / counts[v] for v in faces]


# ------------------------------------------------------- parameter packing

def free_param_names(spec: ChoiceModelSpec) -> tuple[str, ...]:
    """Parameters the spec's flags expose to the optimizer, in packed order."""
    names = ["log_theta_eps", "theta_V"]
    if spec.extra:
        names.append("theta_v")
    if spec.unaware:
        names.extend(["theta_a", "theta_as"])
    return tuple(names)


def _check_free(spec: ChoiceModelSpec, free) -> tuple[str, ...]:
    allowed = set(free_param_names(spec))
    free = tuple(free)
    for name in free:
        if name not in PARAM_ORDER:
            raise ValidationError(f"unknown parameter {name!r}")
        if name not in allowed:
            raise ValidationError(f"parameter {name!r} is inert under this spec's flags")
    if len(set(free)) != len(free):
        raise ValidationError("duplicate free parameter")
    return tuple(n for n in PARAM_ORDER if n in free)


def pack_params(spec: ChoiceModelSpec, names) -> np.ndarray:
    vals = {
        "log_theta_eps": math.log(spec.theta_eps),
        "theta_V": spec.theta_V,
        "theta_v": spec.theta_v,
        "theta_a": spec.theta_a,
        "theta_as": spec.theta_as,
    }
    return np.array([vals[n] for n in names], dtype=float)


def apply_params(spec: ChoiceModelSpec, names, x) -> ChoiceModelSpec:
    updates = {}
    for name, val in zip(names, x):
        if name == "log_theta_eps":
            updates["theta_eps"] = math.exp(float(val))
        else:
            updates[name] = float(val)
    return spec.with_params(**updates)


# ------------------------------------------- per-record likelihood/gradient

def record_log_prob(spec: ChoiceModelSpec, rec: TripRecord, table: ValueTable,
                    cap: int = AWARENESS_CAP) -> float:
    if spec.unaware:
        dist = mixture_prob(spec, rec.coupon_set, rec.attention, rec.fare, table, cap)
    else:
        dist = general_coupon_prob(spec, rec.coupon_set, rec.fare, table)
    prob = dist[rec.chosen]
    return math.log(prob) if prob > 0.0 else -math.inf


def _softmax_and_sens(spec, C, p, table, drop_default=False):
    """probs, options, and per-option score sensitivities D (3 x k):
    rows follow (log_theta_eps, theta_V, theta_v)."""
    block = score_block(spec, C, p, table)
    k = len(block.options)
    active = np.ones(k, dtype=bool)
    if drop_default:
        active[0] = False
    elif spec.clip and any(0.0 < g.v <= p for g in C.non_default):
        active[0] = False
    probs = softmax_weighted(block.scores, block.weights, active)
    D = np.vstack([block.scores, block.d_theta_V, block.d_theta_v])
    return probs, block.options, D


def _attention_pieces(spec, C, S_a):
    groups = C.non_default
    I = np.array([float(S_a.get(g)) for g in groups])
    n = np.array([float(g.n) for g in groups])
    q = expit(spec.theta_a + spec.theta_as * I)
    return I, n, q


def record_log_prob_grad(spec: ChoiceModelSpec, rec: TripRecord, table: ValueTable,
                         cap: int = AWARENESS_CAP):
    """(log P(chosen), gradient over PARAM_ORDER).

    Zero predicted probability yields (-inf, zeros): the record is flagged
    upstream rather than poisoning the optimizer state.
    """
    C, p, S_a = rec.coupon_set, rec.fare, rec.attention
    grad = np.zeros(len(PARAM_ORDER))

    if not spec.unaware:
        probs, options, D = _softmax_and_sens(spec, C, p, table)
        k = options.index(rec.chosen)
        if probs[k] == 0.0:
            return -math.inf, grad
        grad[:3] = D[:, k] - D @ probs
        return math.log(probs[k]), grad

    group_level = spec.awareness_mode == "group_level"
    I, n, q = _attention_pieces(spec, C, S_a)
    p0 = 0.0
    dp0 = np.zeros(len(PARAM_ORDER))
    for C_a in enumerate_awareness_subsets(C, cap, group_level=group_level):
        w = awareness_set_prob(C, S_a, spec.attention, C_a, group_level=group_level)
        if w == 0.0:
            continue
        counts = np.array(subset_counts(C, C_a), dtype=float)
        if group_level:
            dlog_eta = (counts == n).astype(float) - q
        else:
            dlog_eta = counts - n * q
        if C_a.is_empty:
            pi0, dpi0 = 1.0, np.zeros(3)
        else:
            probs_a, _, D_a = _softmax_and_sens(spec, C_a, p, table)
            pi0 = probs_a[0]
            dpi0 = pi0 * (D_a[:, 0] - D_a @ probs_a)
        p0 += w * pi0
        dp0[:3] += w * dpi0
        dp0[3] += w * float(dlog_eta.sum()) * pi0
        dp0[4] += w * float((dlog_eta * I).sum()) * pi0
    p0 = min(p0, 1.0)

    if rec.chosen.is_default:
        if p0 == 0.0:
            return -math.inf, grad
        return math.log(p0), dp0 / p0

    if p0 == 1.0:
        return -math.inf, grad
    r, options, D = _softmax_and_sens(spec, C, p, table, drop_default=True)
    k = options.index(rec.chosen)
    if r[k] == 0.0:
        return -math.inf, grad
    grad[:] = -dp0 / (1.0 - p0)
    grad[:3] += D[:, k] - D @ r
    return math.log1p(-p0) + math.log(r[k]), grad


def fd_log_prob_grad(spec: ChoiceModelSpec, rec: TripRecord, table: ValueTable,
                     names=PARAM_ORDER, cap: int = AWARENESS_CAP) -> np.ndarray:
    """Central-difference gradient in the packed coordinates (cross-check)."""
    x0 = pack_params(spec, names)
    out = np.empty(len(names))
    for j in range(len(names)):
        h = 1e-5 * max(1.0, abs(x0[j]))
        for sign in (+1.0, -1.0):
            x = x0.copy()
            x[j] += sign * h
            lp = record_log_prob(apply_params(spec, names, x), rec, table, cap)
            if sign > 0:
                hi = lp
            else:
                lo = lp
        out[j] = (hi - lo) / (2.0 * h)
    return out


# ------------------------------------------------- vectorized single-coupon

@dataclass
class _SingleData:
    """Column arrays for datasets whose wallets are all {c0, <v,T,1>}."""

    v: np.ndarray
    minvp: np.ndarray
    vkeep: np.ndarray      # keep value V(v, T-1), constant in theta
    I: np.ndarray
    y: np.ndarray          # True where a coupon was redeemed
    w: np.ndarray


def _single_data(records, weights, tables) -> _SingleData | None:
    cols = {"v": [], "minvp": [], "vkeep": [], "I": [], "y": []}
    for rec in records:
        nd = rec.coupon_set.non_default
        if len(nd) != 1 or nd[0].n != 1:
            return None
        g = nd[0]
        cols["v"].append(g.v)
        cols["minvp"].append(min(g.v, rec.fare))
        cols["vkeep"].append(single_value(tables[rec.profile], g.v, g.T - 1))
        cols["I"].append(float(rec.attention.get(g)))
        cols["y"].append(rec.redeemed)
    return _SingleData(
        v=np.array(cols["v"]),
        minvp=np.array(cols["minvp"]),
        vkeep=np.array(cols["vkeep"]),
        I=np.array(cols["I"]),
        y=np.array(cols["y"], dtype=bool),
        w=np.asarray(weights, dtype=float),
    )


def _single_forward(spec: ChoiceModelSpec, data: _SingleData, idx=None):
    """Per-record log-probabilities, gradients over PARAM_ORDER, and the
    predicted redemption probability, all via the two-option closed form."""
    v = data.v if idx is None else data.v[idx]
    minvp = data.minvp if idx is None else data.minvp[idx]
    vkeep = data.vkeep if idx is None else data.vkeep[idx]
    I = data.I if idx is None else data.I[idx]
    y = data.y if idx is None else data.y[idx]

    eps = spec.theta_eps
    div = v if spec.scaled else 1.0
    z = minvp.copy()
    if spec.extra:
        z -= spec.theta_v * v
    z = z / div - spec.theta_V * vkeep
    x = eps * z
    dx = np.vstack([
        x,                                              # d/d log_theta_eps
        np.broadcast_to(-eps * vkeep, x.shape).copy(),  # d/d theta_V
        (-eps * v / div if spec.extra else np.zeros_like(x)),
    ])
    if spec.clip:
        forced = minvp == v          # p >= v: redemption is forced
        x = np.where(forced, np.inf, x)
        dx[:, forced] = 0.0

    pi = expit(x)
    one_m_pi = expit(-x)
    ll = np.where(y, log_expit(x), log_expit(-x))
    # d log P / d x, before any attention layer
    dfac = np.where(y, one_m_pi, -pi)
    grads = np.zeros((len(PARAM_ORDER), x.size))
    p_redeem = pi

    if spec.unaware:
        eta = spec.theta_a + spec.theta_as * I
        q = expit(eta)
        one_m_q = expit(-eta)
        m = one_m_q + q * one_m_pi                     # 1 - q*pi, formed stably
        with np.errstate(divide="ignore"):
            log_m = np.log(m)
        ll = np.where(y, log_expit(eta) + log_expit(x), log_m)
        with np.errstate(divide="ignore", invalid="ignore"):
            dfac = np.where(y, one_m_pi, -q * pi * one_m_pi / m)
            datt = np.where(y, one_m_q, -pi * q * one_m_q / m)
        dead = m == 0.0
        if dead.any():
            dfac = np.where(dead & ~y, 0.0, dfac)
            datt = np.where(dead & ~y, 0.0, datt)
        grads[3] = datt
        grads[4] = datt * I
        p_redeem = q * pi

    grads[:3] = dfac * dx
    return ll, grads, p_redeem, y


# ------------------------------------------------------------------ metrics

def _weights_for(records, config: FitConfig | None, weights):
    if weights is not None:
        w = np.asarray(list(weights), dtype=float)
        if w.shape != (len(records),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite nonnegative, one per record")
        return w
    if config is not None and config.weighting == "face_value_rebalanced":
        return np.array(rebalance_weights(records))
    return np.ones(len(records))


def evaluate(records, spec: ChoiceModelSpec, tables, weights=None,
             cap: int = AWARENESS_CAP) -> Metrics:
    """Weighted-mean LL, argmax accuracy, and redemption shares.

    A zero predicted probability for an observed choice drives the mean LL to
    -inf and increments n_zero_prob instead of raising.
    """
    records = list(records)
    if not records:
        raise ValidationError("cannot evaluate an empty dataset")
    w = _weights_for(records, None, weights)
    wsum = float(w.sum())
    if wsum <= 0.0:
        raise ValidationError("weights must not sum to zero")

    data = _single_data(records, w, tables)
    if data is not None:
        ll, _, p_redeem, y = _single_forward(spec, data)
        pred = p_redeem > 0.5          # exact tie predicts c0
        n_zero = int(np.count_nonzero(np.isneginf(ll)))
        return Metrics(
            log_likelihood=float((w * ll).sum() / wsum),
            accuracy=float((w * (pred == y)).sum() / wsum),
            ms=float((w * p_redeem).sum() / wsum),
            observed_ms=float((w * y).sum() / wsum),
            n_records=len(records),
            n_zero_prob=n_zero,
        )

    ll_sum = acc_sum = ms_sum = obs_sum = 0.0
    n_zero = 0
    for rec, wt in zip(records, w):
        table = tables[rec.profile]
        if spec.unaware:
            dist = mixture_prob(spec, rec.coupon_set, rec.attention, rec.fare, table, cap)
        else:
            dist = general_coupon_prob(spec, rec.coupon_set, rec.fare, table)
        prob = dist[rec.chosen]
        if prob > 0.0:
            ll_sum += wt * math.log(prob)
        else:
            ll_sum = -math.inf
            n_zero += 1
        acc_sum += wt * (argmax_choice(dist) == rec.chosen)
        ms_sum += wt * (1.0 - dist[DEFAULT_GROUP])
        obs_sum += wt * rec.redeemed
    return Metrics(
        log_likelihood=ll_sum / wsum,
        accuracy=acc_sum / wsum,
        ms=ms_sum / wsum,
        observed_ms=obs_sum / wsum,
        n_records=len(records),
        n_zero_prob=n_zero,
    )


# ---------------------------------------------------------------------- fit

def _make_objective(records, weights, tables, template, free):
    """(x, idx) -> (sum w*logP, grad of sum over free coords, sum w, n_zero)."""
    free_idx = [PARAM_ORDER.index(n) for n in free]
    data = _single_data(records, weights, tables)

    if data is not None:
        def objective(x, idx):
            spec = apply_params(template, free, x)
            ll, grads, _, _ = _single_forward(spec, data, idx)
            w = data.w[idx]
            finite = np.isfinite(ll)
            n_zero = int(ll.size - np.count_nonzero(finite))
            ll_sum = float((w * ll).sum()) if n_zero == 0 else -math.inf
            gw = (grads[free_idx] * w).sum(axis=1) if n_zero == 0 else \
                (grads[free_idx][:, finite] * w[finite]).sum(axis=1)
            return ll_sum, gw, float(w.sum()), n_zero
        return objective

    w_all = np.asarray(weights, dtype=float)

    def objective(x, idx):
        spec = apply_params(template, free, x)
        ll_sum = 0.0
        grad = np.zeros(len(free_idx))
        n_zero = 0
        for i in idx:
            rec = records[i]
            lp, g = record_log_prob_grad(spec, rec, tables[rec.profile])
            if math.isinf(lp):
                n_zero += 1
                ll_sum = -math.inf
                continue
            ll_sum += w_all[i] * lp
            grad += w_all[i] * g[free_idx]
        return ll_sum, grad, float(w_all[idx].sum()), n_zero

    return objective


def fit(dataset, template: ChoiceModelSpec, config: FitConfig = FitConfig(), *,
        free=None, mc: McConfig = McConfig(), threads: int = 1,
        tables=None) -> FitResult:
    """Minibatch Adam ascent on the weighted mean log-likelihood.

    Returns the parameters from the epoch with the best end-of-epoch LL.
    Divergence (non-finite parameters or gradients) aborts and reports the
    last finite iterate with diverged=True.
    """
    records = list(dataset)
    if not records:
        raise ValidationError("cannot fit on an empty dataset")

    n_filtered = 0
    if template.unaware:
        group_level = template.awareness_mode == "group_level"
        kept = [r for r in records
                if awareness_subset_count(r.coupon_set, group_level) <= config.awareness_cap]
        n_filtered = len(records) - len(kept)
        records = kept
        if not records:
            raise ValidationError("awareness-cap filter removed every record")

    weights = _weights_for(records, config, None)
    if tables is None:
        mode = template.awareness_mode if template.unaware else None
        tables = build_tables(records, mc=mc, mode=mode, threads=threads)

    free = free_param_names(template) if free is None else _check_free(template, free)
    if not free:
        metrics = evaluate(records, template, tables, weights)
        return FitResult(template, metrics, history=(), best_epoch=0,
                         diverged=False, n_filtered=n_filtered, free=(),
                         weighting=config.weighting)

    objective = _make_objective(records, weights, tables, template, free)
    x = pack_params(template, free)
    n = len(records)
    rng = np.random.default_rng(config.seed)

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    mom = np.zeros_like(x)
    sec = np.zeros_like(x)
    step = 0
    history = []
    best_ll = -math.inf
    best_x = x.copy()
    best_epoch = 0
    diverged = False

    last_ok = x.copy()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                _, grad, wsum, _ = objective(x, idx)
            except (ValidationError, NumericError, OverflowError):
                diverged = True
                break
            last_ok = x.copy()
            g = -grad / wsum
            if not np.all(np.isfinite(g)):
                diverged = True
                break
            step += 1
            mom = beta1 * mom + (1.0 - beta1) * g
            sec = beta2 * sec + (1.0 - beta2) * g * g
            m_hat = mom / (1.0 - beta1**step)
            s_hat = sec / (1.0 - beta2**step)
            prev = x
            x = x - config.learning_rate * m_hat / (np.sqrt(s_hat) + adam_eps)
            if not np.all(np.isfinite(x)):
                x = prev
                diverged = True
                break
        if diverged:
            break
        try:
            ll_sum, _, wsum, _ = objective(x, np.arange(n))
        except (ValidationError, NumericError, OverflowError):
            diverged = True
            break
        mean_ll = ll_sum / wsum
        history.append(mean_ll)
        if mean_ll > best_ll:
            best_ll, best_x, best_epoch = mean_ll, x.copy(), epoch

    if diverged and not history:
        best_x = last_ok   # no finished epoch: report the last evaluable iterate
    spec = apply_params(template, free, best_x)
    metrics = evaluate(records, spec, tables, weights)
    return FitResult(spec=spec, metrics=metrics, history=tuple(history),
                     best_epoch=best_epoch, diverged=diverged,
                     n_filtered=n_filtered, free=free, weighting=config.weighting)


# ------------------------------------------------------------------ dataset IO

CSV_COLUMNS = ("traveler_id", "fare", "chosen_v", "chosen_T",
               "coupon_set", "attention", "lambda_hat", "mu_p", "sigma_p")


def write_dataset(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            chosen_v = "" if rec.chosen.is_default else repr(rec.chosen.v)
            chosen_T = "" if rec.chosen.is_default else str(rec.chosen.T)
            writer.writerow([
                rec.traveler_id,
                repr(rec.fare),
                chosen_v,
                chosen_T,
                json.dumps(coupon_set_to_obj(rec.coupon_set), sort_keys=True),
                json.dumps(attention_to_obj(rec.attention), sort_keys=True),
                repr(rec.profile.lambda_hat),
                repr(rec.profile.mu_p),
                repr(rec.profile.sigma_p),
            ])


def read_dataset(path) -> list[TripRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"dataset is missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                C = coupon_set_from_obj(json.loads(row["coupon_set"]))
                S_a = attention_from_obj(json.loads(row["attention"]))
                profile = TravelerProfile(float(row["lambda_hat"]),
                                          float(row["mu_p"]), float(row["sigma_p"]))
                if row["chosen_v"] == "":
                    chosen = DEFAULT_GROUP
                else:
                    found = C.find(float(row["chosen_v"]), int(row["chosen_T"]))
                    if found is None:
                        raise ValidationError(
                            f"chosen ({row['chosen_v']}, {row['chosen_T']}) not in wallet")
                    chosen = found
                records.append(TripRecord(
                    traveler_id=row["traveler_id"],
                    fare=float(row["fare"]),
                    chosen=chosen,
                    coupon_set=C,
                    attention=S_a,
                    profile=profile,
                ))
            except (ValidationError, DomainError):
                raise
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"bad dataset row {row_no}: {exc}") from exc
    return records


# ------------------------------------------------------------------ reports

def metrics_to_obj(m: Metrics) -> dict:
    return {
        "log_likelihood": m.log_likelihood,
        "accuracy": m.accuracy,
        "ms": m.ms,
        "observed_ms": m.observed_ms,
        "n_records": m.n_records,
        "n_zero_prob": m.n_zero_prob,
    }


def fit_result_to_obj(result: FitResult) -> dict:
    return {
        "spec": spec_to_obj(result.spec),
        "metrics": metrics_to_obj(result.metrics),
        "history": list(result.history),
        "best_epoch": result.best_epoch,
        "diverged": result.diverged,
        "n_filtered": result.n_filtered,
        "free": list(result.free),
        "weighting": result.weighting,
    }
