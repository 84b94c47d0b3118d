"""Estimation tests.

The gradient checks are the load-bearing part: every analytic derivative is
compared against central finite differences computed straight from
record_log_prob, and the vectorized single-coupon path is pinned to the
per-record path so the fast fit cannot drift from the model definition.
"""

import math

import numpy as np
import pytest

from helpers import fake_value_table, random_coupon_set

from couponmdp.attention import AttentionState, awareness_prob, full_attention
from couponmdp.choice import (
    ChoiceModelSpec,
    argmax_choice,
    general_coupon_prob,
    mixture_prob,
)
from couponmdp.coupon_core import (
    CouponGroup,
    DEFAULT_GROUP,
    enumerate_awareness_subsets,
    make_coupon_set,
    reachable_union,
)
from couponmdp.errors import DomainError, ValidationError
from couponmdp.estimation import (
    FitConfig,
    Metrics,
    PARAM_ORDER,
    TripRecord,
    apply_params,
    build_tables,
    evaluate,
    fd_log_prob_grad,
    fit,
    fit_result_to_obj,
    free_param_names,
    metrics_to_obj,
    pack_params,
    read_dataset,
    rebalance_weights,
    record_log_prob,
    record_log_prob_grad,
    write_dataset,
)
from couponmdp.value_engine import McConfig, TravelerProfile, single_value, value_hat_many

PROFILE = TravelerProfile(0.3, 2.5, 0.6)


def single_record(v=10.0, T=2, fare=8.0, redeemed=True, flag=1,
                  profile=PROFILE, traveler="t1"):
    C = make_coupon_set([(v, T, 1)])
    chosen = C.non_default[0] if redeemed else DEFAULT_GROUP
    return TripRecord(traveler, fare, chosen, C, AttentionState(((v, T, flag),)), profile)


def subset_table(C, rng, scale=15.0):
    return fake_value_table(reachable_union(enumerate_awareness_subsets(C)), rng, scale)


# -------------------------------------------------------------- record type

def test_trip_record_validation():
    C = make_coupon_set([(10.0, 2, 1)])
    S = AttentionState(((10.0, 2, 1),))
    good = TripRecord("t", 8.0, C.non_default[0], C, S, PROFILE)
    assert good.redeemed
    assert not single_record(redeemed=False).redeemed
    with pytest.raises(ValidationError):
        TripRecord("t", 0.0, DEFAULT_GROUP, C, S, PROFILE)
    with pytest.raises(ValidationError):
        TripRecord("t", 8.0, DEFAULT_GROUP, make_coupon_set([]), AttentionState(()), PROFILE)
    with pytest.raises(ValidationError):
        TripRecord("t", 8.0, CouponGroup(7.0, 1, 1), C, S, PROFILE)
    with pytest.raises(ValidationError):
        TripRecord("t", 8.0, DEFAULT_GROUP, C, AttentionState(()), PROFILE)


# ------------------------------------------------------------------ weights

def test_rebalance_two_classes_frozen():
    rec5 = single_record(v=5.0)
    rec10 = single_record(v=10.0)
    records = [rec5] * 2032 + [rec10] * 3319
    w = rebalance_weights(records)
    n = 5351
    assert w[0] == pytest.approx(n / 2032, rel=1e-15)
    assert w[-1] == pytest.approx(n / 3319, rel=1e-15)
    assert sum(w[:2032]) == pytest.approx(n, rel=1e-12)
    assert sum(w[2032:]) == pytest.approx(n, rel=1e-12)


def test_rebalance_four_classes_sums_equal():
    counts = {5.0: 2032, 10.0: 3319, 20.0: 50999, 30.0: 21425}
    records = []
    for v, c in counts.items():
        records.extend([single_record(v=v)] * c)
    w = np.array(rebalance_weights(records))
    n = sum(counts.values())
    start = 0
    for v, c in counts.items():
        assert w[start:start + c].sum() == pytest.approx(n, rel=1e-12)
        start += c


def test_rebalance_single_class_is_uniform():
    records = [single_record(v=20.0)] * 7
    assert rebalance_weights(records) == [1.0] * 7


def test_rebalance_rejects_multi_coupon():
    C = make_coupon_set([(5.0, 1, 1), (10.0, 2, 1)])
    rec = TripRecord("t", 8.0, DEFAULT_GROUP, C, full_attention(C), PROFILE)
    with pytest.raises(DomainError):
        rebalance_weights([rec])


# ------------------------------------------------------------ table builder

def test_build_tables_coverage_and_thread_determinism():
    prof2 = TravelerProfile(0.6, 2.2, 0.5)
    recs = [
        single_record(v=10.0, T=2),
        single_record(v=5.0, T=1, profile=prof2),
        single_record(v=10.0, T=2),   # duplicate wallet, same profile
    ]
    tables = build_tables(recs, McConfig(samples=500, seed=3))
    assert set(tables) == {PROFILE, prof2}
    assert make_coupon_set([(10.0, 1, 1)]) in tables[PROFILE]

    t1 = build_tables(recs, McConfig(samples=500, seed=3), threads=1)
    t2 = build_tables(recs, McConfig(samples=500, seed=3), threads=4)
    for prof in t1:
        assert t1[prof].entries == t2[prof].entries


def test_build_tables_subset_mode_covers_mixture_states():
    C = make_coupon_set([(5.0, 1, 1), (10.0, 2, 2)])
    rec = TripRecord("t", 8.0, DEFAULT_GROUP, C, full_attention(C), PROFILE)
    tables = build_tables([rec], McConfig(samples=200, seed=1), mode="coupon_level")
    table = tables[PROFILE]
    spec = ChoiceModelSpec(unaware=True, theta_a=0.2, theta_as=0.7)
    dist = mixture_prob(spec, C, full_attention(C), 7.0, table)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------- analytic gradients

def random_record(rng, multi=True):
    if multi:
        C = random_coupon_set(rng, max_groups=2, max_t=3, max_n=2)
    else:
        C = make_coupon_set([(float(rng.integers(1, 7) * 5), int(rng.integers(0, 4)), 1)])
    flags = tuple((g.v, g.T, int(rng.integers(2))) for g in C.non_default)
    fare = float(rng.uniform(1.0, 30.0))
    options = [DEFAULT_GROUP, *C.non_default]
    chosen = options[int(rng.integers(len(options)))]
    return TripRecord("t", fare, chosen, C, AttentionState(flags), PROFILE)


def spec_variant(i, rng):
    return ChoiceModelSpec(
        unaware=bool(i & 1), clip=bool(i & 2), extra=bool(i & 4), scaled=bool(i % 3 == 0),
        iid=bool(i % 5 == 0),
        theta_eps=float(rng.uniform(0.2, 1.2)),
        theta_V=float(rng.uniform(0.1, 1.2)),
        theta_v=float(rng.uniform(0.0, 0.6)),
        theta_a=float(rng.uniform(-1.0, 1.0)),
        theta_as=float(rng.uniform(0.0, 1.5)),
        awareness_mode="group_level" if i % 4 == 3 else "coupon_level",
    )


def test_record_gradients_match_finite_differences():
    rng = np.random.default_rng(101)
    checked = 0
    for i in range(16):
        spec = spec_variant(i, rng)
        rec = random_record(rng)
        table = subset_table(rec.coupon_set, rng)
        lp = record_log_prob(spec, rec, table)
        if not math.isfinite(lp):
            continue   # clip removed the observed option; gradient undefined
        got_lp, grad = record_log_prob_grad(spec, rec, table)
        assert got_lp == pytest.approx(lp, rel=1e-12)
        fd = fd_log_prob_grad(spec, rec, table, PARAM_ORDER)
        for j, name in enumerate(PARAM_ORDER):
            denom = max(1.0, abs(grad[j]), abs(fd[j]))
            assert abs(grad[j] - fd[j]) / denom < 1e-4, (name, spec, rec)
        checked += 1
    assert checked >= 12


def test_inert_parameters_have_zero_gradient():
    rng = np.random.default_rng(103)
    rec = random_record(rng)
    table = subset_table(rec.coupon_set, rng)
    spec = ChoiceModelSpec(theta_eps=0.5, theta_V=0.8)   # aware, no extra
    _, grad = record_log_prob_grad(spec, rec, table)
    order = dict(zip(PARAM_ORDER, grad))
    assert order["theta_v"] == 0.0
    assert order["theta_a"] == 0.0 and order["theta_as"] == 0.0


# ----------------------------------------------- fast path == generic path

def fast_vs_generic_case(rng, **spec_kw):
    records = [random_record(rng, multi=False) for _ in range(12)]
    tables = build_tables(records, McConfig(samples=300, seed=5), mode="coupon_level")
    spec = ChoiceModelSpec(**spec_kw)
    from couponmdp.estimation import _single_data, _single_forward

    w = np.ones(len(records))
    data = _single_data(records, w, tables)
    assert data is not None
    ll, grads, p_redeem, _ = _single_forward(spec, data)
    for i, rec in enumerate(records):
        lp, g = record_log_prob_grad(spec, rec, tables[rec.profile])
        if math.isinf(lp):
            assert math.isinf(ll[i])
            continue
        assert ll[i] == pytest.approx(lp, rel=1e-12, abs=1e-15)
        for j in range(len(PARAM_ORDER)):
            assert grads[j, i] == pytest.approx(g[j], rel=1e-12, abs=1e-13)
        if spec.unaware:
            dist = mixture_prob(spec, rec.coupon_set, rec.attention, rec.fare,
                                tables[rec.profile])
        else:
            dist = general_coupon_prob(spec, rec.coupon_set, rec.fare,
                                       tables[rec.profile])
        assert p_redeem[i] == pytest.approx(1.0 - dist[DEFAULT_GROUP], rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("kw", [
    dict(theta_eps=0.6, theta_V=0.9),
    dict(theta_eps=0.6, theta_V=0.9, clip=True),
    dict(theta_eps=0.6, theta_V=0.9, extra=True, theta_v=0.3),
    dict(theta_eps=0.6, theta_V=0.9, scaled=True),
    dict(unaware=True, theta_eps=0.6, theta_V=0.9, theta_a=0.4, theta_as=1.2),
    dict(unaware=True, clip=True, extra=True, scaled=True,
         theta_eps=0.6, theta_V=0.9, theta_v=0.2, theta_a=-0.3, theta_as=0.8),
])
def test_single_coupon_fast_path_matches_generic(kw):
    fast_vs_generic_case(np.random.default_rng(til := sum(map(ord, str(kw)))), **kw)


def test_evaluate_matches_hand_loop_on_single_coupon_data():
    rng = np.random.default_rng(113)
    records = [random_record(rng, multi=False) for _ in range(30)]
    tables = build_tables(records, McConfig(samples=300, seed=9), mode="coupon_level")
    spec = ChoiceModelSpec(unaware=True, theta_eps=0.5, theta_V=0.7,
                           theta_a=0.2, theta_as=1.0)
    weights = rng.uniform(0.5, 2.0, len(records))
    got = evaluate(records, spec, tables, weights)

    ll = acc = ms = obs = 0.0
    for rec, w in zip(records, weights):
        dist = mixture_prob(spec, rec.coupon_set, rec.attention, rec.fare,
                            tables[rec.profile])
        ll += w * math.log(dist[rec.chosen])
        acc += w * (argmax_choice(dist) == rec.chosen)
        ms += w * (1.0 - dist[DEFAULT_GROUP])
        obs += w * rec.redeemed
    wsum = weights.sum()
    assert got.log_likelihood == pytest.approx(ll / wsum, rel=1e-12)
    assert got.accuracy == pytest.approx(acc / wsum, rel=1e-12)
    assert got.ms == pytest.approx(ms / wsum, rel=1e-12)
    assert got.observed_ms == pytest.approx(obs / wsum, rel=1e-12)
    assert got.n_records == 30 and got.n_zero_prob == 0


# ------------------------------------------------------------------ evaluate

def test_evaluate_permutation_invariant_and_bounded():
    rng = np.random.default_rng(127)
    records = [random_record(rng) for _ in range(10)]
    tables = build_tables(records, McConfig(samples=200, seed=2), mode="coupon_level")
    spec = ChoiceModelSpec(unaware=True, theta_eps=0.4, theta_V=0.6,
                           theta_a=0.1, theta_as=0.9)
    m1 = evaluate(records, spec, tables)
    perm = list(np.random.default_rng(1).permutation(len(records)))
    m2 = evaluate([records[i] for i in perm], spec, tables)
    assert m1.log_likelihood == pytest.approx(m2.log_likelihood, rel=1e-12)
    assert m1.accuracy == pytest.approx(m2.accuracy, rel=1e-12)
    assert m1.ms == pytest.approx(m2.ms, rel=1e-12)
    assert m1.log_likelihood <= 0.0
    assert 0.0 <= m1.ms <= 1.0 and 0.0 <= m1.observed_ms <= 1.0


def test_evaluate_flags_zero_probability():
    # clip + aware: paying full fare at p >= v has probability exactly zero
    rec = single_record(v=5.0, T=1, fare=9.0, redeemed=False)
    tables = build_tables([rec], McConfig(samples=200, seed=4))
    spec = ChoiceModelSpec(clip=True)
    m = evaluate([rec], spec, tables)
    assert m.n_zero_prob == 1
    assert m.log_likelihood == -math.inf


def test_perfect_deterministic_model_scores_zero_ll():
    rng = np.random.default_rng(131)
    records = []
    spec = ChoiceModelSpec(theta_eps=1000.0, theta_V=1.0)
    pool = [single_record(v=v, T=0, fare=f, redeemed=r)
            for v in (5.0, 20.0) for f in (2.0, 13.0) for r in (True, False)]
    tables = build_tables(pool, McConfig(samples=200, seed=6))
    for rec in pool:
        dist = general_coupon_prob(spec, rec.coupon_set, rec.fare, tables[rec.profile])
        choice = argmax_choice(dist)
        records.append(TripRecord(rec.traveler_id, rec.fare, choice, rec.coupon_set,
                                  rec.attention, rec.profile))
    m = evaluate(records, spec, tables)
    assert m.accuracy == 1.0
    assert m.log_likelihood == pytest.approx(0.0, abs=1e-9)


# ------------------------------------------------------------------- fitting

def make_generator_tables(faces, t_max, profile, mc=McConfig(samples=4000, seed=21)):
    roots = [make_coupon_set([(v, t, 1)]) for v in faces for t in range(t_max + 1)]
    return {profile: value_hat_many(roots, profile, mc)}


def gen_single_records(n, spec, profile, tables, rng, faces=(5.0, 10.0, 20.0, 30.0),
                       t_max=6):
    """Sample single-coupon trips from the model itself (ground-truth data)."""
    table = tables[profile]
    records = []
    for i in range(n):
        v = float(faces[int(rng.integers(len(faces)))])
        T = int(rng.integers(0, t_max + 1))
        p = float(rng.lognormal(profile.mu_p, profile.sigma_p))
        flag = int(rng.integers(2))
        C = make_coupon_set([(v, T, 1)])
        g = C.non_default[0]
        pi = general_coupon_prob(spec, C, p, table)[g]
        prob = awareness_prob(spec.attention, flag) * pi if spec.unaware else pi
        chosen = g if rng.random() < prob else DEFAULT_GROUP
        records.append(TripRecord(f"t{i}", p, chosen, C,
                                  AttentionState(((v, T, flag),)), profile))
    return records


TRUE_SPEC = ChoiceModelSpec(unaware=True, theta_eps=0.5, theta_V=1.0,
                            theta_a=-0.5, theta_as=1.5)


def test_likelihood_dominance_of_true_parameters():
    rng = np.random.default_rng(137)
    tables = make_generator_tables((5.0, 10.0, 20.0, 30.0), 6, PROFILE)
    records = gen_single_records(5000, TRUE_SPEC, PROFILE, tables, rng)
    base = evaluate(records, TRUE_SPEC, tables).log_likelihood
    wins = 0
    trials = 40
    for _ in range(trials):
        which = int(rng.integers(4))
        delta = 0.5 if rng.random() < 0.5 else -0.5
        kw = {}
        if which == 0:
            kw["theta_eps"] = max(TRUE_SPEC.theta_eps + delta, 0.05)
        elif which == 1:
            kw["theta_V"] = TRUE_SPEC.theta_V + delta
        elif which == 2:
            kw["theta_a"] = TRUE_SPEC.theta_a + delta
        else:
            kw["theta_as"] = TRUE_SPEC.theta_as + delta
        ll = evaluate(records, TRUE_SPEC.with_params(**kw), tables).log_likelihood
        wins += ll <= base + 1e-12
    assert wins >= int(0.95 * trials)


def test_fit_frozen_template_is_identity():
    rng = np.random.default_rng(139)
    tables = make_generator_tables((5.0, 10.0), 3, PROFILE, McConfig(samples=500, seed=8))
    records = gen_single_records(200, TRUE_SPEC, PROFILE, tables, rng, faces=(5.0, 10.0),
                                 t_max=3)
    res = fit(records, TRUE_SPEC, FitConfig(epochs=1), free=(), tables=tables)
    assert res.spec == TRUE_SPEC
    assert res.history == ()
    want = evaluate(records, TRUE_SPEC, tables)
    assert res.metrics.log_likelihood == pytest.approx(want.log_likelihood, rel=1e-12)


def test_fit_recovers_parameters_smoke():
    rng = np.random.default_rng(149)
    truth = ChoiceModelSpec(unaware=True, theta_eps=0.3, theta_V=0.8,
                            theta_a=1.0, theta_as=1.5)
    tables = make_generator_tables((5.0, 10.0, 20.0, 30.0), 6, PROFILE)
    records = gen_single_records(4000, truth, PROFILE, tables, rng)
    template = ChoiceModelSpec(unaware=True, theta_eps=0.1, theta_V=0.5,
                               theta_a=0.5, theta_as=1.0)
    # Adam moves at most ~lr per step, so the epoch count must cover the
    # distance from the init; 150 epochs * 16 batches is ~2.4 units of travel.
    res = fit(records, template, FitConfig(epochs=150, seed=7), tables=tables)
    assert not res.diverged
    assert res.spec.theta_eps == pytest.approx(truth.theta_eps, abs=0.25)
    assert res.spec.theta_V == pytest.approx(truth.theta_V, abs=0.35)
    assert res.spec.theta_a == pytest.approx(truth.theta_a, abs=0.35)
    assert res.spec.theta_as == pytest.approx(truth.theta_as, abs=0.35)
    assert res.best_epoch >= 1
    assert max(res.history) == pytest.approx(res.history[res.best_epoch - 1], rel=1e-15)


def test_fit_deterministic_given_seed():
    rng = np.random.default_rng(151)
    tables = make_generator_tables((5.0, 10.0), 3, PROFILE, McConfig(samples=500, seed=8))
    records = gen_single_records(300, TRUE_SPEC, PROFILE, tables, rng, faces=(5.0, 10.0),
                                 t_max=3)
    template = ChoiceModelSpec(unaware=True, theta_eps=0.2, theta_V=0.6,
                               theta_a=0.3, theta_as=0.9)
    r1 = fit(records, template, FitConfig(epochs=4, seed=42), tables=tables)
    r2 = fit(records, template, FitConfig(epochs=4, seed=42), tables=tables)
    assert r1.spec == r2.spec
    assert r1.history == r2.history


def test_fit_divergence_aborts_with_finite_spec():
    rng = np.random.default_rng(157)
    tables = make_generator_tables((5.0,), 2, PROFILE, McConfig(samples=300, seed=8))
    records = gen_single_records(64, TRUE_SPEC, PROFILE, tables, rng, faces=(5.0,),
                                 t_max=2)
    template = ChoiceModelSpec(unaware=True, theta_eps=0.2, theta_V=0.6,
                               theta_a=0.3, theta_as=0.9)
    res = fit(records, template, FitConfig(learning_rate=1e6, epochs=3, seed=1),
              tables=tables)
    assert res.diverged
    assert math.isfinite(res.spec.theta_eps)


def test_fit_filters_wide_awareness_sets():
    rng = np.random.default_rng(163)
    tables = make_generator_tables((5.0,), 2, PROFILE, McConfig(samples=300, seed=8))
    records = gen_single_records(40, TRUE_SPEC, PROFILE, tables, rng, faces=(5.0,),
                                 t_max=2)
    wide = make_coupon_set([(7.0, 1, 70)])   # 71 awareness subsets > 64
    records.append(TripRecord("wide", 6.0, DEFAULT_GROUP, wide,
                              full_attention(wide), PROFILE))
    res = fit(records, TRUE_SPEC, FitConfig(epochs=1, seed=3), free=())
    assert res.n_filtered == 1
    assert res.metrics.n_records == 40


def test_fit_rejects_inert_free_parameter():
    records = [single_record()]
    with pytest.raises(ValidationError):
        fit(records, ChoiceModelSpec(), FitConfig(), free=("theta_a",))
    with pytest.raises(ValidationError):
        fit(records, ChoiceModelSpec(), FitConfig(), free=("not_a_param",))


def test_param_packing_round_trip():
    spec = ChoiceModelSpec(unaware=True, extra=True, theta_eps=0.7, theta_V=1.1,
                           theta_v=0.2, theta_a=-0.4, theta_as=0.9)
    names = free_param_names(spec)
    assert names == ("log_theta_eps", "theta_V", "theta_v", "theta_a", "theta_as")
    x = pack_params(spec, names)
    assert apply_params(spec, names, x) == spec
    moved = apply_params(spec, names, x + 0.1)
    assert moved.theta_eps == pytest.approx(spec.theta_eps * math.exp(0.1), rel=1e-12)


# ---------------------------------------------------------------- dataset IO

def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(167)
    records = [random_record(rng) for _ in range(8)]
    records.append(single_record(redeemed=False))
    path = tmp_path / "trips.csv"
    write_dataset(path, records)
    back = read_dataset(path)
    assert back == records


def test_dataset_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("traveler_id,fare\nt,3.0\n")
    with pytest.raises(ValidationError):
        read_dataset(path)
    path.write_text(
        "traveler_id,fare,chosen_v,chosen_T,coupon_set,attention,lambda_hat,mu_p,sigma_p\n"
        't,8.0,7.0,1,"[{""v"": 5.0, ""T"": 1, ""n"": 1}]","{""5.0,1"": 0}",0.3,2.5,0.6\n')
    with pytest.raises(ValidationError):
        read_dataset(path)   # chosen group absent from the wallet


def test_report_objects_shape():
    rec = single_record()
    tables = build_tables([rec], McConfig(samples=200, seed=2))
    res = fit([rec], ChoiceModelSpec(), FitConfig(epochs=1), free=(), tables=tables)
    obj = fit_result_to_obj(res)
    assert set(obj) == {"spec", "metrics", "history", "best_epoch", "diverged",
                        "n_filtered", "free", "weighting"}
    m = metrics_to_obj(res.metrics)
    assert set(m) == {"log_likelihood", "accuracy", "ms", "observed_ms",
                      "n_records", "n_zero_prob"}
