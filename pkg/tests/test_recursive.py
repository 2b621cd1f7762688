import math

import numpy as np
import pytest

from lpann import (
    Dataset,
    SchemeConfig,
    UsageError,
    approximation_bound,
    exact_nn,
    literal_closed_form,
    lp_distance,
    nns_search,
    preprocess,
    query,
    refine_approx,
    run_trials,
    space_usage,
)
from lpann.cli import make_scheme_builder
from lpann.geometry import mazur_map_apply
from lpann.oracle import TrialSpec, make_planted_instance
from lpann.recursive import normalize_exponent, norm_level_copies


def cfg(p=4.0, r=1.0, **kw):
    return SchemeConfig(p=p, r=r, **kw)


# ---------------------------------------------------------------------------
# calculator
# ---------------------------------------------------------------------------

def test_refine_approx_frozen_value():
    # (p/t)^(t/p) c_t^(t/p) (4 beta_eff c_base)^(1-t/p) with 4*2*100 = 800
    got = refine_approx(4.0, 2.0, 2.0, 2.0, 100.0)
    assert got == pytest.approx(2.0 * math.sqrt(800.0), rel=1e-12)
    assert got == pytest.approx(56.568542494923804, rel=1e-12)


def test_refine_approx_degenerate_t_equals_p():
    assert refine_approx(4.0, 4.0, 7.5, 123.0, 999.0) == 7.5


def test_ladder_recurrence_contracts_to_twice_fixed_point():
    # with S = 8 * beta_eff * c_t and c0 = 2^16, four steps reach S^(15/16) * 2
    beta_eff, c_t = 2.0, 2.0
    s_fixed = 8.0 * beta_eff * c_t
    c = 2.0 ** 16
    for _ in range(4):
        c = refine_approx(4.0, 2.0, c_t, beta_eff, c)
    assert c == pytest.approx(s_fixed ** (15.0 / 16.0) * (2.0 ** 16) ** (1.0 / 16.0), rel=1e-12)
    assert c <= 2.0 * s_fixed


def test_k_formula_p4_d16():
    bound = approximation_bound(cfg(), 16)
    lvl = bound.levels[0]
    assert lvl.initial_approx == 128.0  # 4 * 16^(5/4)
    assert lvl.k_nominal == 3
    # the fixed point exceeds c0 here, so no ladder level improves
    assert lvl.ladder == ()
    assert bound.c_p == 128.0


def test_ladder_engages_at_d32():
    bound = approximation_bound(cfg(), 32)
    lvl = bound.levels[0]
    assert lvl.k_nominal == 4
    assert len(lvl.ladder) == 4
    assert all(a > b for a, b in zip((lvl.initial_approx,) + lvl.ladder, lvl.ladder))
    assert bound.c_p == lvl.ladder[-1]


def test_literal_closed_form_values():
    assert literal_closed_form(4.0) == 1024.0
    assert literal_closed_form(8.0) == 110592.0
    assert literal_closed_form(16.0) == 16777216.0


def test_normalize_exponent():
    assert normalize_exponent(4.0, 32) == (4.0, 1.0)
    p_eff, holder = normalize_exponent(8.0, 32)
    assert p_eff == 4.0 and holder == pytest.approx(32.0 ** 0.125, rel=1e-14)
    p_eff, holder = normalize_exponent(16.0, 1024)
    assert p_eff == 8.0 and holder == pytest.approx(1024.0 ** (1 / 8 - 1 / 16), rel=1e-14)
    p_eff, holder = normalize_exponent(3.0, 16)
    assert p_eff == 2.0 and holder == pytest.approx(16.0 ** (1 / 2 - 1 / 3), rel=1e-14)


def test_norm_level_copies():
    assert norm_level_copies(4.0) == 3  # ceil(log2 6)
    assert norm_level_copies(8.0) == 4  # ceil(log2 9)
    assert norm_level_copies(2.0) == 2  # ceil(log2 3)


def test_clamped_bound_includes_holder_factor():
    b4 = approximation_bound(cfg(p=4.0), 32)
    b8 = approximation_bound(cfg(p=8.0), 32)
    assert b8.p_effective == 4.0
    assert b8.holder_factor == pytest.approx(32.0 ** 0.125, rel=1e-14)
    assert b8.c_p == pytest.approx(b8.holder_factor * b4.c_p, rel=1e-14)


# ---------------------------------------------------------------------------
# built scheme
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_scheme():
    spec = TrialSpec(n=250, d=32, p=4.0, r=1.0, trials=1, seed=13)
    dataset, q, planted = make_planted_instance(spec)
    scheme = preprocess(dataset, cfg(seed=4))
    return dataset, q, planted, scheme


def test_single_point_scheme():
    ds = Dataset(np.array([[0.5] * 32]), 4.0)
    scheme = preprocess(ds, cfg(seed=1))
    ans = query(scheme, ds.vectors[0] + 0.01)
    assert ans is not None and ans.id == 0
    assert ans.distance <= 1.0


def test_query_answer_distance_is_original_norm(small_scheme):
    dataset, q, _, _ = small_scheme
    spec = TrialSpec(n=100, d=32, p=8.0, r=1.0, trials=1, seed=3)
    ds8, q8, _ = make_planted_instance(spec)
    scheme8 = preprocess(ds8, cfg(p=8.0, seed=2))
    ans = query(scheme8, q8)
    assert ans is not None
    assert ans.distance == pytest.approx(
        lp_distance(ds8.vectors[ans.id], q8, 8.0), rel=1e-14
    )
    assert ans.distance <= scheme8.bound.c_p * 1.0


def test_monotone_ladder_trace(small_scheme):
    dataset, _, planted, scheme = small_scheme
    rng = np.random.default_rng(77)
    for _ in range(20):
        g = rng.standard_normal(32)
        norm = (np.abs(g) ** 4.0).sum() ** 0.25
        q = dataset.vectors[planted] + 0.9 * g / norm
        ans = query(scheme, q)
        assert ans is not None
        dists = [lp_distance(dataset.vectors[i], q, 4.0) for i in ans.trace]
        assert all(a >= b - 1e-12 for a, b in zip(dists, dists[1:]))
        assert ans.distance <= scheme.bound.c_p * 1.0


def test_per_refinement_conditional_success(small_scheme):
    # conditioned on the previous iterate meeting its bound, the refined
    # iterate meets the tighter one in a 5/6 - 0.05 fraction of events
    dataset, _, planted, scheme = small_scheme
    level = scheme.bound.levels[0]
    bounds = (level.initial_approx,) + level.ladder
    rng = np.random.default_rng(99)
    hits, events = 0, 0
    for _ in range(30):
        g = rng.standard_normal(32)
        q = dataset.vectors[planted] + 0.9 * g / (np.abs(g) ** 4.0).sum() ** 0.25
        ans = query(scheme, q)
        dists = [lp_distance(dataset.vectors[i], q, 4.0) for i in ans.trace]
        for j in range(1, len(dists)):
            if dists[j - 1] <= bounds[j - 1] * scheme.r_effective:
                events += 1
                hits += dists[j] <= bounds[j] * scheme.r_effective
    assert events > 0
    assert hits / events >= 5.0 / 6.0 - 0.05


def test_non_power_of_two_exponent():
    rng = np.random.default_rng(41)
    ds = Dataset(rng.standard_normal((80, 64)), 6.0)
    scheme = preprocess(ds, cfg(p=6.0, seed=2))
    assert scheme.p_effective == 4.0
    assert scheme.holder_factor == pytest.approx(64.0 ** (1 / 4 - 1 / 6), rel=1e-14)
    q = ds.vectors[3] + 0.05
    ans = query(scheme, q)
    assert ans is not None
    assert ans.distance == pytest.approx(lp_distance(ds.vectors[ans.id], q, 6.0), rel=1e-14)
    assert ans.distance <= scheme.bound.c_p * 1.0


def test_delta_knob_widens_covers():
    bound_tight = approximation_bound(cfg(delta=1.0), 32)
    bound_wide = approximation_bound(cfg(delta=0.5), 32)
    assert bound_wide.beta == 2.0 * bound_tight.beta
    assert bound_wide.c_p >= bound_tight.c_p  # wider covers cost approximation
    rng = np.random.default_rng(4)
    ds = Dataset(rng.standard_normal((60, 32)), 4.0)
    scheme = preprocess(ds, cfg(delta=0.5, seed=8))
    ans = query(scheme, ds.vectors[10] + 0.01)
    assert ans is not None and ans.distance <= scheme.bound.c_p


def test_planted_success_rate_small():
    spec = TrialSpec(n=250, d=32, p=4.0, r=1.0, trials=40, seed=5)
    c_p = approximation_bound(cfg(), 32).c_p
    report = run_trials(make_scheme_builder(4.0, 1.0, 1.0), spec, c_p)
    assert report.build_error is None
    assert report.success_rate >= 2.0 / 3.0


def test_mazur_image_and_liftback_contracts(small_scheme):
    dataset, _, planted, scheme = small_scheme
    level = scheme.root.copies[0].ladder[0]
    child = next(ch for ch in level.children if ch.mazur is not None)
    cluster = level.cover.clusters[
        next(i for i, ch in enumerate(level.children) if ch is child)
    ]
    mazur = child.mazur
    y = child.center_vector
    r = scheme.r_effective
    tol = 1e-9 * mazur.c0
    rng = np.random.default_rng(3)
    members = [scheme.root.vector_of(int(m)) for m in cluster.member_ids]

    for x_star in members[:40]:
        g = rng.standard_normal(32)
        q = x_star + 0.9 * r * g / (np.abs(g) ** 4.0).sum() ** 0.25
        if lp_distance(q - y, np.zeros(32), 4.0) > mazur.c0:
            continue
        img_x = mazur_map_apply(mazur, x_star - y)
        img_q = mazur_map_apply(mazur, q - y)
        # image contract: r-near pairs stay r-near after the scaled map
        assert lp_distance(img_x, img_q, 2.0) <= lp_distance(x_star, q, 4.0) + tol
        # lift-back: any member whose image is c_t-near lifts to within c_new
        for z in members[:40]:
            img_z = mazur_map_apply(mazur, z - y)
            if lp_distance(img_z, img_q, 2.0) <= 2.0 * r:
                assert lp_distance(z, q, 4.0) <= level.new_approx * r + tol


def test_clustered_routing_uses_multiple_clusters():
    rng = np.random.default_rng(55)
    d, blob, sep, r = 32, 40, 100.0 * math.sqrt(32), 0.05
    centers = np.zeros((4, d))
    centers[:, 0] = sep * np.arange(4)
    vectors = np.vstack([centers[i] + rng.standard_normal((blob, d)) for i in range(4)])
    ds = Dataset(vectors, 4.0)
    scheme = preprocess(ds, cfg(r=r, seed=6))
    level1 = scheme.root.copies[0].ladder[0]
    assert len(level1.cover.clusters) >= 2

    g = rng.standard_normal(d)
    q = vectors[5] + 0.9 * r * g / (np.abs(g) ** 4.0).sum() ** 0.25
    ans = query(scheme, q)
    assert ans is not None
    assert ans.id < blob  # stays in the query's blob
    assert ans.distance <= scheme.bound.c_p * r


def test_duplicate_points_are_deduplicated():
    rng = np.random.default_rng(9)
    base = rng.standard_normal((30, 32))
    vectors = np.vstack([base, base[:5]])  # ids 30..34 duplicate 0..4
    ds = Dataset(vectors, 4.0)
    scheme = preprocess(ds, cfg(seed=3))
    assert scheme.id_alias == {30: 0, 31: 1, 32: 2, 33: 3, 34: 4}
    ans = query(scheme, base[2] + 0.01)
    assert ans is not None and ans.id < 30


def test_preprocess_usage_errors():
    with pytest.raises(UsageError):
        preprocess(Dataset(np.zeros((0, 4)), 4.0), cfg())
    with pytest.raises(UsageError):
        preprocess(Dataset(np.zeros((2, 4)), 2.0), cfg(p=4.0))
    with pytest.raises(UsageError):
        SchemeConfig(p=2.0, r=1.0)
    with pytest.raises(UsageError):
        SchemeConfig(p=4.0, r=1.0, delta=0.0)


def test_query_dimension_mismatch(small_scheme):
    *_, scheme = small_scheme
    with pytest.raises(UsageError) as err:
        query(scheme, np.zeros(7))
    assert "7" in str(err.value) and "32" in str(err.value)


def test_determinism_same_seed(small_scheme):
    dataset, q, _, scheme = small_scheme
    twin = preprocess(dataset, cfg(seed=4))
    rng = np.random.default_rng(1)
    for _ in range(10):
        qq = rng.standard_normal(32)
        a, b = query(scheme, qq), query(twin, qq)
        assert (a is None) == (b is None)
        if a is not None:
            assert a.id == b.id and a.distance == b.distance
    assert space_usage(scheme).per_level == space_usage(twin).per_level


# ---------------------------------------------------------------------------
# space accounting
# ---------------------------------------------------------------------------

def test_space_single_point():
    ds = Dataset(np.zeros((1, 32)), 4.0)
    scheme = preprocess(ds, cfg(seed=1))
    report = space_usage(scheme)
    assert all(e.points == 1 for e in report.entries)
    assert report.total == len(report.entries)


def test_space_cover_entries_match_sparsity(small_scheme):
    *_, scheme = small_scheme
    report = space_usage(scheme)
    cover_entries = [e for e in report.entries if e.kind == "cover"]
    assert cover_entries
    for e in cover_entries:
        assert e.declared_sparsity == e.points


# ---------------------------------------------------------------------------
# nearest-neighbor wrapper
# ---------------------------------------------------------------------------

def test_nns_single_point():
    ds = Dataset(np.array([[1.0] * 8]), 4.0)
    assert nns_search(ds, 4.0, 0.5, np.zeros(8)) == 0


def test_nns_coincident_query_returns_it():
    rng = np.random.default_rng(12)
    ds = Dataset(rng.standard_normal((40, 16)), 4.0)
    cache = {}
    assert nns_search(ds, 4.0, 0.5, ds.vectors[0], seed=3, cache=cache) == 0


def test_nns_ratio_contract():
    rng = np.random.default_rng(31)
    n, d, p, slack = 500, 32, 4.0, 0.5
    ds = Dataset(rng.standard_normal((n, d)), p)
    c_p = approximation_bound(SchemeConfig(p=p, r=1.0), d).c_p
    cache = {}
    good = 0
    queries = 200
    for _ in range(queries):
        q = rng.standard_normal(d)
        rid = nns_search(ds, p, slack, q, seed=7, cache=cache)
        assert rid is not None
        _, exact = exact_nn(ds, q)
        got = lp_distance(ds.vectors[rid], q, p)
        if got <= c_p * (1.0 + slack) * exact:
            good += 1
    assert good / queries >= 2.0 / 3.0
