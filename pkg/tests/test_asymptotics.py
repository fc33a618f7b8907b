import numpy as np
import pytest
from scipy.special import gammaln

from quantred import actions as ta
from quantred import asymptotics, models, reduction, sections, strata


def e1_density_I_exact(k):
    # pi sqrt(k/2) Gamma((k+2)/2) / Gamma((k+3)/2), from the sech-power integral
    return np.pi * np.sqrt(k / 2.0) * np.exp(gammaln((k + 2) / 2.0) - gammaln((k + 3) / 2.0))


def e1_density_J_exact(k):
    return np.sqrt(k / (2 * np.pi)) * np.sqrt(np.pi) * np.exp(gammaln((k + 1) / 2.0) - gammaln((k + 2) / 2.0))


def test_density_I_e1_frozen_law(e1, st1):
    lab = st1.strata[0]
    x = lab.representative
    for k in (2, 4, 10, 40, 100):
        val = asymptotics.density_I(e1, lab, x, k)
        assert abs(val - e1_density_I_exact(k)) < 1e-8 * e1_density_I_exact(k)


def test_density_J_e1_frozen_law(e1, st1):
    lab = st1.strata[0]
    x = lab.representative
    for k in (2, 10, 40, 100):
        val = asymptotics.density_J(e1, lab, x, k)
        assert abs(val - e1_density_J_exact(k)) < 1e-8 * e1_density_J_exact(k)


def test_density_h_equals_g_is_one(e2, st2):
    full = [s for s in st2.strata if s.isotropy.is_full][0]
    assert asymptotics.density_I(e2, full, full.representative, 7) == 1.0
    assert asymptotics.density_J(e2, full, full.representative, 7) == 1.0


def test_density_limits_on_e2_free_stratum(e2, st2):
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 3, seed=21)
    for x in pts:
        lim = 2.0 ** (-0.5) * ta.geometric_orbit_volume(e2, x)
        errs = [abs(asymptotics.density_I(e2, lab, x, k) - lim) / lim for k in (10, 20, 40, 100)]
        assert all(a > b for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.05


def test_density_J_limit_one_e3(e3, st3):
    lab = st3.open_stratum()
    pts, _ = strata.sample_stratum(e3, lab, 2, seed=5)
    for x in pts:
        assert abs(asymptotics.density_J(e3, lab, x, 100) - 1.0) < 0.05


def test_gaussian_sanity_of_density(e2, st2):
    # with tau frozen at tau(0) and f replaced by its quadratic the integral
    # is exactly 2^{-m/2} vol(G.x); the true k = 200 density is within 1%
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 2, seed=2)
    for x in pts:
        lim = 2.0 ** (-0.5) * ta.geometric_orbit_volume(e2, x)
        val = asymptotics.density_I(e2, lab, x, 200)
        assert abs(val - lim) < 0.01 * lim


def test_truncated_density_limits(e2, st2):
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 1, seed=31)
    x = pts[0]
    R = asymptotics.select_radius(e2, x)
    i_prev = j_prev = None
    for k in (10, 30, 90):
        i_kr, j_kr = asymptotics.truncated_density(e2, lab, x, k, R)
        di, dj = abs(i_kr - 2.0 ** (-0.5)), abs(j_kr - 1.0)
        if i_prev is not None:
            assert di < i_prev and dj < j_prev
        i_prev, j_prev = di, dj
    assert i_prev < 0.02 and j_prev < 0.02


def test_truncation_radius_stability(e2, st2):
    # two admissible radii change the truncated value by less than the
    # certified tail bound
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 1, seed=41)
    x = pts[0]
    R1 = asymptotics.select_radius(e2, x)
    R2 = 1.5 * R1
    k = 30
    i1, _ = asymptotics.truncated_density(e2, lab, x, k, R1)
    i2, _ = asymptotics.truncated_density(e2, lab, x, k, R2)
    cert = asymptotics.tail_certificate(e2, lab, x, R1, [k])
    pref = (k / (2 * np.pi)) ** 0.5
    assert abs(i2 - i1) <= pref * float(cert.bound(k)) + 1e-12


def test_tail_certificate_properties(e2, st2):
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 3, seed=51)
    for x in pts:
        R = asymptotics.select_radius(e2, x)
        cert = asymptotics.tail_certificate(e2, lab, x, R, [10, 30, 50])
        assert cert.C > 0
        assert cert.validated
        bounds = cert.bound(np.array([10, 30, 50]))
        assert np.all(np.diff(bounds) < 0)


def test_tail_certificate_rejects_offstratum_point(e2, st2):
    full = [s for s in st2.strata if s.isotropy.is_full][0]
    piece = st2.pieces[full.key][0]
    _, sl = piece.slices[0]
    u = models.normalize(e2.model, sl.point(theta=np.zeros(e2.model.ncoords)))
    with pytest.raises(asymptotics.AsymptoticsError):
        asymptotics.tail_certificate(e2, full, u, 0.5, [10])


def test_residual_e2_exact_law(e2, st2):
    # both preimage pieces of the H = G label are lines; the direct integral
    # of the surviving monomial gives II_k = 2 sqrt(2 pi k)/(k+1) exactly
    full = [s for s in st2.strata if s.isotropy.is_full][0]
    for k in (4, 10, 30, 60):
        val = asymptotics.residual_II(e2, full, k, "plain", strat=st2)
        ref = 2.0 * np.sqrt(2 * np.pi * k) / (k + 1)
        assert abs(val - ref) < 1e-9 * ref


def test_residual_zero_when_dphi_surjective(e2, st2):
    assert asymptotics.residual_II(e2, st2.open_stratum(), 8, "plain", strat=st2) == 0.0


def test_residual_decreasing(e2, st2):
    full = [s for s in st2.strata if s.isotropy.is_full][0]
    vals = {k: asymptotics.residual_II(e2, full, k, "plain", strat=st2) for k in (10, 20, 30, 40, 50, 60)}
    for k in (10, 20, 30, 40, 50):
        assert vals[k + 10] < vals[k]
    assert all(v > 0 for v in vals.values())


def test_defect_scalar_case(e1, st1):
    gu = sections.gram_upstairs(e1, 2, "plain", 2, {"method": "exact"}, strat=st1)
    gd = reduction.reduced_gram(e1, 2, "plain", 2, {"method": "grid"}, strat=st1)
    d, _ = asymptotics.unitarity_defect(e1, 2, "plain", 2, grams=(gu, gd))
    assert abs(d - abs(gd.matrix[0, 0].real / gu.matrix[0, 0].real - 1.0)) < 1e-12


def test_defect_halfform_decreases_plain_floors(e3, st3):
    quad = {"method": "exact", "grid_order": 96}
    dh = {k: asymptotics.unitarity_defect(e3, k, "halfform", 1, quad, strat=st3)[0] for k in (10, 40)}
    assert dh[40] < dh[10] / 2.0
    dp = {k: asymptotics.unitarity_defect(e3, k, "plain", 1, quad, strat=st3)[0] for k in (10, 40)}
    assert min(dp.values()) > 0.2


def test_defect_empty_space_raises(e1):
    with pytest.raises(asymptotics.AsymptoticsError):
        asymptotics.unitarity_defect(e1, 3, "plain", 1, {"method": "exact"})


def test_norm_split_consistency_small(e1, e2, st1, st2):
    rep1 = asymptotics.norm_split_consistency(e1, 4, "plain", {"samples": 150000, "seed": 12, "method": "mc"}, strat=st1)
    assert rep1["max_nsigma"] < 3.0
    rep2 = asymptotics.norm_split_consistency(e2, 4, "plain", {"samples": 150000, "seed": 12, "method": "mc"}, strat=st2)
    assert rep2["max_nsigma"] < 3.0


def test_norm_split_budget_scaling(e2, st2):
    # estimator consistency: quadrupling the budget moves both sides together
    a = asymptotics.norm_split_consistency(e2, 4, "plain", {"samples": 40000, "seed": 3, "method": "mc"}, strat=st2)
    b = asymptotics.norm_split_consistency(e2, 4, "plain", {"samples": 160000, "seed": 3, "method": "mc"}, strat=st2)
    la = np.asarray(a["strata"][2]["lhs"])
    lb = np.asarray(b["strata"][2]["lhs"])
    rhs = np.asarray(b["strata"][2]["rhs"])
    assert np.max(np.abs(lb - rhs) / rhs) <= np.max(np.abs(la - rhs) / rhs) + 0.02


def test_truncated_plus_tail_decomposition(e2, st2):
    # density_I = vol * I_{k,R} + vol * (k/2pi)^{m/2} * tail, within quadrature error
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 1, seed=71)
    x = pts[0]
    R = asymptotics.select_radius(e2, x)
    k = 24
    vol = ta.geometric_orbit_volume(e2, x)
    full = asymptotics.density_I(e2, lab, x, k)
    ikr, _ = asymptotics.truncated_density(e2, lab, x, k, R)
    iso = ta.isotropy(e2, x)
    mb = ta.m_basis(e2, iso)
    s_basis, _, _ = ta.level_tangent_basis(e2, x)
    tail = asymptotics._tail_direct(e2, models.as_coords(e2.model, x), k, mb, s_basis, R, max(6.0, 4 * R))
    recon = vol * ikr + vol * (k / (2 * np.pi)) ** 0.5 * tail
    assert abs(full - recon) < 1e-8 * full


def test_pushdown_degeneration_limit():
    """Stratified degeneration toward a lower stratum, at the data level.

    On the unshifted product of two lines (metaplectic, two H = G points)
    the descended plain values vary continuously into the lower stratum
    while the half-form direction factor 2^{-m/2} vol(G.x) collapses: the
    push-down form loses its orbit directions there.
    """
    from quantred import reduction, sections

    m = models.make_model([1, 1], [1, 1])
    a = ta.make_action(m, [[1, 0, -1, 0]])
    s = sections.invariant_basis(a, 4, "plain")[0]  # the monomial surviving at mu = 0
    z_lim = models.normalize(m, np.array([0, 1.0, 0, 1.0], dtype=complex))
    target = sections.pointwise_norm(s, z_lim)
    vals, facs = [], []
    for mu in (0.1, 0.01, 0.001):
        z = models.normalize(m, np.array(
            [np.sqrt(mu), np.sqrt(1 - mu), np.sqrt(mu), np.sqrt(1 - mu)], dtype=complex))
        vals.append(sections.pointwise_norm(s, z))
        facs.append(reduction.descent_norm_factor(a, z))
    errs = [abs(v - target) for v in vals]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.05 * target
    assert facs[0] > facs[1] > facs[2] > 0 and facs[2] < 0.15 * facs[0]


def test_density_curve_fit(e2, st2):
    lab = st2.open_stratum()
    pts, _ = strata.sample_stratum(e2, lab, 1, seed=61)
    x = pts[0]
    curve = asymptotics.DensityCurve(quantity="I", stratum="open")
    for k in (10, 20, 40, 80):
        curve.points.append((k, asymptotics.density_I(e2, lab, x, k), 0.0))
    lim = 2.0 ** (-0.5) * ta.geometric_orbit_volume(e2, x)
    C, p, r2 = curve.fit(limit=lim)
    assert p > 0.8 and r2 > 0.99
