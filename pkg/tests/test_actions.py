import numpy as np
import pytest

from quantred import actions as ta
from quantred import models, strata
from quantred.integrate import gauss_segment

TWO_PI = 2.0 * np.pi


def hamilton_residual(action, z, xi, rng, trials=6, h=1e-5):
    """|omega(X^xi, v) - d phi_xi(v)| over random chart directions."""
    m = action.model
    charts = models.chart_indices(m, z)
    w0 = models.to_chart(m, z, charts)
    g = models.chart_metric(m, w0)
    X, _ = ta.fundamental_fields(action, xi, z)
    Xc = models.ambient_to_chart(m, z, X, charts)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(m.n_total) + 1j * rng.standard_normal(m.n_total)
        zp = models.from_chart(m, w0 + h * v, charts)
        zm = models.from_chart(m, w0 - h * v, charts)
        dphi = float((ta.moment_map(action, zp) - ta.moment_map(action, zm)) @ xi) / (2 * h)
        om = models.symplectic_pairing(g, Xc, v)
        worst = max(worst, abs(om - dphi) / (1.0 + abs(v).sum()))
    return worst


def test_hamilton_equation(e2, rng):
    for z in models.random_points(e2.model, 5, rng):
        xi = rng.standard_normal(1)
        assert hamilton_residual(e2, z, xi, rng) < 1e-6


def test_hamilton_equation_rank2_with_shift(rng):
    m = models.make_model([1, 2], [2, 1])
    a = ta.make_action(m, [[1, -1, 0, 2, 1], [0, 1, 1, 0, -1]], shift=[0, "1/2"])
    z = models.random_points(m, 2, rng)
    for zz in z:
        xi = rng.standard_normal(2)
        assert hamilton_residual(a, zz, xi, rng) < 1e-6


def test_moment_examples(e1):
    # weighted mass at [1:0], zero at |z0| = |z1|
    z0 = np.array([1.0, 0.0], dtype=complex)
    assert np.allclose(ta.moment_map(e1, z0), [-TWO_PI])
    zs = models.normalize(e1.model, np.array([1.0, 1.0j], dtype=complex))
    assert abs(ta.moment_map(e1, zs)[0]) < 1e-12


def test_equivariance(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    for _ in range(5):
        theta = rng.standard_normal(1)
        gz = ta.real_flow(e2, theta, z)
        assert np.max(np.abs(ta.moment_map(e2, gz) - ta.moment_map(e2, z))) < 1e-10


def test_fundamental_fields_zero_cases(e1):
    z = models.normalize(e1.model, np.array([1.0, 0.5], dtype=complex))
    X, JX = ta.fundamental_fields(e1, np.zeros(1), z)
    assert np.allclose(X, 0) and np.allclose(JX, 0)
    # fixed point of the action: the fields vanish projectively
    zfix = np.array([1.0, 0.0], dtype=complex)
    X, _ = ta.fundamental_fields(e1, np.array([1.0]), zfix)
    Xc = models.ambient_to_chart(e1.model, zfix, X, (0,))
    assert np.allclose(Xc, 0)


def test_imaginary_flow_group_law(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    xi = np.array([0.37])
    a = ta.imaginary_flow(e2, xi, 0.4, ta.imaginary_flow(e2, xi, 0.25, z))
    b = ta.imaginary_flow(e2, xi, 0.65, z)
    assert models.projective_distance(e2.model, a, b) < 1e-12
    # t = 0 is the identity
    assert models.projective_distance(e2.model, ta.imaginary_flow(e2, xi, 0.0, z), z) < 1e-14


def test_imaginary_flow_limit_direction(e1, rng):
    z = models.random_points(e1.model, 1, rng)[0]
    far = ta.imaginary_flow(e1, np.array([1.0]), 20.0, z)
    assert models.projective_distance(e1.model, far, np.array([0.0, 1.0], dtype=complex)) < 1e-8


def test_moment_monotone_along_imaginary_flow(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    xi = rng.standard_normal(1)
    ts = np.linspace(0.0, 1.5, 25)
    pts = ta.imaginary_flow(e2, xi, ts, z)
    vals = ta.moment_map(e2, pts) @ xi
    assert np.all(np.diff(vals) > -1e-12)


def brute_force_stabilizer(action, z, orders=range(1, 9)):
    """Search root-of-unity torus elements fixing the point (rank 1)."""
    hits = 1
    for q in orders:
        for r in range(1, q):
            gz = ta.real_flow(action, np.array([r / q]), z)
            if models.projective_distance(action.model, gz, z) < 1e-9:
                hits = max(hits, q // np.gcd(r, q))
    return hits


def test_isotropy_examples(e2):
    m = e2.model
    full = ta.isotropy(e2, np.array([0.0, 0.0, 1.0], dtype=complex))
    assert full.is_full
    tri = ta.isotropy(e2, models.normalize(m, np.array([1.0, 1.0, 1.0], dtype=complex)))
    assert tri.dim == 0 and tri.finite_part == 1
    z2 = ta.isotropy(e2, models.normalize(m, np.array([1.0, 1.0, 0.0], dtype=complex)))
    assert z2.dim == 0 and z2.finite_part == 2


def test_isotropy_brute_force_oracle(e1, e2):
    z = models.normalize(e1.model, np.array([1.0, 1.0], dtype=complex))
    assert ta.isotropy(e1, z).finite_part == brute_force_stabilizer(e1, z) == 2
    z = models.normalize(e2.model, np.array([1.0, 1.0, 1.0], dtype=complex))
    assert ta.isotropy(e2, z).finite_part == brute_force_stabilizer(e2, z) == 1


def test_orbit_volume_constancy_and_flag(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    vol0, full = ta.orbit_volume(e2, z)
    assert not full
    for t in (0.3, 1.1):
        gz = ta.real_flow(e2, np.array([t]), z)
        vol, _ = ta.orbit_volume(e2, gz)
        assert abs(vol - vol0) < 1e-8 * vol0
    v_full, is_full = ta.orbit_volume(e2, np.array([0.0, 0.0, 1.0], dtype=complex))
    assert is_full and v_full == 1.0


def test_orbit_volume_against_arclength_oracle(e1):
    # quadrature of |d/dtheta (exp(theta).x)| over one group period
    z = models.normalize(e1.model, np.array([1.0, 1.0], dtype=complex))
    ths, wts = gauss_segment(0.0, 1.0, 64)
    total = 0.0
    h = 1e-6
    for t, w in zip(ths, wts):
        zp = ta.real_flow(e1, np.array([t + h]), z)
        zm = ta.real_flow(e1, np.array([t - h]), z)
        charts = models.chart_indices(e1.model, zp)
        vel = (models.to_chart(e1.model, zp, charts) - models.to_chart(e1.model, zm, charts)) / (2 * h)
        g = models.chart_metric(e1.model, models.to_chart(e1.model, ta.real_flow(e1, np.array([t]), z), charts))
        total += w * np.sqrt(models.metric_pairing(g, vel, vel))
    vol, _ = ta.orbit_volume(e1, z)
    assert abs(total - vol) < 1e-6 * vol
    assert abs(vol - 2.0 * np.sqrt(2.0) * np.pi) < 1e-10


def test_orbit_volume_matches_frame_route(e2, rng):
    # closed-form mass pairing against the numeric chart-frame Gram
    z = models.random_points(e2.model, 1, rng)[0]
    X, _ = ta.fundamental_fields(e2, np.array([1.0]), z)
    charts = models.chart_indices(e2.model, z)
    g = models.chart_metric(e2.model, models.to_chart(e2.model, z, charts))
    Xc = models.ambient_to_chart(e2.model, z, X, charts)
    direct = models.metric_pairing(g, Xc, Xc)
    closed = ta.field_pairing(e2, models.masses(e2.model, z))[0, 0]
    assert abs(direct - closed) < 1e-8 * abs(closed)


def test_flow_potential_basics(e2, st2, rng):
    pts, _ = strata.sample_stratum(e2, st2.open_stratum(), 3, seed=5)
    z = pts[0]
    rep = ta.flow_potential(e2, np.zeros(1), z)
    assert rep.value == 0.0
    assert np.all(np.linalg.eigvalsh(rep.hessian_at_zero) > 0)
    # Hessian at 0 equals 2 B(JX, JX) on m
    iso = ta.isotropy(e2, z)
    mb = ta.m_basis(e2, iso)
    G = ta.field_pairing(e2, models.masses(e2.model, z))
    ref = 2.0 * (mb @ G @ mb.T)
    assert np.max(np.abs(rep.hessian_at_zero - ref)) < 1e-4 * np.max(np.abs(ref))


def test_potential_closed_form_vs_quadrature(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    for _ in range(4):
        xi = rng.standard_normal(1)
        lse = float(ta.potential(e2, xi, z))
        qd = ta.potential_quadrature(e2, xi, z)
        assert abs(lse - qd) < 1e-10 * (1 + abs(lse))


def test_potential_linear_growth(e2, st2):
    # f(t xi, x) >= C t for t >= t0 with C > 0 on stratum samples
    pts, _ = strata.sample_stratum(e2, st2.open_stratum(), 4, seed=9)
    for z in pts:
        p = models.masses(e2.model, z)
        for sgn in (1.0, -1.0):
            vals = [float(ta.potential(e2, np.array([sgn * t]), p, from_masses=True)) / t for t in (1.0, 2.0, 4.0)]
            assert min(vals) > 0


def test_jacobian_tau_at_zero_is_orbit_volume(e1, e2):
    z1 = models.normalize(e1.model, np.array([1.0, 1.0], dtype=complex))
    tau0 = ta.jacobian_tau(e1, np.array([0.0]), z1)
    vol, _ = ta.orbit_volume(e1, z1)
    assert abs(tau0 - vol) < 1e-8 * vol
    pts, _ = strata.sample_stratum(e2, strata.analyze(e2).open_stratum(), 2, seed=3)
    for z in pts:
        tau0 = ta.jacobian_tau(e2, np.array([0.0]), z)
        vol, _ = ta.orbit_volume(e2, z)
        assert abs(tau0 - vol) < 1e-7 * vol


def test_jacobian_tau_analytic_curve(e1):
    # analytic tau on the weight-(1,-1) circle: 8 sqrt(2) pi r^2/(1+r^2)^2, r^2 = e^{8 pi xi}
    z1 = models.normalize(e1.model, np.array([1.0, 1.0], dtype=complex))
    for xi in (0.02, 0.05, -0.07):
        r2 = np.exp(8.0 * np.pi * xi)
        ref = 8.0 * np.sqrt(2.0) * np.pi * r2 / (1.0 + r2) ** 2
        val = ta.jacobian_tau(e1, np.array([xi]), z1)
        assert abs(val - ref) < 1e-7 * ref


def test_jacobian_tau_g_invariance(e2):
    pts, _ = strata.sample_stratum(e2, strata.analyze(e2).open_stratum(), 1, seed=12)
    z = pts[0]
    xi = np.array([0.08])
    v1 = ta.jacobian_tau(e2, xi, z)
    gz = ta.real_flow(e2, np.array([0.41]), z)
    v2 = ta.jacobian_tau(e2, xi, gz)
    assert abs(v1 - v2) < 1e-8 * v1


def test_coarea_consistency_toy(e1, rng):
    """Direct MC integral over the flowed tube equals the iterated tau integral.

    Test function h = |z0 z1|^2 / |z|^4 over the image of (-T, T) x Z under
    the flow, compared against the ambient integral restricted to the tube.
    """
    z0 = models.normalize(e1.model, np.array([1.0, 1.0], dtype=complex))
    T = 0.04
    # iterated: vol(Z) int_-T^T tau(xi) h(e^{i xi} x) dxi (h and tau are
    # G-invariant and Z is a single orbit of geometric length sqrt(2) pi)
    xis, wts = gauss_segment(-T, T, 64)
    taus = ta.jacobian_tau_batch(e1, xis[:, None], z0)
    pts = ta.flow_batch(e1, xis[:, None], z0)
    hvals = np.abs(pts[:, 0] * pts[:, 1]) ** 2
    vol_z = np.sqrt(2.0) * np.pi
    iterated = vol_z * float(np.sum(wts * taus * hvals))
    # direct: ambient MC over the tube {|phi| < phi(T)}
    cut = abs(float(ta.moment_map(e1, ta.imaginary_flow(e1, np.array([1.0]), T, z0))[0]))
    zz = models.random_points(e1.model, 400000, rng)
    phis = ta.moment_map(e1, zz)[:, 0]
    mask = np.abs(phis) < cut
    h = np.abs(zz[:, 0] * zz[:, 1]) ** 2
    vol = models.liouville_volume_exact(e1.model)
    direct = vol * float(np.mean(np.where(mask, h, 0.0)))
    err = vol * float(np.std(np.where(mask, h, 0.0)) / np.sqrt(len(zz)))
    assert abs(direct - iterated) < 3.0 * err + 1e-4 * iterated


def test_norm_transport_direct_evaluation(e1, e2, rng):
    from quantred import sections

    s = sections.invariant_basis(e2, 4, "plain")[0]
    z = models.random_points(e2.model, 1, rng)[0]
    xi = np.array([0.23])
    n0 = sections.pointwise_norm(s, z)
    moved = ta.imaginary_flow(e2, xi, 1.0, z)
    direct = sections.pointwise_norm(s, moved)
    transported = ta.norm_transport(e2, "plain", 4, xi, z, n0)
    assert abs(direct - transported) < 1e-8 * (1e-30 + direct)
    # half-form variant on E1
    r = sections.invariant_basis(e1, 5, "halfform")[0]
    z1 = models.random_points(e1.model, 1, rng)[0]
    n0 = sections.pointwise_norm(r, z1)
    moved = ta.imaginary_flow(e1, xi, 1.0, z1)
    direct = sections.pointwise_norm(r, moved)
    transported = ta.norm_transport(e1, "halfform", 5, xi, z1, n0)
    assert abs(direct - transported) < 1e-8 * (1e-30 + direct)


def test_norm_transport_trivial_cases(e2, rng):
    z = models.random_points(e2.model, 1, rng)[0]
    assert ta.norm_transport(e2, "plain", 3, np.zeros(1), z, 0.77) == pytest.approx(0.77)
    with pytest.raises(ta.ActionError):
        ta.norm_transport(e2, "plain", 3, np.zeros(1), z, -1.0)
    with pytest.raises(ta.ActionError):
        ta.norm_transport(e2, "spicy", 3, np.zeros(1), z, 1.0)


def test_norm_transport_fixed_direction(e2):
    # xi in the isotropy algebra leaves the point and the norm unchanged
    from quantred import sections

    zfix = np.array([0.0, 0.0, 1.0], dtype=complex)  # H = G point
    s = sections.invariant_basis(e2, 4, "plain")[2]
    n0 = sections.pointwise_norm(s, zfix)
    out = ta.norm_transport(e2, "plain", 4, np.array([0.9]), zfix, n0)
    assert abs(out - n0) < 1e-12 * (1 + n0)


def test_lift_integrality(e3):
    assert e3.lift_integral(2)
    assert not e3.lift_integral(3)
