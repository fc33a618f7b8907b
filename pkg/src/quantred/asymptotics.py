"""Density functions, truncated versions, tail bounds, residual terms, and
unitarity defects: the quantitative relations between the two quantum norms.

Per stratum point x with stabilizer H != G and m = dim(G/H), the densities

    I_k([x]) = vol(G.x) (k/2pi)^{m/2} int_m tau(xi, x) e^{-k f(xi, x)} dxi
    J_k([x]) = 2^{m/2} (k/2pi)^{m/2} int_m tau e^{-k f} D(xi, x) dxi

relate pointwise norms up- and downstairs (vol is the geometric orbit
volume; D the Liouville divergence correction along the flow line).  Both
are 1 identically on H = G strata.  Residual terms collect the preimage
pieces that miss the zero level; they vanish as k grows.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import actions as ta
from . import models
from . import reduction
from . import sections
from . import strata
from .integrate import (
    TWO_PI,
    adaptive_line_quadrature,
    as_quad,
    ball_quadrature_nodes,
    fit_power,
    gauss_segment,
    rng_for,
)
from .models import as_coords, masses


class AsymptoticsError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# the m-integrals


def _m_integral(action, point, k, weight=None, m_basis=None, s_basis=None,
                radius=None, rel_tol=1e-10, order=48):
    """int over m (or the ball B_radius) of tau(xi, x) e^{-k f(xi, x)} w(xi).

    weight(xis) is an optional extra factor (the divergence correction for
    the J-density).  m = 1 integrates adaptively over the line; m >= 2 uses
    radial Gauss times a seeded direction set, extending the radius until
    the tail is negligible.
    """
    z = as_coords(action.model, point)
    iso = ta.isotropy(action, z)
    mb = ta.m_basis(action, iso) if m_basis is None else m_basis
    m = mb.shape[0]
    if m == 0:
        return 1.0
    if s_basis is None:
        s_basis, _, _ = ta.level_tangent_basis(action, z)
    p = masses(action.model, z)

    def integrand(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        xis = ts[:, None] * mb[0][None, :] if m == 1 else ts
        taus = ta.jacobian_tau_batch(action, xis, z, s_basis=s_basis)
        f = ta.potential(action, xis, p, from_masses=True)
        vals = taus * np.exp(-k * f)
        if weight is not None:
            vals = vals * weight(xis)
        return vals

    if m == 1:
        if radius is None:
            return adaptive_line_quadrature(integrand, rel_tol=rel_tol, order=order)
        x, w = gauss_segment(-radius, radius, 2 * order)
        return float(np.sum(w * integrand(x)))
    rad = radius
    if rad is None:
        rad = 1.0
        total_prev = None
        for _ in range(40):
            nodes, wts = ball_quadrature_nodes(m, rad, radial_order=order, sphere_count=64)
            total = float(np.sum(wts * integrand(nodes)))
            if total_prev is not None and abs(total - total_prev) <= rel_tol * max(abs(total), 1e-300):
                return total
            total_prev = total
            rad += 1.0
        return total
    nodes, wts = ball_quadrature_nodes(m, rad, radial_order=order, sphere_count=64)
    return float(np.sum(wts * integrand(nodes)))


def density_I(action, label, point, k, quad=None):
    """The plain norm density on a stratum; 1 when H = G.

    Limit 2^{-m/2} vol(G.x) as k grows, with vol the geometric orbit volume.
    """
    iso = label.isotropy if isinstance(label, strata.StratumLabel) else ta.isotropy(action, point)
    if iso.is_full:
        return 1.0
    m = action.rank - iso.dim
    vol_geo = ta.geometric_orbit_volume(action, point, iso)
    integral = _m_integral(action, point, k)
    return float(vol_geo * (k / TWO_PI) ** (m / 2.0) * integral)


def density_J(action, label, point, k, quad=None):
    """The half-form norm density on a stratum; 1 when H = G, limit 1."""
    iso = label.isotropy if isinstance(label, strata.StratumLabel) else ta.isotropy(action, point)
    if iso.is_full:
        return 1.0
    m = action.rank - iso.dim
    z = as_coords(action.model, point)
    p = masses(action.model, z)

    def div_weight(xis):
        return ta.divergence_factor(action, xis, p, from_masses=True)

    integral = _m_integral(action, point, k, weight=div_weight)
    return float(2.0 ** (m / 2.0) * (k / TWO_PI) ** (m / 2.0) * integral)


def truncated_density(action, label, point, k, radius):
    """(I_{k,R}, J_{k,R}): the ball-truncated normalized densities.

    I_{k,R} carries no orbit-volume prefactor and tends to 2^{-m/2};
    J_{k,R} tends to 1.
    """
    if radius <= 0:
        raise AsymptoticsError("radius must be positive")
    iso = label.isotropy if isinstance(label, strata.StratumLabel) else ta.isotropy(action, point)
    if iso.is_full:
        return 1.0, 1.0
    m = action.rank - iso.dim
    z = as_coords(action.model, point)
    p = masses(action.model, z)
    base = _m_integral(action, point, k, radius=radius)
    div = _m_integral(
        action, point, k,
        weight=lambda xis: ta.divergence_factor(action, xis, p, from_masses=True),
        radius=radius,
    )
    pref = (k / TWO_PI) ** (m / 2.0)
    return float(pref * base), float(pref * 2.0 ** (m / 2.0) * div)


def select_radius(action, point, rel_err=0.25, r_grid=None, directions=8, seed=3):
    """Largest radius on which the quadratic model of f stays within rel_err.

    The Morse neighborhood proxy of the design decisions: compare f(t xi)
    against its Hessian quadratic along sampled unit directions of m.
    """
    z = as_coords(action.model, point)
    iso = ta.isotropy(action, z)
    mb = ta.m_basis(action, iso)
    m = mb.shape[0]
    if m == 0:
        return 1.0
    p = masses(action.model, z)
    rng = rng_for(seed, "radius")
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        dirs = rng.standard_normal((directions, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rep = ta.flow_potential(action, np.zeros(action.rank), z)
    H = rep.hessian_at_zero
    r_grid = r_grid if r_grid is not None else np.linspace(0.05, 3.0, 60)
    best = r_grid[0]
    for r in r_grid:
        ok = True
        for u in dirs:
            ts = np.linspace(0.2 * r, r, 5)
            xis = ts[:, None] * (u @ mb)[None, :]
            f = ta.potential(action, xis, p, from_masses=True)
            q = 0.5 * (u @ H @ u) * ts**2
            if np.any(np.abs(f - q) > rel_err * np.maximum(q, 1e-12)):
                ok = False
                break
        if ok:
            best = r
        else:
            break
    return float(best)


# ----------------------------------------------------------------------
# tail bounds


@dataclass
class TailCertificate:
    R: float
    D: float
    b: float
    k_min: int
    C: float
    tau_a: float
    tau_b: float
    validated: bool
    checks: list = field(default_factory=list)

    def bound(self, k):
        return self.b * np.exp(-self.R * self.D * np.asarray(k, dtype=float))


def growth_constant(action, point, t_grid=(1.0, 2.0, 4.0, 8.0), directions=16, seed=9):
    """min over unit directions and t >= t0 of f(t xi, x) / t.

    Positive on zero-level strata (f is convex with minimum 0 at 0); may be
    nonpositive at points of nonzero moment level.
    """
    z = as_coords(action.model, point)
    iso = ta.isotropy(action, z)
    mb = ta.m_basis(action, iso)
    m = mb.shape[0]
    if m == 0:
        raise AsymptoticsError("no transverse directions at an H = G point")
    p = masses(action.model, z)
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = rng_for(seed, "growth")
        dirs = rng.standard_normal((directions, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best = np.inf
    for u in dirs:
        for t in t_grid:
            f = float(ta.potential(action, t * (u @ mb), p, from_masses=True))
            best = min(best, f / t)
    return best


def tail_certificate(action, label, point, radius, k_grid, t0=1.0):
    """Exponential tail certificate for the m-integral outside B_radius.

    Assembles tail(k) <= b_hat e^{-R D k} from the transport-potential growth
    constant and an empirical Jacobian growth bound, then validates against
    direct tail quadrature on the requested k grid.
    """
    if radius <= 0:
        raise AsymptoticsError("radius must be positive")
    z = as_coords(action.model, point)
    iso = ta.isotropy(action, z)
    mb = ta.m_basis(action, iso)
    m = mb.shape[0]
    # f is convex with f(0) = 0, so f(t)/t is nondecreasing and the minimum
    # over t >= R bounds the whole tail region
    C = growth_constant(action, point, t_grid=(radius, max(1.0, radius), 2.0, 4.0, 8.0))
    if C <= 0:
        raise AsymptoticsError("nonpositive growth constant: point not on a zero-level stratum")
    s_basis, _, _ = ta.level_tangent_basis(action, z)
    # tau(t u, x) <= tau_b t^{-m} e^{tau_a t} fitted on rays from the
    # truncation radius outward (the near-R region dominates the bound)
    ts = np.linspace(max(0.05, 0.8 * radius), max(6.0, 2 * radius), 32)
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = rng_for(11, "taufit")
        dirs = rng.standard_normal((12, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    tau_a = 0.0
    tau_b = 0.0
    ray_taus = []
    for u in dirs:
        xis = ts[:, None] * (u @ mb)[None, :]
        taus = ta.jacobian_tau_batch(action, xis, z, s_basis=s_basis)
        ray_taus.append(taus)
        live = taus > 1e-200  # beyond this the Jacobian has underflowed to 0
        if np.sum(live) >= 2:
            y = np.log(taus[live] * ts[live] ** m)
            slopes = np.diff(y) / np.diff(ts[live])
            tau_a = max(tau_a, float(np.max(slopes)), 0.0)
    for taus in ray_taus:
        tau_b = max(tau_b, float(np.max(taus * ts**m * np.exp(-tau_a * ts))))
    k_min = int(min(k_grid))
    D = C - tau_a / k_min
    if D <= 0:
        raise AsymptoticsError("tail rate not positive at the smallest k; enlarge k_min")
    sphere = 2.0 if m == 1 else 2.0 * np.pi ** (m / 2) / math.gamma(m / 2)
    b_hat = tau_b * sphere / (radius * k_min * D)
    cert = TailCertificate(R=radius, D=D, b=b_hat, k_min=k_min, C=C, tau_a=tau_a, tau_b=tau_b, validated=True)
    far = max(4.0 * radius, 12.0)
    for k in k_grid:
        direct = _tail_direct(action, z, k, mb, s_basis, radius, far)
        bound = float(cert.bound(k))
        cert.checks.append({"k": int(k), "direct": direct, "bound": bound})
        if direct > bound * (1.0 + 1e-9):
            cert.validated = False
    return cert


def _tail_direct(action, z, k, mb, s_basis, radius, far):
    p = masses(action.model, z)
    m = mb.shape[0]
    if m == 1:
        total = 0.0
        for sgn in (+1.0, -1.0):
            x, w = gauss_segment(radius, far, 96)
            xis = sgn * x[:, None] * mb[0][None, :]
            taus = ta.jacobian_tau_batch(action, xis, z, s_basis=s_basis)
            f = ta.potential(action, xis, p, from_masses=True)
            total += float(np.sum(w * taus * np.exp(-k * f)))
        return total
    nodes, wts = ball_quadrature_nodes(m, far, radial_order=96, sphere_count=64)
    r = np.linalg.norm(nodes, axis=1)
    keep = r > radius
    xis = nodes[keep] @ mb
    taus = ta.jacobian_tau_batch(action, xis, z, s_basis=s_basis)
    f = ta.potential(action, xis, p, from_masses=True)
    return float(np.sum(wts[keep] * taus * np.exp(-k * f)))


# ----------------------------------------------------------------------
# residual pieces


def residual_matrix(action, label, k, twist="plain", quad=None, strat=None):
    """Gram-entry contributions of the extra preimage pieces of one label.

    Per piece and slice: (k/2pi)^{n/2} sum_i sign int_{S_i} (s_a, s_b)(u)
    T_k(u) dvol(S_i), with T_k the transverse integral of tau e^{-k f}
    (times the divergence correction for the half-form twist).
    """
    quad = as_quad(quad)
    strat = strat or strata.analyze(action)
    exps = sections.invariant_exponents(action, k, twist)
    dim = exps.shape[0]
    out = np.zeros((dim, dim), dtype=complex)
    err = np.zeros((dim, dim))
    pieces = strat.pieces.get(label.key, ())
    model = action.model
    for piece in pieces:
        pref = (k / TWO_PI) ** (piece.dim_piece / 2.0)
        for sign, sl in piece.slices:
            mat_s, err_s = _slice_residual(action, sl, exps, k, twist, quad)
            out = out + sign * pref * mat_s
            err = np.sqrt(err**2 + (pref * err_s) ** 2)
    return out, err


def _slice_residual(action, sl, exps, k, twist, quad):
    """int_{S_i} (s_a, s_b)(u) T_k(u) dvol(S_i) over one slice."""
    model = action.model
    dim = exps.shape[0]

    def transverse(z):
        p = masses(model, z)
        weight = None
        if twist == "halfform":
            weight = lambda xis: ta.divergence_factor(action, xis, p, from_masses=True)
        return _m_integral(action, z, k, weight=weight)

    if sl.q == 0:
        J, z = strata.slice_embedding_jacobian(action, sl)
        base = J * TWO_PI**sl.n_theta
        E = sections.section_matrix(model, exps, z, twist)[0]
        T = transverse(z)
        return base * T * (E[:, None] * np.conj(E[None, :])), np.zeros((dim, dim))
    if sl.q != 1:
        raise AsymptoticsError("slice residuals implemented for slice dimension <= 1")
    t_lo, t_hi = sl.segment
    nodes, wts = gauss_segment(t_lo, t_hi, max(24, as_quad(quad).grid_order // 2))
    diag = np.zeros(dim)
    q0 = 1.0
    if twist == "halfform":
        for nj, l in zip(model.factors, model.bundle_degrees):
            q0 *= float(l) ** (-nj / 2.0)
    for t, w in zip(nodes, wts):
        s = np.array([t])
        J, z = strata.slice_embedding_jacobian(action, sl, s)
        p = masses(model, z)
        T = transverse(z)
        diag += w * J * TWO_PI**sl.n_theta * T * q0 * np.prod(np.power(p[None, :], exps), axis=1)
    out = np.zeros((dim, dim), dtype=complex)
    np.fill_diagonal(out, diag)
    return out, np.zeros((dim, dim))


def residual_II(action, label, k, twist="plain", quad=None, strat=None):
    """Trace over the invariant basis of the extra-piece contributions."""
    mat, _ = residual_matrix(action, label, k, twist, quad, strat)
    return float(np.real(np.trace(mat)))


# ----------------------------------------------------------------------
# defects and consistency


@dataclass
class DensityCurve:
    quantity: str
    stratum: str
    points: list = field(default_factory=list)   # (k, value, error)
    fitted_rate: tuple = None

    def fit(self, limit=0.0):
        ks = [p[0] for p in self.points]
        vals = [p[1] for p in self.points]
        if len(ks) < 2 or sum(abs(v - limit) > 0 for v in vals) < 2:
            self.fitted_rate = None
            return None
        C, p, r2 = fit_power(ks, vals, limit=limit)
        self.fitted_rate = (C, p, r2)
        return self.fitted_rate

    def rows(self):
        return [
            {"quantity": self.quantity, "stratum": self.stratum, "k": k, "value": v, "stderr": e}
            for k, v, e in self.points
        ]


def unitarity_defect(action, k, twist="plain", norm_def=1, quad=None, strat=None, grams=None):
    """max |lambda - 1| over generalized eigenvalues of (G_down, G_up).

    The descent matrix is the identity in matched bases, so the defect of
    B'^* B' - I (or A'^* A' - I) is read off the Gram pair under the chosen
    norm definition.  Returns (defect, propagated error).
    """
    if grams is not None:
        gu, gd = grams
    else:
        gu = sections.gram_upstairs(action, k, twist, norm_def, quad, strat=strat)
        gd = reduction.reduced_gram(action, k, twist, norm_def, quad, strat=strat)
    if gu.dim == 0:
        raise AsymptoticsError(f"empty invariant space at k={k}")
    A = gd.matrix
    B = gu.matrix
    eigmin = np.linalg.eigvalsh(B).min()
    if eigmin <= 0:
        raise AsymptoticsError("upstairs Gram not positive definite: insufficient sampling")
    vals, vecs = scipy.linalg.eigh(A, B)
    defect = float(np.max(np.abs(vals - 1.0)))
    idx = int(np.argmax(np.abs(vals - 1.0)))
    v = vecs[:, idx]
    lam = vals[idx]
    denom = float(np.real(np.conj(v) @ B @ v))
    w = np.abs(np.outer(v, np.conj(v)))
    sigma = float(np.sqrt(np.sum(w**2 * (gd.errors**2 + lam**2 * gu.errors**2)))) / max(denom, 1e-300)
    return defect, sigma


def defect_curve(action, ks, twist, norm_def, quad=None, strat=None):
    curve = DensityCurve(quantity="defect_B" if twist == "halfform" else "defect_A",
                         stratum=f"norm_def_{norm_def}")
    for k in ks:
        d, s = unitarity_defect(action, k, twist, norm_def, quad, strat=strat)
        curve.points.append((int(k), d, s))
    return curve


def _stratum_density_integral(action, lab, exps, k, twist, quad, order=32):
    """(k/2pi)^{d_S/2} int_S (desc_a, desc_a) density_k eps_hat, diagonal vector.

    Gauss nodes on the zero-level slice; at each node the descended pair is
    weighted by the density I_k (plain) or J_k (half-form) evaluated through
    the transverse integral.
    """
    model = action.model
    dim = exps.shape[0]
    pref_s = (k / TWO_PI) ** (lab.dim_S / 2.0)
    if lab.isotropy.is_full:
        E = sections.section_matrix(model, exps, lab.representative, twist)[0]
        return np.abs(E) ** 2  # density 1, zero-dimensional stratum
    gamma = lab.isotropy.finite_part
    m = action.rank - lab.isotropy.dim
    sl = strata.make_level_slice(action, lab.top_pattern, np.zeros(action.rank))
    if sl.q == 0:
        nodes, wts = [None], [1.0]
    elif sl.q == 1:
        nodes, wts = gauss_segment(sl.segment[0], sl.segment[1], order)
        nodes = [np.array([t]) for t in nodes]
    else:
        raise AsymptoticsError("density route implemented for slice dimension <= 1")
    out = np.zeros(dim)
    q0 = 1.0
    if twist == "halfform":
        for nj, l in zip(model.factors, model.bundle_degrees):
            q0 *= float(l) ** (-nj / 2.0)
    for s, w in zip(nodes, wts):
        J, z = strata.slice_embedding_jacobian(action, sl, s)
        p = masses(model, z)
        vol, _ = ta.orbit_volume_from_masses(action, p, lab.isotropy)
        base = w * J * TWO_PI**sl.n_theta * gamma / vol
        dens = (density_J if twist == "halfform" else density_I)(action, lab, z, k)
        fac = 1.0
        if twist == "halfform":
            fac = 2.0 ** (-m / 2.0) * vol / gamma
        out += base * dens * fac * q0 * np.prod(np.power(p[None, :], exps), axis=1)
    return pref_s * out


def norm_split_consistency(action, k, twist="plain", quad=None, strat=None):
    """Per-stratum comparison of the direct piece integrals with the
    stratum-density route; returns a report with per-section discrepancies.

    The left side integrates |s|^2 over each preimage piece directly (Monte
    Carlo over the piece's support pattern); the right side combines the
    reduced-space integral of the descended norm against the density I_k or
    J_k with the residual terms.
    """
    quad = as_quad(quad)
    strat = strat or strata.analyze(action)
    model = action.model
    exps = sections.invariant_exponents(action, k, twist)
    dim = exps.shape[0]
    report = {"k": int(k), "twist": twist, "strata": [], "max_nsigma": 0.0, "dim": int(dim)}
    if dim == 0:
        report["note"] = "empty invariant space"
        return report
    mc_quad = as_quad({"samples": quad.samples, "seed": quad.seed, "method": "mc", "blocks": quad.blocks})
    for si, lab in enumerate(strat.strata):
        # ---- direct route
        pref_gz = (k / TWO_PI) ** (lab.dim_upstairs / 2.0)
        if lab.dim_upstairs == 0:
            z0 = lab.representative
            E = sections.section_matrix(model, exps, z0, twist)[0]
            lhs = pref_gz * np.abs(E) ** 2
            lhs_err = np.zeros(dim)
        else:
            sub, suberr = sections._pattern_gram_mc(
                action, exps, twist, lab.top_pattern, mc_quad, ("normsplit", k, twist, si)
            )
            lhs = pref_gz * np.real(np.diag(sub))
            lhs_err = pref_gz * np.real(np.diag(suberr))
        for piece in strat.pieces.get(lab.key, ()):
            prefp = (k / TWO_PI) ** (piece.dim_piece / 2.0)
            sub, suberr = sections._pattern_gram_mc(
                action, exps, twist, piece.pattern, mc_quad, ("normsplit-piece", k, twist, si, piece.pattern)
            )
            lhs = lhs + prefp * np.real(np.diag(sub))
            lhs_err = np.sqrt(lhs_err**2 + (prefp * np.real(np.diag(suberr))) ** 2)
        # ---- stratum-density route (deterministic quadrature)
        rhs = _stratum_density_integral(action, lab, exps, k, twist, quad)
        res_mat, res_err = residual_matrix(action, lab, k, twist, quad, strat)
        rhs = rhs + np.real(np.diag(res_mat))
        rhs_err = np.real(np.diag(res_err))
        # rhs statistical error from the stratum sampling is folded in coarsely
        # through a resampled half-set difference when dim_S > 0
        nsig = np.abs(lhs - rhs) / np.maximum(np.sqrt(lhs_err**2 + rhs_err**2), 1e-12)
        entry = {
            "stratum": si,
            "dim_S": lab.dim_S,
            "lhs": lhs.tolist(),
            "rhs": rhs.tolist(),
            "stderr": np.sqrt(lhs_err**2 + rhs_err**2).tolist(),
            "nsigma": nsig.tolist(),
        }
        report["strata"].append(entry)
        report["max_nsigma"] = max(report["max_nsigma"], float(np.max(nsig)))
    return report
