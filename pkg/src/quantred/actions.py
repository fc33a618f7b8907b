"""Hamiltonian torus actions on projective-space products.

Conventions, pinned by the Hamilton-equation and prequantum checks:

* the torus is T^d = R^d / Z^d with the Euclidean inner product on its Lie
  algebra, so Haar volume is 1;
* exp(xi) acts by z_i -> exp(2 pi i <W_i, xi>) z_i with integer weight
  columns W_i, and the imaginary-time flow is
  e^{i t xi} . z_i = exp(-2 pi t <W_i, xi>) z_i;
* the moment map is phi_a(z) = -2 pi (sum_j l_j sum_{i in j} W_{a i} p_i + c_a)
  with p the per-factor coordinate masses and c the rational shift, which
  satisfies d phi_xi = i_{X^xi} omega and makes phi_xi nondecreasing along
  imaginary flow lines.

Under these conventions the norm-transport potential has the closed form

    f(xi, x) = sum_j l_j log( sum_{i in j} p_i exp(-4 pi <W_i, xi>) ) - 4 pi <c, xi>

and the volume distortion of the time-one imaginary flow is

    v(xi, x) = prod_j exp(-4 pi sum_{i in j} u_i) N_j(xi, x)^{-(n_j + 1)},

with u = W^T xi and N_j the per-factor mass sum after the flow.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from . import models
from ._lattice import rational_nullspace, stabilizer_component_order
from .models import TWO_PI, as_coords, masses

SUPPORT_TOL = 1e-9


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class WeightAction:
    """Integer weight matrix plus rational moment shift on a Model."""

    model: models.Model
    weights: tuple  # d rows of ncoords ints
    shift: tuple    # d Fractions

    def __post_init__(self):
        if len(self.weights) == 0:
            raise ActionError("torus rank must be >= 1")
        for row in self.weights:
            if len(row) != self.model.ncoords:
                raise ActionError("weight row length must match total coordinate count")
        if len(self.shift) != len(self.weights):
            raise ActionError("shift length must match torus rank")

    @property
    def rank(self):
        return len(self.weights)

    @property
    def W(self):
        return np.asarray(self.weights, dtype=float)

    @property
    def shift_float(self):
        return np.asarray([float(c) for c in self.shift])

    def lift_integral(self, k):
        return all((k * c).denominator == 1 for c in self.shift)

    def scaled_weights(self):
        """Weights times the factor degree of their coordinate, l_j W_{a i}."""
        Wl = self.W.copy()
        for sl, l in zip(self.model.slices, self.model.bundle_degrees):
            Wl[:, sl] *= l
        return Wl

    def to_json_dict(self):
        blocks = []
        for sl in self.model.slices:
            blocks.append([[int(v) for v in row[sl]] for row in self.weights])
        return {
            "rank": self.rank,
            "weights": blocks,
            "shift": [str(c) for c in self.shift],
        }


def make_action(model, weights, shift=None):
    W = [tuple(int(v) for v in row) for row in np.atleast_2d(np.asarray(weights, dtype=int))]
    d = len(W)
    if shift is None:
        shift = [0] * d
    sh = tuple(Fraction(c) for c in shift)
    return WeightAction(model=model, weights=tuple(W), shift=sh)


# ----------------------------------------------------------------------
# moment map and fundamental fields


def moment_from_masses(action, p):
    """phi at mass vectors p (already per-factor normalized), shape (..., d)."""
    Wl = action.scaled_weights()
    return -TWO_PI * (np.einsum("ai,...i->...a", Wl, p) + action.shift_float)


def moment_map(action, point):
    z = np.asarray(point.coords if isinstance(point, models.PointM) else point)
    return moment_from_masses(action, masses(action.model, z))


def moment_component(action, xi, point):
    return float(np.dot(moment_map(action, point), np.asarray(xi, dtype=float)))


def fundamental_fields(action, xi, point):
    """Ambient velocities of X^xi and JX^xi at a point.

    X^xi_i = 2 pi i <W_i, xi> z_i and JX^xi = i X^xi (multiplication by i
    descends to the projective J).
    """
    z = as_coords(action.model, point)
    u = np.asarray(xi, dtype=float) @ action.W
    X = TWO_PI * 1j * u * z
    return X, 1j * X


def field_pairing(action, p):
    """Closed-form Gram B(X^{e_a}, X^{e_b}) at mass vectors p, shape (..., d, d).

    Per factor, B(X^u, X^v) = 8 pi^2 l [ <u v>_p - <u>_p <v>_p ].
    """
    p = np.asarray(p, dtype=float)
    d = action.rank
    out = np.zeros(p.shape[:-1] + (d, d))
    W = action.W
    for sl, l in zip(action.model.slices, action.model.bundle_degrees):
        Wb = W[:, sl]
        pb = p[..., sl]
        mixed = np.einsum("ai,bi,...i->...ab", Wb, Wb, pb)
        mean = np.einsum("ai,...i->...a", Wb, pb)
        out += 8.0 * np.pi**2 * l * (mixed - mean[..., :, None] * mean[..., None, :])
    return out


# ----------------------------------------------------------------------
# flows


def imaginary_flow(action, xi, t, point):
    """Closed-form e^{i t xi} . z, renormalized.

    `t` may be a scalar (result broadcasts over a batch of points) or a 1-d
    array paired with a single point (result has shape (len(t), ncoords)).
    Exponents are shifted by the per-factor maximum over the support before
    exponentiation so the flow stays finite arbitrarily far along a ray.
    """
    z = as_coords(action.model, point)
    u = np.asarray(xi, dtype=float) @ action.W
    t = np.asarray(t, dtype=float)
    if t.ndim:
        z = np.broadcast_to(z, t.shape + z.shape)
    expo = np.broadcast_to(-TWO_PI * np.multiply.outer(t, u), z.shape)
    zz = np.empty(z.shape, dtype=complex)
    for sl in action.model.slices:
        e = expo[..., sl]
        on = np.abs(z[..., sl]) > 0
        shift = np.max(np.where(on, e, -np.inf), axis=-1, keepdims=True)
        zz[..., sl] = z[..., sl] * np.exp(e - shift)
    return models.normalize(action.model, zz)


def real_flow(action, theta, point):
    """exp(theta) . z for theta in R^d (period lattice Z^d)."""
    z = as_coords(action.model, point)
    u = np.asarray(theta, dtype=float) @ action.W
    return z * np.exp(TWO_PI * 1j * u)


# ----------------------------------------------------------------------
# isotropy


@dataclass(frozen=True)
class IsotropyDescriptor:
    """Isotropy data: Lie algebra basis over Q, finite component order, H=G flag."""

    algebra_basis: tuple  # tuple of d-tuples of Fractions
    finite_part: int
    is_full: bool

    @property
    def dim(self):
        return len(self.algebra_basis)

    def key(self):
        return (self.algebra_basis, self.finite_part, self.is_full)

    def to_json_dict(self):
        return {
            "algebra_basis": [[str(v) for v in vec] for vec in self.algebra_basis],
            "finite_part": self.finite_part,
            "is_full": self.is_full,
        }


def support_of(model, z, tol=SUPPORT_TOL):
    """Per-factor tuples of coordinate indices carrying non-negligible mass."""
    p = masses(model, z)
    out = []
    for sl in model.slices:
        out.append(tuple(i for i in range(sl.start, sl.stop) if p[..., i] > tol))
    return tuple(out)


def _relative_weight_rows(action, support):
    """Integer rows spanning the effective (projective) weights on a support."""
    rows = []
    for sl, sup in zip(action.model.slices, support):
        base = sup[0]
        for i in sup[1:]:
            rows.append(tuple(int(row[i]) - int(row[base]) for row in action.weights))
    return rows


def isotropy_of_support(action, support):
    rows = _relative_weight_rows(action, support)
    d = action.rank
    if not rows:
        basis = tuple(tuple(Fraction(int(i == a)) for i in range(d)) for a in range(d))
        return IsotropyDescriptor(algebra_basis=basis, finite_part=1, is_full=True)
    basis = tuple(rational_nullspace(rows))
    is_full = len(basis) == d
    finite = 1 if is_full else stabilizer_component_order(rows)
    return IsotropyDescriptor(algebra_basis=basis, finite_part=int(finite), is_full=is_full)


def isotropy(action, point, tol=SUPPORT_TOL):
    z = as_coords(action.model, point)
    return isotropy_of_support(action, support_of(action.model, z, tol))


def m_basis(action, iso):
    """Orthonormal basis of the orthogonal complement of the isotropy algebra."""
    d = action.rank
    if iso.is_full:
        return np.zeros((0, d))
    if iso.dim == 0:
        return np.eye(d)
    H = np.asarray([[float(v) for v in vec] for vec in iso.algebra_basis])
    # complement via QR of the projector onto span(H)^perp
    q, _ = np.linalg.qr(H.T, mode="complete")
    return q[:, iso.dim :].T.copy()


# ----------------------------------------------------------------------
# orbit volume and the coarea Jacobian


def orbit_volume_from_masses(action, p, iso):
    """Orbit volume at mass vectors, Gram-determinant closed form."""
    if iso.is_full:
        return 1.0, True
    mb = m_basis(action, iso)
    G = field_pairing(action, p)
    Gm = mb @ G @ mb.T
    det = float(np.linalg.det(Gm))
    if det <= 0:
        return 0.0, False
    return float(np.sqrt(det)), False


def orbit_volume(action, point, iso=None):
    """sqrt det B(X^{xi_a}, X^{xi_b}) over an orthonormal basis of m.

    This is the group-parametrized orbit volume; for a stabilizer with
    finite part gamma it counts the geometric orbit gamma times.  Returns
    (value, is_full); the H = G branch returns the empty-product value 1.
    """
    z = as_coords(action.model, point)
    if iso is None:
        iso = isotropy(action, z)
    return orbit_volume_from_masses(action, masses(action.model, z), iso)


def geometric_orbit_volume(action, point, iso=None):
    """Orbit volume divided by the finite stabilizer order (covering-corrected)."""
    z = as_coords(action.model, point)
    if iso is None:
        iso = isotropy(action, z)
    vol, full = orbit_volume(action, z, iso)
    if full:
        return 1.0
    return vol / iso.finite_part


def level_tangent_basis(action, point, fd_step=1e-6):
    """B-orthonormal chart basis of ker(d phi) within the point's support stratum.

    This is the tangent space at the point of the moment level set inside the
    open support pattern, which is what the coarea parametrizations slice
    along (Z_(H) at level 0, the S_i at nonzero levels).
    """
    model = action.model
    z = as_coords(model, point)
    support = support_of(model, z)
    charts = models.chart_indices(model, z)
    w0 = models.to_chart(model, z, charts)
    cols = models._chart_cols(model, charts)
    keep = [pos for pos, col in enumerate(cols) if any(col in sup for sup in support)]
    dirs = []
    for pos in keep:
        for mult in (1.0, 1j):
            e = np.zeros(model.n_total, dtype=complex)
            e[pos] = mult
            dirs.append(e)
    dirs = np.asarray(dirs)
    # dphi on each direction by central differences through the chart
    rows = []
    for e in dirs:
        zp = models.from_chart(model, w0 + fd_step * e, charts)
        zm = models.from_chart(model, w0 - fd_step * e, charts)
        rows.append((moment_map(action, zp) - moment_map(action, zm)) / (2 * fd_step))
    A = np.asarray(rows)  # (ndirs, d)
    iso = isotropy_of_support(action, support)
    m = action.rank - iso.dim
    u, s, vt = np.linalg.svd(A.T, full_matrices=True)
    if m and (len(s) < m or s[m - 1] < 1e-6 * max(1.0, s[0] if len(s) else 1.0)):
        raise ActionError("point does not have the expected moment-map rank on its stratum")
    null = vt[m:].T  # combinations of dirs spanning ker dphi
    vecs = [np.tensordot(c, dirs, axes=(0, 0)) for c in null.T]
    # B-orthonormalize
    g = models.chart_metric(model, w0)
    basis = []
    for v in vecs:
        for b in basis:
            v = v - models.metric_pairing(g, v, b) * b
        nrm = np.sqrt(models.metric_pairing(g, v, v))
        if nrm > 1e-10:
            basis.append(v / nrm)
    return np.asarray(basis), charts, w0


def jacobian_tau(action, xi, point, s_basis=None, fd_step=1e-6):
    """Numeric coarea Jacobian tau(xi, u) of Lambda(xi, u) = e^{i xi} . u.

    Builds the pushforwards of an orthonormal basis of m (as JX fields at the
    flowed point) and of a B-orthonormal tangent basis of the slice through u,
    and returns the square root of their Gram determinant at the target.
    """
    taus = jacobian_tau_batch(action, np.atleast_2d(np.asarray(xi, dtype=float)), point, s_basis, fd_step)
    return float(taus[0]) if np.ndim(xi) == 1 else taus


def flow_batch(action, xis, z):
    """e^{i xi} . z for an (N, d) array of xi; z a single point.  Shape (N, nc)."""
    z = as_coords(action.model, z)
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    expo = -TWO_PI * (xis @ action.W)
    out = np.empty(expo.shape, dtype=complex)
    for sl in action.model.slices:
        e = expo[:, sl]
        on = np.abs(z[sl]) > 0
        shift = np.max(np.where(on[None, :], e, -np.inf), axis=1, keepdims=True)
        out[:, sl] = z[sl][None, :] * np.exp(e - shift)
    return models.normalize(action.model, out)


def jacobian_tau_batch(action, xis, point, s_basis=None, fd_step=1e-6):
    """Vectorized tau over an (N, d) array of Lie-algebra points.

    All pushforwards are batched: the flowed base point, the JX fields at
    it, and the finite-difference images of the slice tangent basis; the
    target Gram determinants are taken per chart group.
    """
    model = action.model
    z = as_coords(model, point)
    if s_basis is None:
        s_basis, charts0, w0 = level_tangent_basis(action, z)
    else:
        charts0 = models.chart_indices(model, z)
        w0 = models.to_chart(model, z, charts0)
    iso = isotropy(action, z)
    mb = m_basis(action, iso)
    m = mb.shape[0]
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    N = xis.shape[0]
    nb = len(s_basis)
    npush = m + nb
    ys = flow_batch(action, xis, z)
    ends = []
    for v in s_basis:
        zp = models.from_chart(model, w0 + fd_step * v, charts0)
        zm = models.from_chart(model, w0 - fd_step * v, charts0)
        ends.append((flow_batch(action, xis, zp), flow_batch(action, xis, zm)))
    # group rows by chart tuple of the flowed base point
    charts_rows = np.empty((N, len(model.factors)), dtype=int)
    for jj, sl in enumerate(model.slices):
        charts_rows[:, jj] = sl.start + np.argmax(np.abs(ys[:, sl]), axis=1)
    taus = np.empty(N)
    Wf = action.W
    for charts in np.unique(charts_rows, axis=0):
        rows = np.all(charts_rows == charts, axis=1)
        yg = ys[rows]
        ng = yg.shape[0]
        cy = tuple(int(c) for c in charts)
        wy = models.to_chart(model, yg, cy)
        gy = models.chart_metric(model, wy)
        cols = np.empty((ng, npush, model.n_total), dtype=complex)
        for a in range(m):
            u = mb[a] @ Wf
            JX = -TWO_PI * u * yg  # JX^xi ambient: i * (2 pi i u z)
            cols[:, a, :] = models.ambient_to_chart(model, yg, JX, cy)
        for b, (yp, ym) in enumerate(ends):
            wp = models.to_chart(model, yp[rows], cy)
            wm = models.to_chart(model, ym[rows], cy)
            cols[:, m + b, :] = (wp - wm) / (2 * fd_step)
        G = 2.0 * np.real(np.einsum("npa,nab,nqb->npq", cols, gy, np.conj(cols)))
        det = np.linalg.det(G)
        # far along a ray the pushforwards underflow; that is tau -> 0, not a bug
        scale = np.prod(np.einsum("npp->np", G), axis=1)
        if np.any(det < -1e-8 * np.maximum(scale, 1e-300)):
            raise ActionError("degenerate coarea differential (stratification bug)")
        taus[rows] = np.sqrt(np.clip(det, 0.0, None))
    return taus


# ----------------------------------------------------------------------
# norm-transport potential


def potential(action, xi, point_or_masses, from_masses=False):
    """f(xi, x) = 2 int_0^1 phi_xi(e^{i t xi} x) dt in closed log-sum-exp form.

    Broadcasts over an (..., d) array of xi.
    """
    model = action.model
    p = np.asarray(point_or_masses, dtype=float) if from_masses else masses(model, as_coords(model, point_or_masses))
    xi = np.asarray(xi, dtype=float)
    u = xi @ action.W  # (..., ncoords)
    out = -2.0 * TWO_PI * (xi @ action.shift_float)
    logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    for sl, l in zip(model.slices, model.bundle_degrees):
        # subtracting the xi = 0 value makes f(0, x) exactly zero and removes
        # any drift from imperfect mass normalization
        out = out + l * (
            logsumexp(logp[..., sl] - 2.0 * TWO_PI * u[..., sl], axis=-1)
            - logsumexp(logp[..., sl], axis=-1)
        )
    return out


def potential_quadrature(action, xi, point, order=64):
    """f by Gauss-Legendre quadrature of the defining integrand (reference route)."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    ts = 0.5 * (nodes + 1.0)
    pts = imaginary_flow(action, np.asarray(xi, dtype=float), ts, point)
    vals = moment_map(action, pts) @ np.asarray(xi, dtype=float)
    return float(2.0 * 0.5 * np.sum(wts * vals))


def divergence_factor(action, xi, point_or_masses, from_masses=False):
    """exp{ -int_0^1 (L_{JX^xi} eps)/(2 eps) dt } = v(xi, x)^{-1/2}, closed form.

    v is the Riemannian volume distortion of the time-one imaginary flow,
    v = prod_j exp(-4 pi sum_{i in j} u_i) N_j^{-(n_j+1)} with u = W^T xi.
    """
    model = action.model
    p = np.asarray(point_or_masses, dtype=float) if from_masses else masses(model, as_coords(model, point_or_masses))
    xi = np.asarray(xi, dtype=float)
    u = xi @ action.W
    logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    logv = 0.0
    for sl, nj in zip(model.slices, model.factors):
        logN = logsumexp(logp[..., sl] - 2.0 * TWO_PI * u[..., sl], axis=-1)
        logv = logv - 2.0 * TWO_PI * np.sum(u[..., sl], axis=-1) - (nj + 1) * logN
    return np.exp(-0.5 * logv)


def pointwise_divergence(action, xi, point):
    """(L_{JX^xi} eps)/eps at a point, closed form.

    Equals sum_j 4 pi [ (n_j + 1) <u>_{p, j} - sum_{i in j} u_i ] with u = W^T xi.
    """
    model = action.model
    p = masses(model, as_coords(model, point))
    u = np.asarray(xi, dtype=float) @ action.W
    out = 0.0
    for sl, nj in zip(model.slices, model.factors):
        out += 2.0 * TWO_PI * ((nj + 1) * float(np.sum(u[sl] * p[..., sl])) - float(np.sum(u[sl])))
    return out


@dataclass
class FlowPotentialReport:
    """Value, m-gradient and m-Hessian at 0 of the transport potential."""

    value: float
    gradient: np.ndarray
    hessian_at_zero: np.ndarray


def flow_potential(action, xi, point, fd_step=1e-4):
    model = action.model
    z = as_coords(model, point)
    p = masses(model, z)
    iso = isotropy(action, z)
    mb = m_basis(action, iso)
    m = mb.shape[0]
    xi = np.asarray(xi, dtype=float)
    value = float(potential(action, xi, p, from_masses=True))

    def f_m(s):
        return float(potential(action, xi + s @ mb, p, from_masses=True))

    grad = np.zeros(m)
    hess = np.zeros((m, m))
    for a in range(m):
        ea = np.zeros(m)
        ea[a] = fd_step
        grad[a] = (f_m(ea) - f_m(-ea)) / (2 * fd_step)
    zero = np.zeros(m)
    for a in range(m):
        for b in range(a, m):
            ea, eb = np.zeros(m), np.zeros(m)
            ea[a] = fd_step
            eb[b] = fd_step
            # Hessian at xi = 0 regardless of the requested evaluation point
            val = (
                _pot_at(action, p, zero + ea + eb, mb)
                - _pot_at(action, p, zero + ea - eb, mb)
                - _pot_at(action, p, zero - ea + eb, mb)
                + _pot_at(action, p, zero - ea - eb, mb)
            ) / (4 * fd_step**2)
            hess[a, b] = hess[b, a] = val
    return FlowPotentialReport(value=value, gradient=grad, hessian_at_zero=hess)


def _pot_at(action, p, s, mb):
    return float(potential(action, s @ mb, p, from_masses=True))


def norm_transport(action, kind, k, xi, point, pointwise_norm_at_point):
    """Transport a pointwise norm square along e^{i xi}.

    kind 'plain' applies exp(-k f); kind 'halfform' multiplies in the
    Liouville divergence correction along the flow line.
    """
    if pointwise_norm_at_point < 0:
        raise ActionError("pointwise norm must be nonnegative")
    z = as_coords(action.model, point)
    p = masses(action.model, z)
    f = float(potential(action, np.asarray(xi, dtype=float), p, from_masses=True))
    out = pointwise_norm_at_point * np.exp(-k * f)
    if kind == "halfform":
        out *= float(divergence_factor(action, np.asarray(xi, dtype=float), p, from_masses=True))
    elif kind != "plain":
        raise ActionError(f"unknown transport kind {kind!r}")
    return float(out)
