"""Quantum Hilbert spaces upstairs: monomial bases, invariant subspaces,
pointwise norms, and Gram matrices under both inner-product definitions.

Sections of L^k are multi-homogeneous polynomials of per-factor degree
k*l_j; the half-form twist shifts the degrees to k*l_j - (n_j+1)/2.  On
unit-normalized coordinates the plain pointwise norm square of a polynomial
is simply |P(z)|^2; the twisted norm carries the half-form frame factor
(mu, mu) computed numerically in a chart from mu^2 wedge conj(mu^2) against
the Liouville form.
"""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import actions as ta
from . import models
from . import strata
from .integrate import TWO_PI, as_quad, rng_for
from .models import as_coords


class SectionError(ValueError):
    pass


@dataclass
class SectionPoly:
    """Multi-homogeneous polynomial section with a sparse coefficient map."""

    model: models.Model
    k: int
    twist: str                    # 'plain' | 'halfform'
    coeffs: dict                  # exponent tuple -> complex

    def __post_init__(self):
        degs = section_degrees(self.model, self.k, self.twist)
        for expo in self.coeffs:
            if len(expo) != self.model.ncoords or any(e < 0 for e in expo):
                raise SectionError("bad exponent tuple")
            for sl, d in zip(self.model.slices, degs):
                if sum(expo[sl.start : sl.stop]) != d:
                    raise SectionError("exponent tuple has wrong multidegree")

    @property
    def exponents(self):
        return np.asarray(list(self.coeffs.keys()), dtype=int)

    def value(self, z):
        z = np.asarray(z, dtype=complex)
        vals = evaluate_monomials(self.exponents, z)
        c = np.asarray(list(self.coeffs.values()), dtype=complex)
        return vals @ c

    def is_monomial(self):
        return len(self.coeffs) == 1


def section_degrees(model, k, twist):
    if twist == "plain":
        return tuple(k * l for l in model.bundle_degrees)
    if twist == "halfform":
        return model.halfform_degrees(k)
    raise SectionError(f"unknown twist {twist!r}")


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def basis_exponents(model, k, twist):
    """Exponent matrix of the monomial basis, shape (dim, ncoords)."""
    degs = section_degrees(model, k, twist)
    per_factor = []
    for sl, d in zip(model.slices, degs):
        if d < 0:
            raise SectionError("negative twisted degree: k too small for this twist")
        per_factor.append(list(_compositions(d, sl.stop - sl.start)))
    rows = []
    for combo in itertools.product(*per_factor):
        rows.append(tuple(itertools.chain.from_iterable(combo)))
    return np.asarray(rows, dtype=int)


def basis_sections(model, k, twist="plain"):
    if k < 1:
        raise SectionError("k must be >= 1")
    return [
        SectionPoly(model=model, k=k, twist=twist, coeffs={tuple(row): 1.0 + 0.0j})
        for row in basis_exponents(model, k, twist)
    ]


def invariant_exponents(action, k, twist="plain"):
    """Monomial exponents of the G-invariant subspace.

    A monomial z^alpha is invariant iff W alpha + k c (+ sigma/2 for the
    half-form twist, sigma the per-generator sum of all weights) vanishes.
    """
    if not action.lift_integral(k):
        raise SectionError("lift integrality: k * shift is not an integer vector")
    target = [-(k * c) for c in action.shift]
    if twist == "halfform":
        sigma = [sum(row) for row in action.weights]
        target = [t - Fraction(s, 2) for t, s in zip(target, sigma)]
    if any(t.denominator != 1 for t in target):
        return np.zeros((0, action.model.ncoords), dtype=int)
    tgt = np.asarray([int(t) for t in target])
    exps = basis_exponents(action.model, k, twist)
    W = np.asarray(action.weights, dtype=int)
    keep = np.all(exps @ W.T == tgt, axis=1)
    return exps[keep]


def invariant_basis(action, k, twist="plain"):
    return [
        SectionPoly(model=action.model, k=k, twist=twist, coeffs={tuple(row): 1.0 + 0.0j})
        for row in invariant_exponents(action, k, twist)
    ]


# ----------------------------------------------------------------------
# evaluation


def evaluate_monomials(exponents, z):
    """Values prod_i z_i^{alpha_i} for a batch of points, shape (..., nbasis).

    Uses complex logs for speed; coordinates that vanish are handled by
    masking (a zero base with positive exponent kills the monomial).
    """
    z = np.asarray(z, dtype=complex)
    expo = np.asarray(exponents, dtype=float)
    zero = np.abs(z) < 1e-300
    safe = np.where(zero, 1.0, z)
    logs = np.log(safe)
    out = np.exp(logs @ expo.T)
    if np.any(zero):
        dead = (np.asarray(zero, dtype=float) @ (expo.T > 0)) > 0
        out = np.where(dead, 0.0, out)
    return out


def halfform_factor(model, z):
    """Pointwise (mu, mu) of the monomial half-form frame, shape (...,).

    The twisted pointwise norm of a degree-(k l_j - (n_j+1)/2) polynomial P
    on unit-normalized coordinates is |P(z)|^2 times this factor.  It is the
    numeric chart evaluation |z_c|^{n_j+1} (mu_c, mu_c) with
    (mu_c, mu_c) = det g(w)^{-1/2} read off from mu_c^2 wedge conj(mu_c^2)
    against the Liouville form.
    """
    zin = np.asarray(z, dtype=complex)
    z = np.atleast_2d(zin)
    out = np.empty(z.shape[0])
    charts_per_row = np.empty((z.shape[0], len(model.factors)), dtype=int)
    for jj, sl in enumerate(model.slices):
        charts_per_row[:, jj] = sl.start + np.argmax(np.abs(z[:, sl]), axis=1)
    for charts in np.unique(charts_per_row, axis=0):
        rows = np.all(charts_per_row == charts, axis=1)
        w = models.to_chart(model, z[rows], tuple(charts))
        g = models.chart_metric(model, w)
        det = np.real(np.linalg.det(g))
        fac = det ** (-0.5)
        for c, nj in zip(charts, model.factors):
            fac = fac * np.abs(z[rows, c]) ** (nj + 1)
        out[rows] = fac
    return out[0] if zin.ndim == 1 else out


def section_matrix(model, exps, z, twist="plain"):
    """E[n, a] = s_a(z_n) scaled so that E E^dagger gives pointwise pairs.

    Rows are points (unit-normalized per factor), columns the monomial
    exponent rows; the half-form twist folds sqrt of the frame factor in.
    """
    E = evaluate_monomials(exps, np.atleast_2d(z))
    if twist == "halfform":
        E = E * np.sqrt(halfform_factor(model, np.atleast_2d(z)))[:, None]
    return E


def pointwise_norm(section, point):
    """|s|^2 at a point (plain) or |r|^2 including the half-form factor."""
    z = as_coords(section.model, point)
    val = abs(section.value(z)) ** 2
    if section.twist == "halfform":
        val = val * float(halfform_factor(section.model, z))
    return float(val)


def pointwise_pair(model, sa, sb, z, twist):
    v = sa.value(z) * np.conj(sb.value(z))
    if twist == "halfform":
        v = v * halfform_factor(model, z)
    return complex(v)


# ----------------------------------------------------------------------
# the quantization operator (numeric invariance check)


def quantization_residual(action, section, xi, point, fd_step=1e-6):
    """|Q_xi s| / scale at a point, Q_xi = nabla_{X^xi} - i k phi_xi.

    The covariant derivative is taken in the chart of the point; for the
    half-form twist the numeric Lie-derivative weight of the frame is added.
    """
    model = action.model
    z = as_coords(model, point)
    charts = models.chart_indices(model, z)
    w0 = models.to_chart(model, z, charts)
    k = section.k
    degs = section_degrees(model, k, section.twist)

    def local_rep(w):
        zz = models.from_chart(model, w, charts)
        # frame z_c^deg evaluated on the chart representative (z_c = 1)
        rep = zz.copy()
        for sl, c in zip(model.slices, charts):
            rep[sl] = rep[sl] / zz[c]
        return section.value(rep)

    X, _ = ta.fundamental_fields(action, xi, z)
    xdot = models.ambient_to_chart(model, z, X, charts)
    f0 = local_rep(w0)
    df = (local_rep(w0 + fd_step * xdot) - local_rep(w0 - fd_step * xdot)) / (2 * fd_step)
    # Chern connection of the L^k chart frame; the half-form part enters
    # through the Lie derivative of the canonical frame, not a connection
    conn = 0.0
    pos = 0
    for nj, l in zip(model.factors, model.bundle_degrees):
        wj = w0[pos : pos + nj]
        conn += -(k * l) * np.sum(np.conj(wj) * xdot[pos : pos + nj]) / (1.0 + np.sum(np.abs(wj) ** 2))
        pos += nj
    if section.twist == "halfform":
        conn += 0.5 * _holomorphic_divergence(action, xi, w0, charts, fd_step)
    phi_xi = float(ta.moment_map(action, z) @ np.asarray(xi, dtype=float))
    q = df + f0 * conn - 1j * k * phi_xi * f0
    scale = max(abs(df), abs(k * phi_xi * f0), 1e-30)
    return float(abs(q) / scale)


def _holomorphic_divergence(action, xi, w0, charts, fd_step):
    """Trace of the holomorphic Jacobian of the action field in chart coords:
    the Lie derivative weight L_{X^xi} Omega / Omega of the canonical frame."""
    model = action.model

    def chart_velocity(w):
        zz = models.from_chart(model, w, charts)
        X, _ = ta.fundamental_fields(action, xi, zz)
        return models.ambient_to_chart(model, zz, X, charts)

    n = model.n_total
    tr = 0.0 + 0.0j
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        tr += (chart_velocity(w0 + fd_step * e)[i] - chart_velocity(w0 - fd_step * e)[i]) / (2 * fd_step)
    return tr


# ----------------------------------------------------------------------
# Gram matrices upstairs


@dataclass
class GramMatrix:
    basis_ids: list
    matrix: np.ndarray
    errors: np.ndarray
    norm_def: int
    k: int
    twist: str
    flags: list = field(default_factory=list)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def to_json_dict(self):
        return {
            "k": self.k,
            "twist": self.twist,
            "norm_def": self.norm_def,
            "basis": [list(map(int, b)) for b in self.basis_ids],
            "matrix_re": np.real(self.matrix).tolist(),
            "matrix_im": np.imag(self.matrix).tolist(),
            "stderr": self.errors.tolist(),
            "flags": self.flags,
        }


def hermitize(mat):
    return 0.5 * (mat + np.conj(mat.T))


def monomial_integral_on_pattern(model, pattern, alpha):
    """int over the closed pattern subvariety of prod p_i^{alpha_i} d eps.

    Dirichlet moments of the per-factor sphere measure; the restricted form
    on a coordinate CP^{|R_j|-1} is l_j times its Fubini-Study form.  Returns
    0 when alpha charges a coordinate off the pattern.
    """
    out = 1.0
    for sup, sl, l in zip(pattern, model.slices, model.bundle_degrees):
        aa = [int(alpha[i]) for i in range(sl.start, sl.stop)]
        if any(a > 0 and i + sl.start not in sup for i, a in enumerate(aa)):
            return 0.0
        nR = len(sup) - 1
        asup = [int(alpha[i]) for i in sup]
        num = 1.0
        for a in asup:
            num *= math.factorial(a)
        out *= (l * TWO_PI) ** nR * num / math.factorial(sum(asup) + nR)
    return out


def _full_pattern(model):
    return tuple(tuple(range(sl.start, sl.stop)) for sl in model.slices)


def _ambient_gram_exact(action, exps, twist):
    model = action.model
    dim = exps.shape[0]
    mat = np.zeros((dim, dim), dtype=complex)
    pat = _full_pattern(model)
    q0 = 1.0
    if twist == "halfform":
        for nj, l in zip(model.factors, model.bundle_degrees):
            q0 *= float(l) ** (-nj / 2.0)
    for a in range(dim):
        for b in range(a, dim):
            if not np.array_equal(exps[a], exps[b]):
                continue  # torus-weight orthogonality of distinct monomials
            mat[a, b] = q0 * monomial_integral_on_pattern(model, pat, exps[a])
    return hermitize(mat), np.zeros((dim, dim))


def _pattern_gram_mc(action, exps, twist, pattern, quad, tag):
    """Monte Carlo Gram of pointwise pairs over a closed pattern subvariety.

    Uniform sphere samples on the support coordinates are Fubini-Study
    uniform on the subvariety; Gram blocks are accumulated chunk-wise and
    the block spread gives the per-entry standard error.
    """
    model = action.model
    rng = rng_for(quad.seed, "gram", tag)
    nblk = max(4, quad.blocks)
    per = max(64, quad.samples // nblk)
    vol = 1.0
    for sup, l in zip(pattern, model.bundle_degrees):
        nR = len(sup) - 1
        vol *= (l * TWO_PI) ** nR / math.factorial(nR)
    grams = np.empty((nblk, exps.shape[0], exps.shape[0]), dtype=complex)
    for b in range(nblk):
        z = np.zeros((per, model.ncoords), dtype=complex)
        for sup in pattern:
            dim = len(sup)
            blk = rng.standard_normal((per, dim)) + 1j * rng.standard_normal((per, dim))
            z[:, list(sup)] = blk / np.linalg.norm(blk, axis=1, keepdims=True)
        E = section_matrix(model, exps, z, twist)
        grams[b] = (E.conj().T @ E).T / per
    mean = grams.mean(axis=0)
    err = grams.std(axis=0, ddof=1) / np.sqrt(nblk)
    return vol * mean, vol * np.abs(err)


def gram_upstairs(action, k, twist="plain", norm_def=1, quad=None, strat=None):
    """Gram matrix of the invariant basis under Definition (1) or (2).

    Definition (1) integrates over the open dense preimage piece, which has
    full measure, so it is the ambient integral with prefactor
    (k/2pi)^{n/2}.  Definition (2) adds every lower-dimensional preimage
    piece with its own dimension prefactor: the complexified-stratum pieces
    of the non-open strata and all extra pieces, each integrated over the
    closure of its support pattern; zero-dimensional pieces contribute
    point values.
    """
    quad = as_quad(quad)
    model = action.model
    exps = invariant_exponents(action, k, twist)
    dim = exps.shape[0]
    ids = [tuple(map(int, row)) for row in exps]
    if dim == 0:
        return GramMatrix(basis_ids=ids, matrix=np.zeros((0, 0), dtype=complex),
                          errors=np.zeros((0, 0)), norm_def=norm_def, k=k, twist=twist)
    n = model.n_total
    pref = (k / TWO_PI) ** (n / 2.0)
    if quad.method == "mc":
        mat, err = _pattern_gram_mc(action, exps, twist, _full_pattern(model), quad, (k, twist, "ambient"))
    else:
        mat, err = _ambient_gram_exact(action, exps, twist)
    mat = pref * mat
    err = pref * err
    flags = []
    if norm_def == 2:
        strat = strat or strata.analyze(action)
        open_key = strat.open_stratum().key
        terms = []
        for lab in strat.strata:
            if lab.key != open_key:
                terms.append((lab.dim_upstairs, lab.top_pattern, ("gz", lab.key)))
            for piece in strat.pieces.get(lab.key, ()):
                terms.append((piece.dim_piece, piece.pattern, ("piece", lab.key, piece.pattern)))
        for dim_piece, pattern, tag in terms:
            prefp = (k / TWO_PI) ** (dim_piece / 2.0)
            if dim_piece == 0:
                z0 = models.normalize(model, _pattern_point(model, pattern))
                E = section_matrix(model, exps, z0, twist)[0]
                mat = mat + prefp * (E[:, None] * np.conj(E[None, :]))
                continue
            if quad.method == "mc":
                sub, suberr = _pattern_gram_mc(action, exps, twist, pattern, quad, (k, twist) + tag)
            else:
                sub, suberr = _gram_exact_on_pattern(action, exps, twist, pattern)
            mat = mat + prefp * sub
            err = np.sqrt(err**2 + (prefp * suberr) ** 2)
    mat = hermitize(mat)
    rel = np.abs(err) / np.maximum(np.abs(mat), 1e-300)
    if np.any((rel > 0.2) & (np.abs(mat) > 1e-14)):
        flags.append("entry_error_over_20_percent")
    eig = np.linalg.eigvalsh(mat)
    if eig.min() < -1e-9 * max(1.0, eig.max()):
        flags.append("not_psd_within_tolerance")
    return GramMatrix(basis_ids=ids, matrix=mat, errors=np.abs(err), norm_def=norm_def,
                      k=k, twist=twist, flags=flags)


def _gram_exact_on_pattern(action, exps, twist, pattern):
    model = action.model
    dim = exps.shape[0]
    q0 = 1.0
    if twist == "halfform":
        for nj, l in zip(model.factors, model.bundle_degrees):
            q0 *= float(l) ** (-nj / 2.0)
    mat = np.zeros((dim, dim), dtype=complex)
    for a in range(dim):
        for b in range(a, dim):
            if not np.array_equal(exps[a], exps[b]):
                continue
            mat[a, b] = q0 * monomial_integral_on_pattern(model, pattern, exps[a])
    return hermitize(mat), np.zeros((dim, dim))


def _pattern_point(model, pattern):
    z = np.zeros(model.ncoords, dtype=complex)
    for sup in pattern:
        z[sup[0]] = 1.0
    return z
