"""Descent to the quotient: restriction maps, the corrected pointwise norm,
reduced Gram matrices, and the push-down contraction oracle.

Descent is basis-preserving: an invariant monomial corresponds to its class
downstairs, so the matrix of the descent map in matched bases is the
identity and all unitarity questions live in the Gram matrices.  The
corrected pointwise norm on a stratum with stabilizer H is

    |B' r|^2([x]) = |r|^2(x)                    if H = G,
    |B' r|^2([x]) = 2^{-m/2} vol(G.x) |r|^2(x)  otherwise,

with m = dim(G/H) and vol the geometric (finite-part-corrected) orbit
volume.  The independent oracle for the factor contracts the restricted
Liouville form with the complexified orbit directions, which reproduces
2^{-m} vol_Gram^2 against the reduced volume form.
"""

from dataclasses import dataclass, field

import numpy as np

from . import actions as ta
from . import models
from . import strata
from . import sections
from .integrate import TWO_PI, as_quad, gauss_segment, rng_for
from .models import as_coords, masses


class ReductionError(ValueError):
    pass


@dataclass
class ReducedSection:
    """Descent of an invariant section: upstairs data plus stratum samples."""

    upstairs: sections.SectionPoly
    twist: str
    stratum_values: dict = field(default_factory=dict)

    def norm_squared_at(self, action, point, iso=None):
        val = sections.pointwise_norm(self.upstairs, point)
        if self.twist == "plain":
            return val
        return descent_norm_factor(action, point, iso) * val


def descend(action, section):
    """Restriction of an invariant section to the zero level (A'_k or B'_k).

    The section must be G-invariant; monomial inputs are checked exactly
    against the weight-lattice equation.
    """
    exps = section.exponents
    inv = sections.invariant_exponents(action, section.k, section.twist)
    inv_set = {tuple(map(int, r)) for r in inv}
    for row in exps:
        if tuple(map(int, row)) not in inv_set:
            raise ReductionError("section is not G-invariant")
    rsec = ReducedSection(upstairs=section, twist=section.twist)
    strat = strata.analyze(action)
    for lab in strat.strata:
        z = lab.representative
        rsec.stratum_values[lab.key] = rsec.norm_squared_at(action, z, lab.isotropy)
    return rsec


def descent_norm_factor(action, point, iso=None):
    """Pointwise descent factor for half-form sections at a zero-level point."""
    z = as_coords(action.model, point)
    if iso is None:
        iso = ta.isotropy(action, z)
    if iso.is_full:
        return 1.0
    m = action.rank - iso.dim
    vol, _ = ta.orbit_volume(action, z, iso)
    return 2.0 ** (-m / 2.0) * vol / iso.finite_part


def pointwise_descended_norm(action, reduced_section, point, iso=None):
    """pi^* |B' r|^2([x]) (half-form) or |A' s|^2([x]) (plain) at x in phi^{-1}(0)."""
    return reduced_section.norm_squared_at(action, point, iso)


# ----------------------------------------------------------------------
# the contraction oracle (independent route to the descent factor)


def _pfaffian(a):
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0.0j
    if n % 2:
        return 0.0 + 0.0j
    if n == 2:
        return a[0, 1]
    total = 0.0 + 0.0j
    rest = list(range(2, n))
    for j in range(1, n):
        idx = [i for i in range(1, n) if i != j]
        sub = a[np.ix_(idx, idx)]
        sign = (-1.0) ** (j - 1)
        total += sign * a[0, j] * _pfaffian(sub)
    return total


def _omega_complex(g, a, b):
    """omega on complexified tangent vectors given as (hol, antihol) pairs."""
    ah, aa = a
    bh, ba = b
    return 1j * (ah @ g @ ba - bh @ g @ aa)


def contraction_factor(action, point, fd_step=1e-6):
    """sqrt of the Liouville-contraction ratio at a zero-level point.

    Evaluates eps restricted to the complexified stratum on the orbit
    directions Z^j = (X^j - i J X^j)/2, their conjugates, and a basis of the
    remaining stratum directions, divided by the reduced volume form on the
    same basis.  Equals 2^{-m/2} vol_Gram(G.x) by the push-down identity.
    """
    model = action.model
    z = as_coords(model, point)
    iso = ta.isotropy(action, z)
    if iso.is_full:
        return 1.0
    mb = ta.m_basis(action, iso)
    m = mb.shape[0]
    charts = models.chart_indices(model, z)
    w0 = models.to_chart(model, z, charts)
    g = models.chart_metric(model, w0)
    # orbit directions as chart velocities
    xs = []
    for a in range(m):
        X, _ = ta.fundamental_fields(action, mb[a], z)
        xs.append(models.ambient_to_chart(model, z, X, charts))
    # tangent of Z_(H) at z, minus the orbit directions
    s_basis, _, _ = ta.level_tangent_basis(action, z)
    comp = []
    for v in s_basis:
        u = v.astype(complex)
        for q in xs + [1j * np.asarray(x) for x in xs]:
            q = np.asarray(q)
            nq = models.metric_pairing(g, q, q)
            if nq > 1e-20:
                u = u - (models.metric_pairing(g, u, q) / nq) * q
        for q in comp:
            u = u - models.metric_pairing(g, u, q) * q
        nu = models.metric_pairing(g, u, u)
        if nu > 1e-12:
            comp.append(u / np.sqrt(nu))
    # expected complement dimension: 2 dim_S = dim Z - m (orbit dirs inside Z)
    zvecs = [(x, np.zeros_like(x)) for x in xs]
    zbar = [(np.zeros_like(x), np.conj(x)) for x in xs]
    vvecs = [(u, np.conj(u)) for u in comp]
    big = zvecs + zbar + vvecs
    n_big = len(big)
    A = np.zeros((n_big, n_big), dtype=complex)
    for i in range(n_big):
        for j in range(i + 1, n_big):
            A[i, j] = _omega_complex(g, big[i], big[j])
            A[j, i] = -A[i, j]
    lhs = _pfaffian(A)
    n_v = len(vvecs)
    Av = np.zeros((n_v, n_v), dtype=complex)
    for i in range(n_v):
        for j in range(i + 1, n_v):
            Av[i, j] = _omega_complex(g, vvecs[i], vvecs[j])
            Av[j, i] = -Av[i, j]
    rhs = _pfaffian(Av)
    if abs(rhs) < 1e-300:
        raise ReductionError("degenerate reduced volume form in contraction oracle")
    return float(np.sqrt(abs(lhs) / abs(rhs)))


# ----------------------------------------------------------------------
# reduced Gram matrices


@dataclass
class ReducedGram:
    basis_ids: list
    matrix: np.ndarray
    errors: np.ndarray
    norm_def: int
    k: int
    twist: str
    per_stratum: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def to_json_dict(self):
        out = {
            "k": self.k,
            "twist": self.twist,
            "norm_def": self.norm_def,
            "basis": [list(map(int, b)) for b in self.basis_ids],
            "matrix_re": np.real(self.matrix).tolist(),
            "matrix_im": np.imag(self.matrix).tolist(),
            "stderr": self.errors.tolist(),
            "flags": self.flags,
            "per_stratum": {str(i): np.real(mat).tolist() for i, mat in enumerate(self.per_stratum.values())},
        }
        return out


def stratum_gram(action, lab, exps, twist, quad, tag="down"):
    """Integral over the quotient stratum of the descended pointwise pairs.

    Returns (matrix, errors) of int_S (desc_a, desc_b) eps_hat.  The grid
    route uses Gauss nodes on the level slice with the exact phase average
    (distinct monomials are torus-orthogonal); the mc route samples the
    slice and the phases. Zero-dimensional strata contribute point values.
    """
    quad = as_quad(quad)
    model = action.model
    dim = exps.shape[0]
    gamma = lab.isotropy.finite_part
    sl = strata.make_level_slice(action, lab.top_pattern, np.zeros(action.rank))
    if sl is None:
        raise ReductionError("stratum slice infeasible")

    def node_factor(z, p):
        w = 1.0
        if not lab.isotropy.is_full:
            vol, _ = ta.orbit_volume_from_masses(action, p, lab.isotropy)
            w *= gamma / vol
            if twist == "halfform":
                m = action.rank - lab.isotropy.dim
                w *= 2.0 ** (-m / 2.0) * vol / gamma
        return w

    if quad.method == "mc":
        rng = rng_for(quad.seed, "reduced", tag)
        count = max(256, quad.samples // 10)
        pts, wts = strata.sample_stratum(action, lab, count, rng.integers(2**32))
        fac = np.empty(count)
        for i in range(count):
            p = masses(model, pts[i])
            fac[i] = 1.0
            if not lab.isotropy.is_full and twist == "halfform":
                vol, _ = ta.orbit_volume_from_masses(action, p, lab.isotropy)
                m = action.rank - lab.isotropy.dim
                fac[i] = 2.0 ** (-m / 2.0) * vol / gamma
        E = sections.section_matrix(model, exps, pts, twist)
        scaled = E * (wts * fac)[:, None]
        mat = (scaled.conj().T @ E).T * 1.0
        nblk = max(4, quad.blocks)
        cut = (count // nblk) * nblk
        per = cut // nblk
        blocks = np.empty((nblk, dim, dim), dtype=complex)
        for b in range(nblk):
            Sb = scaled[b * per : (b + 1) * per]
            Eb = E[b * per : (b + 1) * per]
            blocks[b] = (Sb.conj().T @ Eb).T * (count / per)
        err = blocks.std(axis=0, ddof=1) / np.sqrt(nblk)
        return mat, np.abs(err)

    # grid route
    mat = np.zeros((dim, dim), dtype=complex)
    if sl.q == 0:
        J, z = strata.slice_embedding_jacobian(action, sl)
        p = masses(model, z)
        base = J * TWO_PI**sl.n_theta * node_factor(z, p)
        E = sections.section_matrix(model, exps, z, twist)[0]
        mat = base * (E[:, None] * np.conj(E[None, :]))
        return mat, np.zeros((dim, dim))
    if sl.q != 1:
        raise ReductionError("grid route supports slice dimension <= 1; use mc")
    t_lo, t_hi = sl.segment
    nodes, wts = gauss_segment(t_lo, t_hi, quad.grid_order)
    diag = np.zeros(dim)
    for t, w in zip(nodes, wts):
        s = np.array([t])
        J, z = strata.slice_embedding_jacobian(action, sl, s)
        p = masses(model, z)
        base = w * J * TWO_PI**sl.n_theta * node_factor(z, p)
        vals = np.prod(np.power(p[None, :], exps), axis=1)
        diag += base * vals
    if twist == "halfform":
        q0 = 1.0
        for nj, l in zip(model.factors, model.bundle_degrees):
            q0 *= float(l) ** (-nj / 2.0)
        diag *= q0
    np.fill_diagonal(mat, diag)
    # refinement error estimate: repeat at half order
    nodes2, wts2 = gauss_segment(t_lo, t_hi, max(8, quad.grid_order // 2))
    diag2 = np.zeros(dim)
    for t, w in zip(nodes2, wts2):
        s = np.array([t])
        J, z = strata.slice_embedding_jacobian(action, sl, s)
        p = masses(model, z)
        base = w * J * TWO_PI**sl.n_theta * node_factor(z, p)
        diag2 += base * np.prod(np.power(p[None, :], exps), axis=1)
    if twist == "halfform":
        diag2 *= q0
    err = np.zeros((dim, dim))
    np.fill_diagonal(err, np.abs(diag - diag2))
    return mat, err


def reduced_gram(action, k, twist="plain", norm_def=1, quad=None, strat=None):
    """Gram of the descended basis under Definition (1) or (2) downstairs."""
    quad = as_quad(quad)
    exps = sections.invariant_exponents(action, k, twist)
    ids = [tuple(map(int, r)) for r in exps]
    dim = exps.shape[0]
    if dim == 0:
        return ReducedGram(basis_ids=ids, matrix=np.zeros((0, 0), dtype=complex),
                           errors=np.zeros((0, 0)), norm_def=norm_def, k=k, twist=twist)
    strat = strat or strata.analyze(action)
    labs = [strat.open_stratum()] if norm_def == 1 else strat.strata
    mat = np.zeros((dim, dim), dtype=complex)
    err = np.zeros((dim, dim))
    per = {}
    flags = []
    for lab in labs:
        sub, suberr = stratum_gram(action, lab, exps, twist, quad, tag=("down", k, twist, lab.key))
        pref = (k / TWO_PI) ** (lab.dim_S / 2.0)
        per[lab.key] = pref * sub
        mat = mat + pref * sub
        err = np.sqrt(err**2 + (pref * suberr) ** 2)
    mat = sections.hermitize(mat)
    rel = err / np.maximum(np.abs(mat), 1e-300)
    if np.any((rel > 0.2) & (np.abs(mat) > 1e-14)):
        flags.append("entry_error_over_20_percent")
    eig = np.linalg.eigvalsh(mat)
    if dim and eig.min() < -1e-9 * max(1.0, eig.max()):
        flags.append("not_psd_within_tolerance")
    return ReducedGram(basis_ids=ids, matrix=mat, errors=err, norm_def=norm_def,
                       k=k, twist=twist, per_stratum=per, flags=flags)


# ----------------------------------------------------------------------
# the descent map as a matrix, with the boundedness probe


def map_matrix(action, k, twist="plain", probe=None):
    """Matrix of the descent map in matched monomial bases (the identity).

    `probe`, when given, is a dict {'samples': .., 'seed': .., 'k_grid': [..]}
    driving the boundedness sanity check of the modified-isomorphism proof:
    the smallest k in the grid is reported for which d/dt |r|^2(e^{i t xi} y)
    <= 0 on all sampled rays with t >= 1.
    """
    exps = sections.invariant_exponents(action, k, twist)
    out = {"matrix": np.eye(exps.shape[0]), "k0": None, "dims": (exps.shape[0], exps.shape[0])}
    if probe:
        out["k0"] = boundedness_probe(action, **probe)
    return out


def boundedness_probe(action, samples=24, seed=0, k_grid=(1, 2, 4, 8, 16, 32, 64), t_grid=(1.0, 1.5, 2.5, 4.0)):
    """Smallest k in the grid with 2 k phi_xi + div/2 >= 0 on sampled rays, t >= 1."""
    rng = rng_for(seed, "boundedness")
    model = action.model
    pts = models.random_points(model, samples, rng)
    d = action.rank
    dirs = rng.standard_normal((8, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    worst = -np.inf  # max over rays of -div/(4 phi) where phi > 0; inf if phi <= 0
    feasible = True
    for z in pts:
        if strata.is_semistable(action, z, tol=1e-14) == "unsemistable":
            continue
        for xi in dirs:
            for t in t_grid:
                y = ta.imaginary_flow(action, xi, t, z)
                phi = float(ta.moment_map(action, y) @ xi)
                div = ta.pointwise_divergence(action, xi, y)
                if phi > 1e-12:
                    worst = max(worst, -div / (4.0 * phi))
                elif div < 0:
                    feasible = False
    if not feasible:
        return None
    for k in k_grid:
        if k >= worst:
            return k
    return None
