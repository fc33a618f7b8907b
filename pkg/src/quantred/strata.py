"""Gradient flow of -|phi|^2, semistability, and orbit-type stratification.

For torus actions on projective-space products everything combinatorial is
driven by coordinate support patterns: which coordinates of each factor are
nonzero.  A pattern R has a constant isotropy descriptor, and the closure of
its moment image is the convex hull of the per-factor weight vertices.  The
zero level meets the open pattern iff 0 lies in the relative interior of
that hull; patterns whose hull only touches 0 on the boundary flow out of
themselves and form the extra pieces of the preimage decomposition.

The numeric gradient flow is exact on rays: the trajectory through x stays
in the imaginary-orbit {e^{i xi} x}, so the ODE is integrated on xi in R^d
and points are recovered by the closed-form imaginary flow.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import actions as ta
from . import models
from .models import TWO_PI, as_coords, masses

ZERO_TOL = 1e-9


class StrataError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# support patterns and moment polytopes


def all_support_patterns(model):
    per_factor = []
    for sl in model.slices:
        idx = list(range(sl.start, sl.stop))
        subsets = []
        for r in range(1, len(idx) + 1):
            subsets.extend(itertools.combinations(idx, r))
        per_factor.append(subsets)
    return [tuple(combo) for combo in itertools.product(*per_factor)]


def pattern_vertices(action, pattern):
    """Moment-map values of the coordinate vertices of a pattern, shape (nv, d).

    Vertices are the one-hot mass assignments per factor, so the closure of
    the pattern's moment image is their convex hull.
    """
    Wl = action.scaled_weights()
    shift = action.shift_float
    choices = list(itertools.product(*pattern))
    verts = np.empty((len(choices), action.rank))
    for r, choice in enumerate(choices):
        verts[r] = -TWO_PI * (Wl[:, list(choice)].sum(axis=1) + shift)
    return verts


def locate_zero(verts, tol=1e-9):
    """Position of the origin relative to conv(verts): 'inside' (relative
    interior), 'boundary', or 'outside'."""
    nv, d = verts.shape
    scale = max(1.0, float(np.max(np.abs(verts))))
    # max eps s.t. sum lam = 1, V^T lam = 0, lam_i >= eps
    c = np.zeros(nv + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, nv + 1))
    a_eq[:d, :nv] = verts.T / scale
    a_eq[d, :nv] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    a_ub = np.zeros((nv, nv + 1))
    a_ub[:, :nv] = -np.eye(nv)
    a_ub[:, -1] = 1.0
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(nv),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(0, None)] * nv + [(0, 1.0)],
        method="highs",
    )
    if not res.success:
        return "outside"
    eps = -res.fun
    return "inside" if eps > tol else "boundary"


@dataclass(frozen=True)
class PatternInfo:
    pattern: tuple
    iso: ta.IsotropyDescriptor
    location: str
    verts: tuple  # vertex tuples, for reporting

    @property
    def dim_complex(self):
        return sum(len(sup) - 1 for sup in self.pattern)


def pattern_contains(big, small):
    return all(set(s).issubset(set(b)) for b, s in zip(big, small))


# ----------------------------------------------------------------------
# level-set slices and their parametrization


@dataclass
class LevelSlice:
    """{x : support(x) = pattern, phi(x) = value}, with (p, theta) coordinates.

    p ranges over an affine slice of the mass polytope (p0 + span(basis),
    intersected with positivity) and theta over the free phases; the gauge
    fixes one real-positive coordinate per factor.
    """

    pattern: tuple
    value: np.ndarray
    p0: np.ndarray          # (ncoords,) interior masses
    basis: np.ndarray       # (q, ncoords) directions inside the slice
    segment: tuple          # for q == 1: (t_lo, t_hi); else None
    theta_idx: tuple        # coordinate indices with free phase
    gauge_idx: tuple        # per-factor phase-fixed coordinate

    @property
    def q(self):
        return self.basis.shape[0]

    @property
    def n_theta(self):
        return len(self.theta_idx)

    def point(self, s=None, theta=None):
        p = self.p0 if s is None else self.p0 + np.asarray(s) @ self.basis
        z = np.sqrt(np.clip(p, 0.0, None)).astype(complex)
        if theta is not None:
            z = z * np.exp(1j * np.asarray(theta))
        return z


def _interior_level_masses(action, pattern, value):
    """Strictly interior solution p of the level equations on a pattern, or None."""
    model = action.model
    sup = [i for fac in pattern for i in fac]
    nsup = len(sup)
    Wl = action.scaled_weights()[:, sup]
    target = -value / TWO_PI - action.shift_float
    rows = [Wl]
    rhs = list(target)
    for fac in pattern:
        row = np.zeros((1, nsup))
        for i in fac:
            row[0, sup.index(i)] = 1.0
        rows.append(row)
        rhs.append(1.0)
    A = np.vstack(rows)
    b = np.asarray(rhs)
    # max eps with p_i >= eps
    c = np.zeros(nsup + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-np.eye(nsup), np.ones((nsup, 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(nsup),
        A_eq=np.hstack([A, np.zeros((A.shape[0], 1))]),
        b_eq=b,
        bounds=[(0, None)] * nsup + [(0, 1.0)],
        method="highs",
    )
    if not res.success or -res.fun <= 1e-9:
        return None, None
    p = np.zeros(model.ncoords)
    p[sup] = res.x[:nsup]
    # null directions of the constraints, embedded in full coordinates
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    q = nsup - rank
    basis = np.zeros((q, model.ncoords))
    basis[:, sup] = vt[rank:]
    return p, basis


def make_level_slice(action, pattern, value, shrink=1e-6):
    p0, basis = _interior_level_masses(action, pattern, np.asarray(value, dtype=float))
    if p0 is None:
        return None
    model = action.model
    segment = None
    if basis.shape[0] == 1:
        b = basis[0]
        t_hi = np.inf
        t_lo = -np.inf
        for i, bi in enumerate(b):
            if abs(bi) > 1e-14:
                t = -p0[i] / bi
                if bi > 0:
                    t_lo = max(t_lo, t)
                else:
                    t_hi = min(t_hi, t)
        span = t_hi - t_lo
        segment = (t_lo + shrink * span, t_hi - shrink * span)
    elif basis.shape[0] > 1:
        segment = None  # sampled by rejection
    gauge = []
    theta = []
    for fac, sl in zip(pattern, model.slices):
        # gauge the phase of the most robustly positive coordinate
        best = max(fac, key=lambda i: p0[i])
        gauge.append(best)
        theta.extend(i for i in fac if i != best)
    return LevelSlice(
        pattern=pattern,
        value=np.asarray(value, dtype=float),
        p0=p0,
        basis=basis,
        segment=segment,
        theta_idx=tuple(theta),
        gauge_idx=tuple(gauge),
    )


def slice_embedding_jacobian(action, sl, s=None, fd_step=1e-6):
    """Riemannian Jacobian of (s, theta) -> M at a slice point (theta-independent)."""
    model = action.model
    z = models.normalize(model, sl.point(s))
    charts = models.chart_indices(model, z)
    w0 = models.to_chart(model, z, charts)
    g = models.chart_metric(model, w0)
    cols = []
    for a in range(sl.q):
        ds = np.zeros(sl.q)
        ds[a] = fd_step
        sp = (np.zeros(sl.q) if s is None else np.asarray(s)) + ds
        sm = (np.zeros(sl.q) if s is None else np.asarray(s)) - ds
        wp = models.to_chart(model, models.normalize(model, sl.point(sp)), charts)
        wm = models.to_chart(model, models.normalize(model, sl.point(sm)), charts)
        cols.append((wp - wm) / (2 * fd_step))
    for i in sl.theta_idx:
        v = np.zeros(model.ncoords, dtype=complex)
        v[i] = 1j * z[i]
        cols.append(models.ambient_to_chart(model, z, v, charts))
    if not cols:
        return 1.0, z
    cols = np.asarray(cols)
    G = 2.0 * np.real(np.einsum("pa,ab,qb->pq", cols, g, np.conj(cols)))
    det = float(np.linalg.det(G))
    if det <= 0:
        raise StrataError("degenerate slice parametrization")
    return float(np.sqrt(det)), z


# ----------------------------------------------------------------------
# strata and extra pieces


@dataclass
class StratumLabel:
    """An orbit-type stratum of the zero level set and its quotient stratum."""

    isotropy: ta.IsotropyDescriptor
    component_id: int
    dim_S: int
    dim_upstairs: int
    patterns: tuple          # all carrier patterns merged into this label
    top_pattern: tuple       # the one of maximal dimension (carries the measure)
    representative: np.ndarray

    @property
    def key(self):
        return (self.isotropy.key(), self.component_id)

    @property
    def m_dim(self):
        return self.dim_upstairs - self.dim_S

    def to_json_dict(self):
        return {
            "isotropy": self.isotropy.to_json_dict(),
            "component_id": self.component_id,
            "dim_S": self.dim_S,
            "dim_upstairs": self.dim_upstairs,
            "patterns": [[list(f) for f in pat] for pat in self.patterns],
            "representative": [[float(v.real), float(v.imag)] for v in self.representative],
        }


@dataclass
class ExtraPiece:
    """A G_C-invariant component of F_inf^{-1}(Z_(H)) missing the zero level."""

    parent_key: tuple
    isotropy_prime: ta.IsotropyDescriptor
    pattern: tuple
    face_ids: tuple
    slices: tuple            # ((sign, LevelSlice), ...)
    dim_piece: int
    flags: tuple = ()

    def to_json_dict(self):
        return {
            "isotropy_prime": self.isotropy_prime.to_json_dict(),
            "pattern": [list(f) for f in self.pattern],
            "face_ids": list(self.face_ids),
            "levels": [[float(v) for v in sl.value] for _, sl in self.slices],
            "signs": [sign for sign, _ in self.slices],
            "dim_piece": self.dim_piece,
            "flags": list(self.flags),
        }


@dataclass
class Stratification:
    action: object
    strata: list
    pieces: dict            # stratum key -> list of ExtraPiece
    unsemistable: list      # PatternInfo
    pattern_infos: list

    def stratum_by_key(self, key):
        for s in self.strata:
            if s.key == key:
                return s
        raise KeyError(key)

    def open_stratum(self):
        return max(self.strata, key=lambda s: s.dim_S)

    def to_json_dict(self):
        return {
            "strata": [s.to_json_dict() for s in self.strata],
            "extra_pieces": {
                str(i): [p.to_json_dict() for p in self.pieces.get(s.key, ())]
                for i, s in enumerate(self.strata)
            },
            "unsemistable_patterns": [[list(f) for f in info.pattern] for info in self.unsemistable],
        }


def _pattern_infos(action):
    infos = []
    for pattern in all_support_patterns(action.model):
        verts = pattern_vertices(action, pattern)
        infos.append(
            PatternInfo(
                pattern=pattern,
                iso=ta.isotropy_of_support(action, pattern),
                location=locate_zero(verts),
                verts=tuple(map(tuple, verts)),
            )
        )
    return infos


def _merge_carriers(action, carriers):
    """Group carrier patterns into connected strata of equal isotropy."""
    n = len(carriers)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    for i in range(n):
        for j in range(i + 1, n):
            if carriers[i].iso.key() != carriers[j].iso.key():
                continue
            a, b = carriers[i].pattern, carriers[j].pattern
            if pattern_contains(a, b) or pattern_contains(b, a):
                union(i, j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(carriers[i])
    return list(groups.values())


def analyze(action):
    """Full combinatorial stratification of the zero level set and its preimage."""
    infos = _pattern_infos(action)
    carriers = [info for info in infos if info.location == "inside"]
    boundary = [info for info in infos if info.location == "boundary"]
    unsemi = [info for info in infos if info.location == "outside"]
    if not carriers:
        raise StrataError("empty zero level set: the shift places 0 outside phi(M)")

    strata = []
    rng = np.random.default_rng(20240707)
    for cid, group in enumerate(_merge_carriers(action, carriers)):
        top = max(group, key=lambda info: info.dim_complex)
        iso = top.iso
        m = action.rank - iso.dim
        dim_S = top.dim_complex - m
        sl = make_level_slice(action, top.pattern, np.zeros(action.rank))
        if sl is None:
            raise StrataError("carrier pattern lost its zero level (numerical inconsistency)")
        theta = np.zeros(action.model.ncoords)
        theta[list(sl.theta_idx)] = rng.uniform(0, TWO_PI, size=len(sl.theta_idx))
        rep = models.normalize(action.model, sl.point(theta=theta))
        strata.append(
            StratumLabel(
                isotropy=iso,
                component_id=cid,
                dim_S=dim_S,
                dim_upstairs=dim_S + m,
                patterns=tuple(info.pattern for info in group),
                top_pattern=top.pattern,
                representative=rep,
            )
        )

    pieces = {s.key: [] for s in strata}
    for info in boundary:
        piece = _build_piece(action, info, strata)
        pieces[piece.parent_key].append(piece)
    return Stratification(
        action=action, strata=strata, pieces=pieces, unsemistable=unsemi, pattern_infos=infos
    )


def _farthest_vertex(verts):
    i = int(np.argmax(np.linalg.norm(np.asarray(verts), axis=1)))
    return np.asarray(verts[i], dtype=float)


def _build_piece(action, info, strata):
    """Slice data for one boundary pattern: faces through 0, one slice per face."""
    d = action.rank
    flags = []
    verts = np.asarray(info.verts, dtype=float)
    if d == 1:
        far = _farthest_vertex(verts)
        a = far / 2.0
        face_ids = (0,)
        slices = []
        sl = make_level_slice(action, info.pattern, a)
        if sl is None:
            raise StrataError("piece slice level infeasible (face search inconsistent)")
        slices.append((1, sl))
    else:
        # single representative slice through the image centroid; the exact
        # face decomposition is only needed for rank >= 2 multi-face pieces
        a = verts.mean(axis=0) / 2.0
        sl = make_level_slice(action, info.pattern, a)
        if sl is None:
            raise StrataError("piece slice level infeasible (face search inconsistent)")
        face_ids = (0,)
        slices = [(1, sl)]
        flags.append("faces_unresolved_rank_ge_2")
    # identify the parent stratum by flowing a slice point
    rng = np.random.default_rng(977)
    theta = np.zeros(action.model.ncoords)
    theta[list(slices[0][1].theta_idx)] = rng.uniform(0, TWO_PI, size=slices[0][1].n_theta)
    probe = models.normalize(action.model, slices[0][1].point(theta=theta))
    res = kirwan_flow(action, probe, tol=1e-18, max_steps=40000)
    if res.status != "converged":
        raise StrataError("extra piece failed to flow to the zero level (stratification mismatch)")
    limit_support = ta.support_of(action.model, res.limit, tol=1e-6)
    parent = None
    for s in strata:
        if any(tuple(limit_support) == pat for pat in s.patterns):
            parent = s
            break
    if parent is None:
        for s in strata:
            if any(pattern_contains(pat, limit_support) for pat in s.patterns):
                parent = s
                break
    if parent is None:
        raise StrataError("flow limit of extra piece not in any enumerated stratum")
    if info.iso.dim >= parent.isotropy.dim and not parent.isotropy.is_full and info.iso.dim > 0:
        flags.append("isotropy_dimension_anomaly")
    return ExtraPiece(
        parent_key=parent.key,
        isotropy_prime=info.iso,
        pattern=info.pattern,
        face_ids=face_ids,
        slices=tuple(slices),
        dim_piece=info.dim_complex,
        flags=tuple(flags),
    )


# ----------------------------------------------------------------------
# gradient flow of -|phi|^2


@dataclass
class FlowResult:
    limit: np.ndarray
    steps: int
    residual: float
    status: str              # converged | unsemistable | inconclusive
    monotone: bool = True

    @property
    def converged(self):
        return self.status == "converged"


def kirwan_flow(action, point, tol=1e-12, max_steps=20000):
    """Integrate x' = -2 J X^{phi(x)}(x) to its limit on the zero level.

    The trajectory is e^{i xi(t)} x0 with xi' = -2 phi(e^{i xi} x0), integrated
    by an adaptive Heun scheme; |phi|^2 is checked to decrease on every
    accepted step.  Status 'unsemistable' means the gradient stalled with
    |phi|^2 bounded away from zero; 'inconclusive' means the step budget ran
    out while still descending.
    """
    if tol <= 0:
        raise StrataError("tol must be positive")
    model = action.model
    z0 = as_coords(model, point)
    xi = np.zeros(action.rank)
    y = z0
    phi = moment = ta.moment_map(action, y)
    ns2 = float(phi @ phi)
    if ns2 < tol:
        return FlowResult(limit=y, steps=0, residual=ns2, status="converged")
    h = 0.05
    monotone = True
    for step in range(1, max_steps + 1):
        f0 = -2.0 * phi
        y1 = ta.imaginary_flow(action, xi + h * f0, 1.0, z0)
        phi1 = ta.moment_map(action, y1)
        f1 = -2.0 * phi1
        xi_new = xi + 0.5 * h * (f0 + f1)
        err = 0.5 * h * float(np.linalg.norm(f1 - f0))
        if err > 1e-3 * max(1.0, float(np.linalg.norm(xi))):
            h *= 0.5
            continue
        y_new = ta.imaginary_flow(action, xi_new, 1.0, z0)
        phi_new = ta.moment_map(action, y_new)
        ns2_new = float(phi_new @ phi_new)
        if ns2_new > ns2:
            h *= 0.5
            if h < 1e-12:
                monotone = False
                break
            continue
        xi, y, phi, ns2 = xi_new, y_new, phi_new, ns2_new
        if err < 1e-5 * max(1.0, float(np.linalg.norm(xi))):
            h *= 1.6
        if ns2 < tol:
            return FlowResult(limit=y, steps=step, residual=ns2, status="converged", monotone=monotone)
        # stall detection: |grad|phi|^2| = 2 sqrt(phi^T G phi) tiny but phi not
        G = ta.field_pairing(action, masses(model, y))
        grad2 = 4.0 * float(phi @ G @ phi)
        if grad2 < (1e-7 * ns2) ** 2 and ns2 > 100.0 * tol:
            return FlowResult(limit=y, steps=step, residual=ns2, status="unsemistable", monotone=monotone)
    return FlowResult(limit=y, steps=max_steps, residual=ns2, status="inconclusive", monotone=monotone)


def is_semistable(action, point, tol=1e-12):
    """Classify a point as stable / semistable_strict / unsemistable / inconclusive."""
    res = kirwan_flow(action, point, tol=tol)
    if res.status == "unsemistable":
        return "unsemistable"
    if res.status == "inconclusive":
        return "inconclusive"
    iso = ta.isotropy(action, res.limit, tol=1e-6)
    return "stable" if iso.dim == 0 else "semistable_strict"


# ----------------------------------------------------------------------
# public enumeration ops


def enumerate_strata(action, sampler=None):
    """Stratum labels of the zero level, with an optional flow cross-check.

    `sampler` is a quadrature dict ({'samples': N, 'seed': s}); when given,
    random points are flowed and their limits are required to land in an
    enumerated stratum.
    """
    strat = analyze(action)
    if sampler:
        rng = np.random.default_rng(sampler.get("seed", 0))
        count = int(sampler.get("samples", 32))
        pts = models.random_points(action.model, count, rng)
        for z in pts:
            res = kirwan_flow(action, z, tol=1e-16, max_steps=40000)
            if res.status != "converged":
                continue
            sup = ta.support_of(action.model, res.limit, tol=1e-6)
            hit = any(
                tuple(sup) == pat or pattern_contains(pat, sup)
                for s in strat.strata
                for pat in s.patterns
            )
            if not hit:
                raise StrataError("sampled flow limit missed the combinatorial strata")
    return strat.strata


def decompose_preimage(action, label, strat=None):
    """Main-piece descriptor and extra pieces of F_inf^{-1}(Z_(H)) for a label."""
    strat = strat or analyze(action)
    main = {
        "stratum": label.key,
        "pattern": label.top_pattern,
        "dim_upstairs": label.dim_upstairs,
    }
    return main, list(strat.pieces.get(label.key, ()))


def sample_stratum(action, target, count, seed):
    """Points on Z_(H) (or an S_i) with quotient weights.

    For a stratum label the weights realize integrals against the reduced
    volume: sum_i w_i f(x_i) estimates int_S f eps_hat (one representative
    per orbit, finite-part corrected).  For an ExtraPiece slice the weights
    realize the induced Riemannian measure of S_i itself.
    """
    if count <= 0:
        raise StrataError("count must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(target, StratumLabel):
        sl = make_level_slice(action, target.top_pattern, np.zeros(action.rank))
        quotient = True
        gamma = target.isotropy.finite_part
    else:
        sign, sl = target.slices[0] if isinstance(target, ExtraPiece) else (1, target)
        quotient = False
        gamma = 1
    pts = np.empty((count, action.model.ncoords), dtype=complex)
    wts = np.empty(count)
    for i in range(count):
        if sl.q == 0:
            s = None
            meas = 1.0
        elif sl.q == 1:
            t_lo, t_hi = sl.segment
            s = np.array([rng.uniform(t_lo, t_hi)])
            meas = t_hi - t_lo
        else:
            # rejection from the bounding box of the basis coefficients
            for _ in range(10000):
                s = rng.uniform(-1.0, 1.0, size=sl.q)
                if np.all(sl.p0 + s @ sl.basis >= 0):
                    break
            meas = 2.0**sl.q  # proposal volume; rejected draws contribute zero
        J, z = slice_embedding_jacobian(action, sl, s)
        theta = np.zeros(action.model.ncoords)
        theta[list(sl.theta_idx)] = rng.uniform(0, TWO_PI, size=sl.n_theta)
        z = models.normalize(action.model, z * np.exp(1j * theta))
        w = J * meas * TWO_PI**sl.n_theta / count
        if quotient:
            vol, is_full = ta.orbit_volume(action, z)
            if not is_full:
                w *= gamma / vol
        pts[i] = z
        wts[i] = w
    return pts, wts
