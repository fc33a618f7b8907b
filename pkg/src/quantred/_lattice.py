"""Exact integer/rational linear algebra for small weight matrices.

Everything here runs on Python ints and Fractions so that isotropy
algebras, stabilizer component counts, and invariant-monomial equations
are decided exactly, never through floating-point rank guesses.
"""

from fractions import Fraction


def rational_nullspace(rows):
    """Basis of the right kernel of a matrix with rational entries.

    `rows` is a sequence of length-d sequences (ints or Fractions).
    Returns a list of d-tuples of Fractions spanning {x : rows @ x = 0}.
    """
    if not rows:
        return []
    d = len(rows[0])
    mat = [[Fraction(v) for v in row] for row in rows]
    pivots = []
    r = 0
    for c in range(d):
        piv = next((i for i in range(r, len(mat)) if mat[i][c] != 0), None)
        if piv is None:
            continue
        mat[r], mat[piv] = mat[piv], mat[r]
        inv = 1 / mat[r][c]
        mat[r] = [v * inv for v in mat[r]]
        for i in range(len(mat)):
            if i != r and mat[i][c] != 0:
                f = mat[i][c]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        pivots.append(c)
        r += 1
        if r == len(mat):
            break
    free = [c for c in range(d) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * d
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -mat[i][fc]
        basis.append(tuple(vec))
    return basis


def smith_diagonal(rows):
    """Nonzero elementary divisors of an integer matrix.

    Plain Smith reduction by gcd row/column operations; fine for the
    tiny relative-weight matrices that occur here.
    """
    mat = [[int(v) for v in row] for row in rows]
    if not mat or not mat[0]:
        return []
    m, n = len(mat), len(mat[0])
    divisors = []
    top = 0
    while top < m and top < n:
        # move a nonzero entry of minimal magnitude to (top, top)
        best = None
        for i in range(top, m):
            for j in range(top, n):
                if mat[i][j] != 0 and (best is None or abs(mat[i][j]) < abs(mat[best[0]][best[1]])):
                    best = (i, j)
        if best is None:
            break
        bi, bj = best
        mat[top], mat[bi] = mat[bi], mat[top]
        for row in mat:
            row[top], row[bj] = row[bj], row[top]
        # clear the rest of row/column `top`; repeat until clean
        dirty = True
        while dirty:
            dirty = False
            for i in range(top + 1, m):
                if mat[i][top] != 0:
                    q = mat[i][top] // mat[top][top]
                    mat[i] = [a - q * b for a, b in zip(mat[i], mat[top])]
                    if mat[i][top] != 0:
                        mat[top], mat[i] = mat[i], mat[top]
                        dirty = True
            for j in range(top + 1, n):
                if mat[top][j] != 0:
                    q = mat[top][j] // mat[top][top]
                    for row in mat:
                        row[j] -= q * row[top]
                    if mat[top][j] != 0:
                        for row in mat:
                            row[top], row[j] = row[j], row[top]
                        dirty = True
        divisors.append(abs(mat[top][top]))
        top += 1
    return [dv for dv in divisors if dv != 0]


def stabilizer_component_order(rel_weights):
    """Order of the finite component group of {t in T^d : D t = 0 mod 1}.

    `rel_weights` are the integer relative weight rows D.  The kernel of
    the induced torus map splits as a subtorus times a finite group whose
    order is the product of the nonzero elementary divisors of D.
    """
    divs = smith_diagonal(rel_weights)
    order = 1
    for dv in divs:
        order *= dv
    return order
