"""Small dense nonsymmetric eigensolver with left vectors and EP diagnostics.

The solver is a textbook complex Schur decomposition: Householder reduction
to Hessenberg form followed by explicitly shifted QR sweeps (Wilkinson
shift, Givens rotations, exceptional shifts every 10 stalled iterations).
Right and left eigenvectors are read off the triangular factor, so the two
sets come out paired by construction.

Near exceptional points the float64 eigenvalues of a p-fold Jordan block are
only good to ~eps**(1/p). Clusters whose eigenvectors are nearly parallel are
therefore re-solved in extended precision (mpmath) before being reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import mpmath
import numpy as np
from scipy.optimize import linear_sum_assignment

from . import model

EPS = np.finfo(float).eps
TINY = np.finfo(float).tiny

#: |t^H v| / (|t||v|) below this marks a cluster as defective
DEFECT_THRESHOLD = 1e-6
#: eigenvalues closer than this (times the matrix scale) form one cluster
CLUSTER_TOL = 1e-4
#: right vectors with |cos| above this are treated as coalesced
PARALLEL_COS = 0.99
#: below this conditioning the eigenvalue is recomputed with mpmath
REFINE_BELOW = 1e-3
REFINE_DPS = 50
MAX_ITER_PER_EIG = 100


class EigenConvergenceError(RuntimeError):
    """QR iteration ran out of budget. ``partial`` is the partially reduced matrix."""

    def __init__(self, message: str, partial: np.ndarray, index: int):
        super().__init__(message)
        self.partial = partial
        self.index = index


class DefectiveClusterError(ValueError):
    """Biorthonormal pairing is impossible because eigenvectors have coalesced."""

    def __init__(self, message: str, clusters: list[tuple[int, ...]], metric: float):
        super().__init__(message)
        self.clusters = clusters
        self.metric = metric


# ---------------------------------------------------------------------------
# Schur decomposition


def hessenberg(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (h, q) with a = q h q^H and h upper Hessenberg."""
    h = np.array(a, dtype=complex)
    n = h.shape[0]
    q = np.eye(n, dtype=complex)
    for k in range(n - 2):
        x = h[k + 1 :, k].copy()
        tail = np.linalg.norm(x[1:])
        if tail == 0.0:
            continue
        nx = np.hypot(abs(x[0]), tail)
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x
        v[0] += phase * nx
        v /= np.linalg.norm(v)
        h[k + 1 :, :] -= 2.0 * np.outer(v, v.conj() @ h[k + 1 :, :])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v.conj())
        q[:, k + 1 :] -= 2.0 * np.outer(q[:, k + 1 :] @ v, v.conj())
        h[k + 2 :, k] = 0.0
    return h, q


def _givens(x: complex, y: complex) -> tuple[float, complex]:
    # G = [[c, s], [-conj(s), c]] maps (x, y) to (r, 0)
    ax = abs(x)
    if y == 0:
        return 1.0, 0.0
    if ax == 0:
        return 0.0, 1.0
    r = np.hypot(ax, abs(y))
    return ax / r, (x / ax) * np.conj(y) / r


def _wilkinson(a: complex, b: complex, c: complex, d: complex) -> complex:
    half = 0.5 * (a - d)
    disc = np.sqrt(half * half + b * c)
    mu1 = 0.5 * (a + d) + disc
    mu2 = 0.5 * (a + d) - disc
    return mu1 if abs(mu1 - d) <= abs(mu2 - d) else mu2


def schur(
    a: np.ndarray, max_iter_per_eig: int = MAX_ITER_PER_EIG, want_z: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Complex Schur form a = z t z^H (t upper triangular)."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    t, z = hessenberg(a)
    if not want_z:
        z = None
    hi = n - 1
    its = 0
    while hi > 0:
        # look for a negligible subdiagonal entry in the active block
        lo = hi
        while lo > 0:
            s = abs(t[lo - 1, lo - 1]) + abs(t[lo, lo])
            if s == 0.0:
                s = np.abs(t[: hi + 1, : hi + 1]).sum()
            if abs(t[lo, lo - 1]) <= EPS * s:
                t[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            its = 0
            continue
        its += 1
        if its > max_iter_per_eig:
            raise EigenConvergenceError(
                f"QR iteration did not converge for eigenvalue {hi} "
                f"after {max_iter_per_eig} iterations",
                t.copy(),
                hi,
            )
        if its % 10 == 0:
            mu = t[hi, hi] + 0.75 * abs(t[hi, hi - 1])
        else:
            mu = _wilkinson(t[hi - 1, hi - 1], t[hi - 1, hi], t[hi, hi - 1], t[hi, hi])
        idx = np.arange(lo, hi + 1)
        t[idx, idx] -= mu
        rots = []
        for k in range(lo, hi):
            c, s = _givens(t[k, k], t[k + 1, k])
            rows = t[k : k + 2, k:]
            top = c * rows[0] + s * rows[1]
            bot = -np.conj(s) * rows[0] + c * rows[1]
            rows[0] = top
            rows[1] = bot
            t[k + 1, k] = 0.0
            rots.append((k, c, s))
        for k, c, s in rots:
            cols = t[: min(k + 2, hi) + 1, k : k + 2]
            left = c * cols[:, 0] + np.conj(s) * cols[:, 1]
            right = -s * cols[:, 0] + c * cols[:, 1]
            cols[:, 0] = left
            cols[:, 1] = right
            if z is not None:
                zc = z[:, k : k + 2]
                left = c * zc[:, 0] + np.conj(s) * zc[:, 1]
                right = -s * zc[:, 0] + c * zc[:, 1]
                zc[:, 0] = left
                zc[:, 1] = right
        t[idx, idx] += mu
    return np.triu(t), z


def _right_vectors_triangular(t: np.ndarray) -> np.ndarray:
    n = t.shape[0]
    smin = max(EPS * np.linalg.norm(t), TINY)
    x = np.zeros((n, n), dtype=complex)
    for k in range(n):
        lam = t[k, k]
        x[k, k] = 1.0
        for i in range(k - 1, -1, -1):
            d = t[i, i] - lam
            if abs(d) < smin:
                d = smin
            x[i, k] = -(t[i, i + 1 : k + 1] @ x[i + 1 : k + 1, k]) / d
    return x


def _left_vectors_triangular(t: np.ndarray) -> np.ndarray:
    # columns y_k with t^H y_k = conj(t_kk) y_k
    n = t.shape[0]
    smin = max(EPS * np.linalg.norm(t), TINY)
    th = t.conj().T
    y = np.zeros((n, n), dtype=complex)
    for k in range(n):
        lam = th[k, k]
        y[k, k] = 1.0
        for j in range(k + 1, n):
            d = th[j, j] - lam
            if abs(d) < smin:
                d = smin
            y[j, k] = -(th[j, k:j] @ y[k:j, k]) / d
    return y


def canonical_order(w: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Indices sorting by descending real part, then descending imaginary part."""
    q = 1e-9 * max(scale, 1.0)
    re = np.round(np.real(w) / q)
    im = np.round(np.imag(w) / q)
    return np.lexsort((-im, -re))


def _unit_columns(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def _decompose(a: np.ndarray):
    a = np.asarray(a, dtype=complex)
    t, z = schur(a)
    w = np.diag(t).copy()
    order = canonical_order(w, np.linalg.norm(a))
    v = _unit_columns(z @ _right_vectors_triangular(t))
    tl = _unit_columns(z @ _left_vectors_triangular(t))
    return w[order], v[:, order], tl[:, order]


def eigvals(a: np.ndarray) -> np.ndarray:
    t, _ = schur(a, want_z=False)
    w = np.diag(t).copy()
    return w[canonical_order(w, np.linalg.norm(a))]


def eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in canonical order and unit-norm right eigenvectors (columns)."""
    w, v, _ = _decompose(a)
    return w, v


def left_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm left eigenvectors: a^H t_j = conj(w_j) t_j, same order as :func:`eig`."""
    w, _, tl = _decompose(a)
    return w, tl


# ---------------------------------------------------------------------------
# clusters and diagnostics


def cluster_indices(w: np.ndarray, tol: float) -> list[list[int]]:
    """Connected components of the graph |w_i - w_j| <= tol."""
    n = len(w)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(w[i] - w[j]) <= tol:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def cluster_metric(v: np.ndarray, t: np.ndarray, members: list[int]) -> float:
    """Smallest singular value of the unit-normalized Gram block T_c^H V_c."""
    vc = _unit_columns(v[:, members])
    tc = _unit_columns(t[:, members])
    return float(np.linalg.svd(tc.conj().T @ vc, compute_uv=False).min())


def parallel_groups(v: np.ndarray, members: list[int], cos_tol: float = PARALLEL_COS):
    """Split ``members`` into groups of mutually near-parallel right vectors."""
    vc = _unit_columns(v[:, members])
    gram = np.abs(vc.conj().T @ vc)
    groups: list[list[int]] = []
    seen = set()
    for a in range(len(members)):
        if a in seen:
            continue
        grp = [a]
        seen.add(a)
        for b in range(a + 1, len(members)):
            if b not in seen and gram[a, b] > cos_tol:
                grp.append(b)
                seen.add(b)
        groups.append([members[i] for i in grp])
    return groups


def refine_eigenvalues(a: np.ndarray, w: np.ndarray, which, dps: int = REFINE_DPS) -> np.ndarray:
    """Replace ``w[which]`` with extended-precision eigenvalues of ``a``."""
    which = list(which)
    if not which:
        return w
    with mpmath.workdps(dps):
        m = mpmath.matrix(np.asarray(a, dtype=complex).tolist())
        ev = mpmath.eig(m, left=False, right=False)
        hp = np.array([complex(e) for e in ev])
    # match every float eigenvalue to a distinct high-precision one
    cost = np.abs(w[:, None] - hp[None, :])
    rows, cols = linear_sum_assignment(cost)
    out = w.copy()
    for r, c in zip(rows, cols):
        if r in which:
            out[r] = hp[c]
    return out


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    right_vectors: np.ndarray  # columns V_j
    left_vectors: np.ndarray  # columns T_j
    residuals: np.ndarray
    defectiveness: float
    clusters: tuple[tuple[int, ...], ...]
    defective_groups: tuple[tuple[int, ...], ...] = ()
    biorthonormal: bool = False
    refined: tuple[int, ...] = ()
    labels: np.ndarray | None = field(default=None, compare=False)

    @property
    def is_defective(self) -> bool:
        return self.defectiveness < DEFECT_THRESHOLD

    def by_label(self, j: int) -> int:
        """Position in canonical order of the branch labelled ``j``."""
        if self.labels is None:
            raise ValueError("spectrum carries no labels")
        return int(np.flatnonzero(self.labels == j)[0])


def compute_spectrum(
    a: np.ndarray,
    refine: bool = True,
    cluster_tol: float = CLUSTER_TOL,
    threshold: float = DEFECT_THRESHOLD,
) -> Spectrum:
    """Eigenvalues, unit right/left vectors, residuals and defectiveness of ``a``."""
    a = np.asarray(a, dtype=complex)
    w, v, tl = _decompose(a)
    scale = max(np.linalg.norm(a), 1.0)
    refined: tuple[int, ...] = ()
    if refine:
        cond = np.abs(np.einsum("ij,ij->j", tl.conj(), v))
        bad = np.flatnonzero(cond < REFINE_BELOW)
        if bad.size:
            w = refine_eigenvalues(a, w, bad)
            refined = tuple(int(i) for i in bad)
    resid = np.linalg.norm(a @ v - v * w, axis=0) / np.linalg.norm(a) if np.any(a) else np.zeros(len(w))
    clusters = cluster_indices(w, cluster_tol * scale)
    metric = 1.0
    groups = []
    for c in clusters:
        m = cluster_metric(v, tl, c)
        metric = min(metric, m)
        if m < threshold:
            groups.extend(g for g in parallel_groups(v, c) if len(g) > 1)
    return Spectrum(
        eigenvalues=w,
        right_vectors=v,
        left_vectors=tl,
        residuals=resid,
        defectiveness=metric,
        clusters=tuple(tuple(c) for c in clusters),
        defective_groups=tuple(tuple(g) for g in groups),
        refined=refined,
    )


def biorthonormalize(spec: Spectrum, threshold: float = DEFECT_THRESHOLD) -> Spectrum:
    """Rescale left vectors so that T^H V = I (right vectors unit-norm)."""
    if spec.defectiveness < threshold:
        bad = list(spec.defective_groups) or [
            c for c in spec.clusters if cluster_metric(spec.right_vectors, spec.left_vectors, list(c)) < threshold
        ]
        raise DefectiveClusterError(
            f"defective eigenvalue cluster(s) {bad}: metric {spec.defectiveness:.3g} "
            f"below {threshold:g}",
            [tuple(g) for g in bad],
            spec.defectiveness,
        )
    v = _unit_columns(spec.right_vectors)
    t = spec.left_vectors.copy()
    for c in spec.clusters:
        c = list(c)
        g = t[:, c].conj().T @ v[:, c]
        t[:, c] = t[:, c] @ np.linalg.inv(g).conj().T
    return replace(spec, right_vectors=v, left_vectors=t, biorthonormal=True)


def pair_to_analytic(numeric, analytic) -> tuple[np.ndarray, float]:
    """perm[j] = index into ``numeric`` matched to ``analytic[j]``; plus total cost."""
    numeric = np.asarray(numeric, dtype=complex)
    analytic = np.asarray(analytic, dtype=complex)
    cost = np.abs(analytic[:, None] - numeric[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(analytic), dtype=int)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


# ---------------------------------------------------------------------------
# model-aware helpers


def sector_weights(v: np.ndarray) -> np.ndarray:
    """(3, n) array: weight of each column on coherence sectors 0, +1, -1."""
    sectors = np.array([model.coherence_sector(i) for i in range(model.SUPER_DIM)])
    p = np.abs(v) ** 2
    out = np.empty((3, v.shape[1]))
    for row, s in enumerate((0, 1, -1)):
        out[row] = p[sectors == s].sum(axis=0)
    return out / out.sum(axis=0, keepdims=True)


ANALYTIC_SECTOR = np.array([0, 1, -1, 1, -1, 0, 0, 0, 0])


def label_spectrum(params: model.SystemParams, spec: Spectrum, tol: float = 1e-6) -> np.ndarray:
    """labels[i] = analytic branch index of numeric eigenvalue i.

    Pairing is by eigenvalue distance. Ties (numerically equal eigenvalues)
    are broken by coherence sector, then by putting coalesced eigenvectors on
    the lowest labels of the tied set.
    """
    analytic = model.analytic_eigenvalues(params)
    perm, _ = pair_to_analytic(spec.eigenvalues, analytic)
    labels = np.empty(len(analytic), dtype=int)
    labels[perm] = np.arange(len(analytic))
    scale = max(1.0, params.kappa)
    tied = cluster_indices(analytic, tol * scale)
    sw = sector_weights(spec.right_vectors)
    sec_row = {0: 0, 1: 1, -1: 2}
    for group in tied:
        if len(group) < 2:
            continue
        nums = [int(perm[j]) for j in group]
        # prefer numeric vectors sitting in the label's sector
        cost = np.array(
            [[1.0 - sw[sec_row[ANALYTIC_SECTOR[j]], n] for n in nums] for j in group]
        )
        # coalesced vectors (members of a parallel group) take the lowest labels
        coalesced = {n for g in spec.defective_groups for n in g}
        rank = np.array([0 if n in coalesced else 1 for n in nums])
        cost = cost + 1e-3 * rank[None, :] * (len(group) - 1 - np.arange(len(group)))[:, None]
        r, c = linear_sum_assignment(cost)
        for ri, ci in zip(r, c):
            labels[nums[ci]] = group[ri]
    return labels


def liouvillian_spectrum(params: model.SystemParams, refine: bool = True) -> Spectrum:
    """Labelled spectrum of the model Liouvillian."""
    spec = compute_spectrum(model.build_liouvillian(params), refine=refine)
    return replace(spec, labels=label_spectrum(params, spec))
