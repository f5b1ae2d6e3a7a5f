"""Parameter loops, branch tracking, winding numbers and resultant invariants."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar, root

from . import eigen, model

#: cost added to pairings whose eigenvectors are (numerically) orthogonal
GATE_PENALTY = 1e6
GATE_OVERLAP = 0.2
MAX_BISECT = 12
AMBIGUITY_TOL = 1e-12
QUANTIZE_TOL = 1e-3
SINGULAR_REF = 1e-9
CERTIFY_RTOL = 1e-3

LEP2_REFERENCE = -0.25  # times kappa
LEP3_REFERENCE = -0.5


class TrackingError(RuntimeError):
    def __init__(self, message: str, k: float):
        super().__init__(message)
        self.k = k


class RefinementRequest(TrackingError):
    """Assignment was ambiguous even after bisection; rerun with more samples."""


class SingularReferenceError(ValueError):
    pass


class LoopDegeneracyError(RuntimeError):
    def __init__(self, message: str, k: float):
        super().__init__(message)
        self.k = k


class NonQuantizedWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# loops


@dataclass(frozen=True)
class ParameterLoop:
    """Circle Omega = co + r cos k, Delta = cd + r sin k (units of kappa).

    Samples sit at k_i = 2 pi (i + phase) / N. The default half-step phase keeps
    every sample off the Delta = center line, where eigenvalues of different
    coherence sectors coincide exactly.
    """

    radius: float
    samples: int = 128
    center_omega: float = 0.5
    center_delta: float = 0.0
    kappa: float = 1.0
    direction: int = 1
    phase: float = 0.5
    ep_clearance: float = 1e-3
    known_eps: tuple[tuple[float, float], ...] = ((0.25, 0.0),)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("loop radius must be positive")
        if self.samples < 16:
            raise ValueError("a loop needs at least 16 samples")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        for eo, ed in self.known_eps:
            d = math.hypot(eo * self.kappa - self.center_omega, ed * self.kappa - self.center_delta)
            if abs(d - self.radius) < self.ep_clearance * self.kappa:
                raise ValueError(
                    f"loop passes within {self.ep_clearance:g} kappa of the EP at "
                    f"({eo * self.kappa:g}, {ed * self.kappa:g})"
                )

    @property
    def k_values(self) -> np.ndarray:
        i = np.arange(self.samples)
        return self.direction * 2.0 * np.pi * (i + self.phase) / self.samples

    def point(self, k: float) -> model.SystemParams:
        return model.SystemParams(
            self.center_omega + self.radius * math.cos(k),
            self.center_delta + self.radius * math.sin(k),
            self.kappa,
        )

    def encloses(self, omega: float, delta: float) -> bool:
        return math.hypot(omega - self.center_omega, delta - self.center_delta) < self.radius


@dataclass(frozen=True)
class BranchPath:
    branch_id: int
    k: np.ndarray  # unwrapped parameter, m * N samples
    values: np.ndarray
    closure_m: int


@dataclass
class TrackResult:
    loop: ParameterLoop
    k: np.ndarray  # samples of one traversal (including inserted bisection points)
    values: np.ndarray  # (n_k, 9): column j follows the branch seeded at label j
    permutation: np.ndarray  # perm[j]: label reached by branch j after one traversal
    paths: list[BranchPath]
    bisections: int = 0
    min_overlap: float = 1.0

    def cycles(self) -> list[tuple[int, ...]]:
        return permutation_cycles(self.permutation)


def permutation_cycles(perm) -> list[tuple[int, ...]]:
    seen, out = set(), []
    for s in range(len(perm)):
        if s in seen:
            continue
        cyc, j = [], s
        while j not in seen:
            seen.add(j)
            cyc.append(j)
            j = int(perm[j])
        out.append(tuple(cyc))
    return out


def _loop_spectrum(args):
    omega, delta, kappa = args
    p = model.SystemParams(omega, delta, kappa)
    s = eigen.compute_spectrum(model.build_liouvillian(p))
    return s.eigenvalues, s.right_vectors


def _spectra(loop: ParameterLoop, ks, jobs: int = 1):
    pts = [loop.point(k) for k in ks]
    args = [(p.omega, p.delta, p.kappa) for p in pts]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_loop_spectrum, args, chunksize=8))
    return [_loop_spectrum(a) for a in args]


def _assign(w0, v0, w1, v1, scale):
    """Optimal continuation 0 -> 1. Returns (perm, ok, ambiguous, min_overlap)."""
    n = len(w0)
    ov = np.abs(v0.conj().T @ v1)
    dist = np.abs(w0[:, None] - w1[None, :])
    gate = ov < GATE_OVERLAP
    cost = dist + GATE_PENALTY * gate
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    perm = np.empty(n, dtype=int)
    perm[rows] = cols
    if np.any(gate[rows, cols]):
        return perm, False, False, float(ov[rows, cols].min())

    ok = True
    for a in range(n):
        b = perm[a]
        step = dist[a, b]
        # competitors: eigenvalues the vector could plausibly be confused with
        rivals_new = [c for c in range(n) if c != b and not gate[a, c]]
        rivals_old = [d for d in range(n) if d != a and not gate[d, b]]
        gap_new = min((abs(w1[c] - w1[b]) for c in rivals_new), default=np.inf)
        gap_old = min((abs(w0[d] - w0[a]) for d in rivals_old), default=np.inf)
        if step > 0.5 * max(gap_new, gap_old):
            ok = False
            break

    ambiguous = False
    if ok:
        for a in range(n):
            alt = cost.copy()
            alt[a, perm[a]] = np.inf
            try:
                r2, c2 = linear_sum_assignment(alt)
            except ValueError:
                continue
            if alt[r2, c2].sum() - best <= AMBIGUITY_TOL * scale:
                ambiguous = True
                break
    return perm, ok, ambiguous, float(ov[rows, cols].min())


def track_branches(loop: ParameterLoop, jobs: int = 1) -> TrackResult:
    """Follow all nine eigenvalues around ``loop`` by continuity."""
    ks = loop.k_values
    spectra = _spectra(loop, ks, jobs)
    p0 = loop.point(ks[0])
    spec0 = eigen.compute_spectrum(model.build_liouvillian(p0))
    labels0 = eigen.label_spectrum(p0, spec0)
    # position of label j in the sample-0 spectrum
    pos = np.empty(9, dtype=int)
    pos[labels0] = np.arange(9)

    scale = max(1.0, loop.kappa)
    k_out = [ks[0]]
    vals = [spectra[0][0][pos]]
    cur_w, cur_v = spectra[0]
    cur = pos.copy()  # cur[j] = index in current spectrum of branch j
    bisections = 0
    min_ov = 1.0

    step_k = loop.direction * 2 * np.pi / loop.samples
    for i in range(loop.samples):
        k_a = ks[i]
        k_b = k_a + step_k
        nxt_w, nxt_v = spectra[(i + 1) % loop.samples]

        # stack of pending intervals for adaptive bisection
        stack = [(k_b, nxt_w, nxt_v, 0)]
        ka = k_a
        while stack:
            kb, wb, vb, depth = stack[-1]
            perm, ok, amb, mo = _assign(cur_w, cur_v, wb, vb, scale)
            if ok and not amb:
                stack.pop()
                cur = perm[cur]
                cur_w, cur_v = wb, vb
                ka = kb
                min_ov = min(min_ov, mo)
                if kb != k_b:
                    k_out.append(kb)
                    vals.append(wb[cur])
                continue
            if depth >= MAX_BISECT:
                kind = RefinementRequest if amb else TrackingError
                what = "ambiguous assignment" if amb else "eigenvalue jump above threshold"
                raise kind(
                    f"{what} near k = {kb:.12g} after {MAX_BISECT} bisections; "
                    "increase the number of samples",
                    float(kb),
                )
            km = 0.5 * (ka + kb)
            pm = loop.point(km)
            wm, vm = _loop_spectrum((pm.omega, pm.delta, pm.kappa))
            bisections += 1
            stack.append((km, wm, vm, depth + 1))
        if i + 1 < loop.samples:
            k_out.append(k_b)
            vals.append(cur_w[cur])

    # back at sample 0: which label sits where branch j ended up
    perm = labels0[cur]
    values = np.array(vals)
    k_arr = np.array(k_out)
    paths = _paths(values, k_arr, perm, loop)
    return TrackResult(loop, k_arr, values, perm, paths, bisections, min_ov)


def _paths(values, k_arr, perm, loop) -> list[BranchPath]:
    period = loop.direction * 2 * np.pi
    cycles = permutation_cycles(perm)
    length = {j: len(c) for c in cycles for j in c}
    out = []
    for j in range(9):
        m = length[j]
        segs, ksegs, b = [], [], j
        for lap in range(m):
            segs.append(values[:, b])
            ksegs.append(k_arr + lap * period)
            b = int(perm[b])
        out.append(BranchPath(j, np.concatenate(ksegs), np.concatenate(segs), m))
    return out


# ---------------------------------------------------------------------------
# winding numbers


@dataclass(frozen=True)
class Winding:
    value: Fraction
    raw: float
    closure_m: int
    quantized: bool


def quantize(x: float, tol: float = QUANTIZE_TOL, denominators=(1, 2, 3)) -> tuple[Fraction, bool]:
    best = min((Fraction(round(x * q), q) for q in denominators), key=lambda f: abs(x - f))
    return best, abs(x - best) <= tol


def winding_number(path: BranchPath, reference: complex, laps: int = 1) -> Winding:
    """(1 / 2 m pi) * total change of arg(lambda - reference) along the closed path.

    ``laps`` repeats the closed path; the normalisation follows, so the value
    should not change.
    """
    z = np.tile(np.asarray(path.values) - reference, laps)
    if np.min(np.abs(z)) < SINGULAR_REF:
        raise SingularReferenceError(
            f"reference {reference} lies on the path of branch {path.branch_id}"
        )
    closed = np.append(z, z[0])
    steps = np.angle(closed[1:] / closed[:-1])
    raw = float(steps.sum() / (2 * np.pi * path.closure_m * laps))
    frac, ok = quantize(raw)
    if not ok:
        warnings.warn(
            f"branch {path.branch_id}: winding {raw:.6g} is not a multiple of 1/q, q<=3",
            NonQuantizedWarning,
            stacklevel=2,
        )
    return Winding(frac, raw, path.closure_m, ok)


def planar_winding(x, y) -> float:
    z = np.asarray(x) + 1j * np.asarray(y)
    closed = np.append(z, z[0])
    return float(np.angle(closed[1:] / closed[:-1]).sum() / (2 * np.pi))


# ---------------------------------------------------------------------------
# resultants


def char_poly(params: model.SystemParams) -> np.ndarray:
    """Coefficients (highest power first) of P(x) = -prod(x - lambda_i)."""
    w = eigen.eigvals(model.build_liouvillian(params))
    return -np.poly(w)


def _trim(p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    nz = np.flatnonzero(p)
    if nz.size == 0:
        raise ValueError("zero polynomial")
    return p[nz[0] :]


def sylvester_matrix(a, b) -> np.ndarray:
    a, b = _trim(a), _trim(b)
    m, n = len(a) - 1, len(b) - 1
    if m < 1 or n < 1:
        raise ValueError("both polynomials need degree >= 1")
    s = np.zeros((m + n, m + n), dtype=complex)
    for i in range(n):
        s[i, i : i + m + 1] = a
    for i in range(m):
        s[n + i, i : i + n + 1] = b
    return s


def sylvester_resultant(a, b) -> complex:
    return complex(np.linalg.det(sylvester_matrix(a, b)))


def root_product_resultant(roots_a, lead_a, b) -> complex:
    """lead_a^deg(b) * prod b(root) for a given by its roots."""
    b = _trim(b)
    return complex(lead_a ** (len(b) - 1) * np.prod(np.polyval(b, np.asarray(roots_a))))


def coefficient_scale(a, b) -> float:
    """Hadamard-type bound |Res(a, b)| <= |a|^deg(b) |b|^deg(a)."""
    a, b = _trim(a), _trim(b)
    return float(np.linalg.norm(a) ** (len(b) - 1) * np.linalg.norm(b) ** (len(a) - 1))


@dataclass(frozen=True)
class ResultantVector:
    r1: complex
    r2: complex
    scale1: float
    scale2: float
    certified: bool = True

    @property
    def rel1(self) -> float:
        return abs(self.r1) / self.scale1

    @property
    def rel2(self) -> float:
        return abs(self.r2) / self.scale2

    @property
    def norm(self) -> float:
        return math.hypot(abs(self.r1), abs(self.r2))


def resultant_vector(params: model.SystemParams) -> ResultantVector:
    """R1 = Res(P, P'), R2 = Res(P, P''), with a root-product cross-check."""
    w = eigen.eigvals(model.build_liouvillian(params))
    p0 = -np.poly(w)
    p1 = np.polyder(p0)
    p2 = np.polyder(p0, 2)
    r1 = sylvester_resultant(p0, p1)
    r2 = sylvester_resultant(p0, p2)
    c1 = root_product_resultant(w, p0[0], p1)
    c2 = root_product_resultant(w, p0[0], p2)

    def agree(x, y):
        return abs(x - y) <= CERTIFY_RTOL * max(abs(x), abs(y)) or (x == 0 and y == 0)

    return ResultantVector(
        r1, r2, coefficient_scale(p0, p1), coefficient_scale(p0, p2), agree(r1, c1) and agree(r2, c2)
    )


@dataclass
class HomotopyResult:
    invariant: int
    raw: float
    k: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    x: np.ndarray
    y: np.ndarray


def homotopy_invariant(loop: ParameterLoop, resultant_fn=None) -> HomotopyResult:
    """Winding of (Re R1/|R|, Re R2/|R|) around the origin over one traversal.

    ``resultant_fn(k)`` may replace the physical model (must return a
    :class:`ResultantVector`); used for synthetic sanity checks.
    """
    ks = loop.k_values
    if resultant_fn is None:
        resultant_fn = lambda k: resultant_vector(loop.point(k))  # noqa: E731
    rv = [resultant_fn(k) for k in ks]
    for k, r in zip(ks, rv):
        if not r.certified or r.norm == 0.0 or not np.isfinite(r.norm):
            raise LoopDegeneracyError(
                f"resultant vector not resolvable at k = {k:.12g}; the loop touches "
                "a higher-order degeneracy",
                float(k),
            )
    r1 = np.array([r.r1 for r in rv])
    r2 = np.array([r.r2 for r in rv])
    norm = np.array([r.norm for r in rv])
    x, y = r1.real / norm, r2.real / norm
    raw = planar_winding(x, y)
    return HomotopyResult(int(round(raw)), raw, ks, r1, r2, x, y)


# ---------------------------------------------------------------------------
# exceptional points


@dataclass(frozen=True)
class LepLocation:
    omega: float
    delta: float
    eigenvalue: complex
    metric: float
    groups: tuple[tuple[int, ...], ...]


def _sector_indices(sector: int) -> list[int]:
    return [i for i in range(model.SUPER_DIM) if model.coherence_sector(i) == sector]


def _pair_discriminant(x, kappa):
    # (lambda_1 - lambda_3)^2 from the 2x2 block of the +1 coherence sector
    p = model.SystemParams(x[0], x[1], kappa)
    idx = _sector_indices(1)
    b = model.build_liouvillian(p)[np.ix_(idx, idx)]
    w = eigen.eigvals(b)
    d = (w[0] - w[1]) ** 2
    return [d.real, d.imag]


def locate_lep2(seed=(0.3, 0.05), kappa: float = 1.0) -> LepLocation:
    """Coalescence point of the lambda_1 / lambda_3 pair."""
    sol = root(_pair_discriminant, np.asarray(seed, float) * kappa, args=(kappa,), tol=1e-15)
    om, de = (float(v) for v in sol.x)
    p = model.SystemParams(om, de, kappa)
    spec = eigen.liouvillian_spectrum(p)
    i1, i3 = spec.by_label(1), spec.by_label(3)
    members = next(c for c in spec.clusters if i1 in c)
    metric = eigen.cluster_metric(spec.right_vectors, spec.left_vectors, list(members))
    groups = tuple(tuple(sorted(int(spec.labels[i]) for i in g)) for g in spec.defective_groups)
    if i3 not in members:
        metric = 1.0
    return LepLocation(om, de, complex(spec.eigenvalues[i1]), metric, groups)


def lep3_spread(omega: float, delta: float = 0.0, kappa: float = 1.0) -> float:
    """Diameter of the three closest nonzero eigenvalues of the 0 coherence sector."""
    idx = _sector_indices(0)
    b = model.build_liouvillian(model.SystemParams(omega, delta, kappa))[np.ix_(idx, idx)]
    w = eigen.eigvals(b)
    w = w[np.argsort(np.abs(w))][1:]  # drop the steady state
    best = np.inf
    for drop in range(len(w)):
        trio = np.delete(w, drop)
        best = min(best, np.abs(trio[:, None] - trio[None, :]).max())
    return float(best)


def locate_lep3(bounds=(0.05, 0.75), kappa: float = 1.0) -> tuple[float, float]:
    """Omega on the Delta = 0 line where three sector-0 eigenvalues coalesce; (omega, spread)."""
    res = minimize_scalar(
        lambda o: lep3_spread(o, 0.0, kappa),
        bounds=(bounds[0] * kappa, bounds[1] * kappa),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x), float(res.fun)


def r_scan(radii, samples: int = 128, jobs: int = 1, **loop_kw) -> list[tuple[float, np.ndarray]]:
    out = []
    for r in radii:
        tr = track_branches(ParameterLoop(float(r), samples, **loop_kw), jobs=jobs)
        out.append((float(r), tr.permutation))
    return out
