"""Master-equation evolution, modal amplitudes and single-exponential fits."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import eigen, model

log = logging.getLogger(__name__)

#: amplitudes below this (absolute, states are O(1)) count as no signal
NO_SIGNAL = 1e-10
FIT_MAX_ITER = 200
FIT_GTOL = 1e-12
#: calibrated default extraction grid: samples over [0, 5/kappa]
DEFAULT_SAMPLES = 401
DEFAULT_SPAN = 5.0


class NoSignalError(ValueError):
    pass


class FitConvergenceError(RuntimeError):
    def __init__(self, message: str, best: "FitResult"):
        super().__init__(message)
        self.best = best


class AliasingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least 2 samples")
        if not np.all(np.isfinite(t)) or t[0] < 0:
            raise ValueError("times must be finite and start at t0 >= 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t0: float, t1: float, n: int) -> "TimeGrid":
        if n < 2 or not t1 > t0:
            raise ValueError(f"bad uniform grid ({t0}, {t1}, {n})")
        return cls(np.linspace(t0, t1, n))

    @classmethod
    def default(cls, kappa: float = 1.0) -> "TimeGrid":
        return cls.uniform(0.0, DEFAULT_SPAN / kappa, DEFAULT_SAMPLES)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class AmplitudeSeries:
    branch: int
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite amplitude")


@dataclass(frozen=True)
class FitResult:
    rate: complex
    amplitude: complex
    residual: float
    iterations: int
    warnings: tuple[str, ...] = field(default=())


def initial_superposition() -> np.ndarray:
    """(|g,0> + i|e,0>)/sqrt(2) as a density matrix."""
    psi = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)
    return np.outer(psi, psi.conj())


def check_physical(rho: np.ndarray, tol: float = 1e-12) -> None:
    rho = np.asarray(rho)
    if rho.shape != (model.DIM, model.DIM):
        raise ValueError(f"density matrix must be 3x3, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -1e-10:
        raise ValueError("density matrix is not positive semidefinite")


def evolve(params: model.SystemParams, rho0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """rho(t_k) for every grid time, shape (n, 3, 3). Uses expm so it stays exact at EPs."""
    check_physical(rho0)
    lv = model.build_liouvillian(params)
    r0 = model.vec(rho0)
    out = np.empty((grid.n, model.DIM, model.DIM), dtype=complex)
    for k, t in enumerate(grid.times):
        out[k] = model.unvec(expm(lv * t) @ r0)
    return out


def align_to_state(spec: eigen.Spectrum, rho0: np.ndarray) -> eigen.Spectrum:
    """Rotate the basis inside each degenerate (semisimple) cluster so that
    ``rho0`` projects onto the first member only.

    The projector onto a degenerate eigenspace is unique but its basis is not;
    this picks the basis in which the remaining members carry no amplitude.
    """
    if not spec.biorthonormal:
        spec = eigen.biorthonormalize(spec)
    v = spec.right_vectors.copy()
    t = spec.left_vectors.copy()
    r0 = model.vec(rho0)
    for c in spec.clusters:
        if len(c) < 2:
            continue
        c = list(c)
        if spec.labels is not None:
            c.sort(key=lambda i: spec.labels[i])
        a = t[:, c].conj().T @ r0
        if np.linalg.norm(a) <= NO_SIGNAL:
            continue
        basis = np.column_stack([a, np.eye(len(c))])
        q, _ = np.linalg.qr(basis)
        q = q[:, : len(c)]
        v[:, c] = v[:, c] @ q
        t[:, c] = t[:, c] @ q
        norms = np.linalg.norm(v[:, c], axis=0)
        v[:, c] /= norms
        t[:, c] *= norms
    return replace(spec, right_vectors=v, left_vectors=t)


def amplitudes(
    spec: eigen.Spectrum, states: np.ndarray, grid: TimeGrid
) -> list[AmplitudeSeries]:
    """A_j(t_k) = T_j^H vec(rho(t_k)); one series per branch, ordered by label."""
    if not spec.biorthonormal:
        spec = eigen.biorthonormalize(spec)
    flat = np.asarray(states).reshape(len(grid.times), model.SUPER_DIM)
    amp = flat @ spec.left_vectors.conj()  # (n_t, 9)
    labels = spec.labels if spec.labels is not None else np.arange(amp.shape[1])
    order = np.argsort(labels)
    return [
        AmplitudeSeries(int(labels[i]), grid.times.copy(), amp[:, i].copy()) for i in order
    ]


def _log_linear_init(t: np.ndarray, a: np.ndarray) -> tuple[complex, complex, bool]:
    mag = np.abs(a)
    keep = mag > 0
    t, a, mag = t[keep], a[keep], mag[keep]
    steps = np.angle(a[1:] / a[:-1])
    # only judge aliasing where the signal is well above its tail
    strong = (mag[1:] > 0.1 * mag.max()) & (mag[:-1] > 0.1 * mag.max())
    aliased = bool(np.any(np.abs(steps[strong]) > 0.9 * np.pi))
    phase = np.angle(a[0]) + np.concatenate([[0.0], np.cumsum(steps)])
    y = np.log(mag) + 1j * phase
    # weight by |A|^2 so samples lost in noise do not drive the slope
    w = mag / mag.max()
    design = np.column_stack([np.ones_like(t), t]) * w[:, None]
    coef, *_ = np.linalg.lstsq(design.astype(complex), y * w, rcond=None)
    return complex(np.exp(coef[0])), complex(coef[1]), aliased


def fit_eigenvalue(
    series: AmplitudeSeries, max_iter: int = FIT_MAX_ITER, gtol: float = FIT_GTOL
) -> FitResult:
    """Least-squares fit of C exp(B t) to a complex amplitude series."""
    t = np.asarray(series.times, dtype=float)
    a = np.asarray(series.values, dtype=complex)
    if t.size < 4:
        raise ValueError("need at least 4 samples to fit")
    peak = np.abs(a).max()
    if peak <= NO_SIGNAL:
        raise NoSignalError(f"branch {series.branch}: no signal (max |A| = {peak:.3g})")

    notes = []
    c, b, aliased = _log_linear_init(t, a)
    if aliased:
        msg = (
            f"branch {series.branch}: phase step near pi between samples; "
            "the grid may alias |Im lambda|"
        )
        warnings.warn(msg, AliasingWarning, stacklevel=2)
        notes.append(msg)

    def resid(cc, bb):
        return a - cc * np.exp(bb * t)

    r = resid(c, b)
    cost = float(np.vdot(r, r).real)
    scale = peak * peak * t.size
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        e = np.exp(b * t)
        jac = np.column_stack([e, c * t * e])
        grad = jac.conj().T @ r
        if np.linalg.norm(grad) <= gtol * scale:
            converged = True
            break
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        lam = 1.0
        improved = False
        for _ in range(40):
            cn, bn = c + lam * step[0], b + lam * step[1]
            rn = resid(cn, bn)
            cn_cost = float(np.vdot(rn, rn).real)
            if np.isfinite(cn_cost) and cn_cost <= cost:
                improved = True
                break
            lam *= 0.5
        if not improved:
            # no descent left along the Gauss-Newton direction: at the minimum
            converged = True
            break
        small = abs(lam * step[1]) <= 1e-15 * max(1.0, abs(b)) and abs(lam * step[0]) <= 1e-15 * max(1.0, abs(c))
        c, b, r, cost = cn, bn, rn, cn_cost
        if small:
            converged = True
            break
    result = FitResult(complex(b), complex(c), cost, it, tuple(notes))
    if not converged or not np.isfinite(b):
        raise FitConvergenceError(
            f"branch {series.branch}: fit did not converge in {max_iter} iterations", result
        )
    return result


def synth_noisy_run(
    params: model.SystemParams,
    rho0: np.ndarray,
    grid: TimeGrid,
    sigma: float,
    seed: int,
    spec: eigen.Spectrum | None = None,
    states: np.ndarray | None = None,
) -> list[AmplitudeSeries]:
    """Amplitude series from states with i.i.d. complex Gaussian noise on every entry.

    ``sigma`` is the standard deviation per quadrature. ``spec`` and ``states``
    may be passed in to avoid recomputation in Monte Carlo loops.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if spec is None:
        spec = eigen.liouvillian_spectrum(params)
    if states is None:
        states = evolve(params, rho0, grid)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.n, model.DIM, model.DIM, 2))
    noisy = states + sigma * (noise[..., 0] + 1j * noise[..., 1])
    return amplitudes(spec, noisy, grid)


def exact_amplitudes(spec: eigen.Spectrum, rho0: np.ndarray) -> np.ndarray:
    """A_j(0) indexed by branch label."""
    if not spec.biorthonormal:
        spec = eigen.biorthonormalize(spec)
    a = spec.left_vectors.conj().T @ model.vec(rho0)
    labels = spec.labels if spec.labels is not None else np.arange(a.size)
    out = np.empty_like(a)
    out[labels] = a
    return out
