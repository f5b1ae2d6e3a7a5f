"""Qubit + pseudomode model in the single-excitation subspace.

Basis ordering is |g,0>, |e,0>, |g,1> (indices 0, 1, 2). Superoperators act
on row-stacked density matrices, ``vec(rho)[3*i + j] = rho[i, j]``, which is
the ordering under which ``A rho B`` maps to ``kron(A, B.T) @ vec(rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Coefficient of Delta**2 in alpha. Fixed by comparing the closed-form
#: eigenvalues with the numeric spectrum (1/3 misses by ~0.13 kappa).
ALPHA_DETUNING_COEFF = 0.5
ALPHA_DETUNING_CANDIDATES = (0.5, 1.0 / 3.0)

DIM = 3
SUPER_DIM = DIM * DIM

# annihilation operator of the pseudomode: |g,1> -> |g,0>
_B = np.zeros((DIM, DIM), dtype=complex)
_B[0, 2] = 1.0
# |e><e|
_PE = np.zeros((DIM, DIM), dtype=complex)
_PE[1, 1] = 1.0
# b^dag |g><e| + b |e><g|
_SWAP = np.zeros((DIM, DIM), dtype=complex)
_SWAP[2, 1] = 1.0
_SWAP[1, 2] = 1.0


class DegenerateParameterizationError(ValueError):
    """Closed-form eigenvectors are undefined for the requested parameters."""


@dataclass(frozen=True)
class SystemParams:
    """Coupling ``omega``, detuning ``delta`` and pseudomode decay ``kappa``."""

    omega: float
    delta: float
    kappa: float = 1.0

    def __post_init__(self) -> None:
        for name in ("omega", "delta", "kappa"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa!r}")

    def normalized(self) -> "SystemParams":
        """The same point expressed in units of kappa."""
        k = self.kappa
        return SystemParams(self.omega / k, self.delta / k, 1.0)

    @classmethod
    def from_physical(
        cls, omega_mhz: float, delta_mhz: float, kappa_per_us: float
    ) -> "SystemParams":
        """Build kappa-normalized params from omega/2pi, delta/2pi in MHz and kappa in 1/us."""
        two_pi = 2.0 * math.pi
        return cls(
            two_pi * omega_mhz / kappa_per_us,
            two_pi * delta_mhz / kappa_per_us,
            1.0,
        )


@dataclass(frozen=True)
class SpectralConstants:
    eta_plus: complex
    eta_minus: complex
    alpha: float
    beta: complex


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(SUPER_DIM).copy()


def unvec(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape(DIM, DIM).copy()


def annihilation() -> np.ndarray:
    return _B.copy()


def build_hamiltonian(params: SystemParams) -> np.ndarray:
    return params.omega * _SWAP + params.delta * _PE


def build_nh_hamiltonian(params: SystemParams) -> np.ndarray:
    return build_hamiltonian(params) - 0.5j * params.kappa * (_B.conj().T @ _B)


def build_liouvillian(params: SystemParams) -> np.ndarray:
    """9x9 generator acting on row-stacked vec(rho)."""
    h = build_hamiltonian(params)
    eye = np.eye(DIM)
    n = _B.conj().T @ _B
    coherent = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    dissipator = 0.5 * params.kappa * (
        2.0 * np.kron(_B, _B.conj()) - np.kron(n, eye) - np.kron(eye, n.T)
    )
    return coherent + dissipator


def lindblad_rhs(params: SystemParams, rho: np.ndarray) -> np.ndarray:
    """Right-hand side of the master equation evaluated directly on a 3x3 matrix."""
    h = build_hamiltonian(params)
    b = _B
    bd = b.conj().T
    n = bd @ b
    kappa = params.kappa
    return (
        -1j * (h @ rho - rho @ h)
        + kappa * (b @ rho @ bd)
        - 0.5 * kappa * (n @ rho + rho @ n)
    )


def trace_functional() -> np.ndarray:
    """vec of the 3x3 identity; its conjugate row annihilates L."""
    return vec(np.eye(DIM))


def spectral_constants(
    params: SystemParams, alpha_coeff: float = ALPHA_DETUNING_COEFF
) -> SpectralConstants:
    kappa, delta, omega = params.kappa, params.delta, params.omega
    eta_plus = (-kappa + 2j * delta) / 4.0
    eta_minus = (-kappa - 2j * delta) / 4.0
    alpha = kappa**2 / 8.0 - alpha_coeff * delta**2 - 2.0 * omega**2
    beta = np.sqrt(complex(alpha**2 + delta**2 * kappa**2 / 4.0))
    return SpectralConstants(eta_plus, eta_minus, alpha, complex(beta))


def analytic_eigenvalues(
    params: SystemParams, alpha_coeff: float = ALPHA_DETUNING_COEFF
) -> np.ndarray:
    """Closed-form lambda_0..lambda_8 (principal square roots throughout)."""
    c = spectral_constants(params, alpha_coeff)
    om2 = params.omega**2
    s_plus = np.sqrt(c.eta_plus**2 - om2)
    s_minus = np.sqrt(c.eta_minus**2 - om2)
    r_hi = np.sqrt(c.alpha + c.beta)
    r_lo = np.sqrt(c.alpha - c.beta)
    half = -params.kappa / 2.0
    return np.array(
        [
            0.0,
            c.eta_minus - s_plus,
            c.eta_plus - s_minus,
            c.eta_minus + s_plus,
            c.eta_plus + s_minus,
            half + r_hi,
            half - r_hi,
            half + r_lo,
            half - r_lo,
        ],
        dtype=complex,
    )


def analytic_eigenvectors_low(params: SystemParams) -> list[np.ndarray]:
    """Unit-norm V0..V4 from the closed forms; V5..V8 come from the numeric solver."""
    if params.omega == 0:
        raise DegenerateParameterizationError(
            "closed-form V1..V4 collapse at omega = 0"
        )
    c = spectral_constants(params)
    om = params.omega
    s_plus = np.sqrt(c.eta_plus**2 - om**2)
    s_minus = np.sqrt(c.eta_minus**2 - om**2)

    def sector_plus(first: complex) -> np.ndarray:
        v = np.zeros(SUPER_DIM, dtype=complex)
        v[3] = first
        v[6] = om
        return v

    def sector_minus(first: complex) -> np.ndarray:
        v = np.zeros(SUPER_DIM, dtype=complex)
        v[1] = first
        v[2] = om
        return v

    vectors = [
        np.eye(SUPER_DIM, dtype=complex)[0],
        sector_plus(-1j * (c.eta_plus + s_plus)),
        sector_minus(1j * (c.eta_minus + s_minus)),
        sector_plus(-1j * (c.eta_plus - s_plus)),
        sector_minus(1j * (c.eta_minus - s_minus)),
    ]
    return [v / np.linalg.norm(v) for v in vectors]


def coherence_sector(index: int) -> int:
    """Excitation-number difference n_i - n_j carried by superoperator component ``index``."""
    excitations = (0, 1, 1)
    i, j = divmod(index, DIM)
    return excitations[i] - excitations[j]
