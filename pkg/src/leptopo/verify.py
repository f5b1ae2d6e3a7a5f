"""Invariant suite behind ``leptopo verify``.

Each check returns a :class:`Check`. The Liouvillian builder is injectable so
that the suite can be run against deliberately broken models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics, eigen, model, topology

Builder = Callable[[model.SystemParams], np.ndarray]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    data: dict = field(default_factory=dict)


def grid_points(n_omega=61, n_delta=61, omega=(0.0, 1.5), delta=(-1.0, 1.0)):
    for om in np.linspace(*omega, n_omega):
        for de in np.linspace(*delta, n_delta):
            yield model.SystemParams(float(om), float(de))


def spectral_error(params, builder: Builder = model.build_liouvillian, alpha_coeff=model.ALPHA_DETUNING_COEFF):
    spec = eigen.compute_spectrum(builder(params))
    an = model.analytic_eigenvalues(params, alpha_coeff)
    perm, _ = eigen.pair_to_analytic(spec.eigenvalues, an)
    return float(np.abs(spec.eigenvalues[perm] - an).max())


def check_spectral_consistency(builder: Builder = model.build_liouvillian, tol=1e-9, n=61) -> Check:
    t0 = time.perf_counter()
    worst, where = 0.0, None
    for p in grid_points(n, n):
        e = spectral_error(p, builder)
        if e > worst:
            worst, where = e, (p.omega, p.delta)
    dt = time.perf_counter() - t0
    return Check(
        "spectral_consistency",
        worst <= tol,
        f"max |analytic - numeric| = {worst:.3g} kappa at {where} on {n}x{n} grid",
        {"max_error": worst, "where": where, "seconds": dt},
    )


def alpha_resolution(n=61) -> Check:
    """Grid errors for each candidate Delta^2 coefficient in alpha."""
    errs = {}
    for coeff in model.ALPHA_DETUNING_CANDIDATES:
        worst = 0.0
        for p in grid_points(n, n):
            if p.delta == 0.0:
                continue
            w = eigen.eigvals(model.build_liouvillian(p))
            an = model.analytic_eigenvalues(p, coeff)
            perm, _ = eigen.pair_to_analytic(w, an)
            worst = max(worst, float(np.abs(w[perm] - an).max()))
        errs[coeff] = worst
    winner = min(errs, key=errs.get)
    loser = max(errs, key=errs.get)
    ok = winner == model.ALPHA_DETUNING_COEFF and errs[winner] <= 1e-9 and errs[loser] >= 1e-3
    names = {0.5: "Delta^2/2", 1.0 / 3.0: "Delta^2/3"}
    return Check(
        "alpha_resolution",
        ok,
        f"alpha uses {names[winner]} (grid error {errs[winner]:.3g}); "
        f"{names[loser]} misses by {errs[loser]:.3g} kappa",
        {"winner": names[winner], "errors": {names[k]: v for k, v in errs.items()}},
    )


def _random_params(rng, n):
    for _ in range(n):
        yield model.SystemParams(float(rng.uniform(0, 2)), float(rng.uniform(-1, 1)))


def check_trace_preservation(builder: Builder = model.build_liouvillian, seed=0) -> Check:
    rng = np.random.default_rng(seed)
    tid = model.trace_functional()
    worst = max(float(np.abs(tid.conj() @ builder(p)).max()) for p in _random_params(rng, 100))
    return Check("trace_preservation", worst <= 1e-12, f"max |vec(I)^H L| = {worst:.3g}")


def random_density(rng) -> np.ndarray:
    g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def check_lindblad_oracle(builder: Builder = model.build_liouvillian, seed=1) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in _random_params(rng, 100):
        lv = builder(p)
        for _ in range(10):
            rho = random_density(rng)
            direct = model.lindblad_rhs(p, rho)
            worst = max(worst, float(np.abs(model.unvec(lv @ model.vec(rho)) - direct).max()))
    return Check("lindblad_oracle", worst <= 1e-12, f"max deviation from direct Lindblad RHS = {worst:.3g}")


def check_biorthogonality(builder: Builder = model.build_liouvillian, seed=2) -> Check:
    rng = np.random.default_rng(seed)
    worst_b, worst_r = 0.0, 0.0
    for p in _random_params(rng, 100):
        lv = builder(p)
        spec = eigen.biorthonormalize(eigen.compute_spectrum(lv))
        g = spec.left_vectors.conj().T @ spec.right_vectors
        worst_b = max(worst_b, float(np.abs(g - np.eye(9)).max()))
        worst_r = max(worst_r, float(spec.residuals.max()))
    ok = worst_b <= 1e-8 and worst_r <= 1e-10
    return Check("biorthogonality", ok, f"max |T^H V - I| = {worst_b:.3g}, max residual = {worst_r:.3g}")


def check_lep_location() -> Check:
    lep = topology.locate_lep2()
    om3, spread = topology.locate_lep3()
    ok = abs(lep.omega - 0.25) <= 1e-4 and abs(lep.delta) <= 1e-4 and lep.metric < eigen.DEFECT_THRESHOLD
    return Check(
        "lep_location",
        ok,
        f"LEP2 at Omega = {lep.omega:.12g}, Delta = {lep.delta:.3g} (metric {lep.metric:.3g}); "
        f"threefold coalescence at Omega = {om3:.9g} on Delta = 0 "
        f"(spread at kappa/2: {topology.lep3_spread(0.5):.3g})",
        {"lep2": [lep.omega, lep.delta], "lep3_omega": om3, "metric": lep.metric},
    )


def check_windings(jobs=1) -> Check:
    tr = topology.track_branches(topology.ParameterLoop(0.327, 128), jobs=jobs)
    w = {j: topology.winding_number(tr.paths[j], topology.LEP2_REFERENCE if j < 5 else topology.LEP3_REFERENCE) for j in range(1, 9)}
    want = {1: 0.5, 2: -0.5, 3: 0.5, 4: -0.5, 5: 0, 6: 0, 7: 0, 8: 0}
    ok = all(float(w[j].value) == want[j] and abs(w[j].raw - want[j]) <= 1e-4 for j in want)
    small = topology.track_branches(topology.ParameterLoop(0.1, 128), jobs=jobs)
    ok &= bool(np.all(small.permutation == np.arange(9)))
    txt = ", ".join(f"W{j}={w[j].value}" for j in range(1, 9))
    return Check("winding_regression", ok, f"r=0.327: {txt}; cycles {tr.cycles()}")


def check_resultant_zero_locus() -> Check:
    on_line = [topology.resultant_vector(model.SystemParams(o, 0.0)).rel1 for o in np.linspace(0.1, 1.0, 10)]
    generic = [topology.resultant_vector(p).rel1 for p in generic_points()]
    ok = max(on_line) <= 1e-6 and min(generic) >= 1e-3
    return Check(
        "resultant_zero_locus",
        ok,
        f"|R1|/scale on Delta=0: max {max(on_line):.3g}; generic points: min {min(generic):.3g} "
        f"(required >= 1e-3)",
    )


def generic_points():
    rng = np.random.default_rng(7)
    pts = []
    while len(pts) < 10:
        o, d = rng.uniform(0.1, 1.4), rng.uniform(0.1, 0.9) * rng.choice([-1, 1])
        pts.append(model.SystemParams(float(o), float(d)))
    return pts


def check_physicality(seed=3) -> Check:
    rng = np.random.default_rng(seed)
    grid = dynamics.TimeGrid.uniform(0.0, 5.0, 50)
    rho0 = dynamics.initial_superposition()
    tr_err = herm = 0.0
    min_ev = np.inf
    for p in _random_params(rng, 100):
        st = dynamics.evolve(p, rho0, grid)
        tr_err = max(tr_err, float(np.abs(np.trace(st, axis1=1, axis2=2) - 1).max()))
        herm = max(herm, float(np.abs(st - st.conj().transpose(0, 2, 1)).max()))
        min_ev = min(min_ev, float(np.linalg.eigvalsh(0.5 * (st + st.conj().transpose(0, 2, 1))).min()))
    ok = tr_err <= 1e-9 and herm <= 1e-9 and min_ev >= -1e-8
    return Check("physicality", ok, f"trace err {tr_err:.3g}, hermiticity err {herm:.3g}, min eigenvalue {min_ev:.3g}")


def run_all(builder: Builder = model.build_liouvillian, jobs=1, quick: bool = False) -> list[Check]:
    checks = [
        check_spectral_consistency(builder, n=21 if quick else 61),
        check_trace_preservation(builder),
        check_lindblad_oracle(builder),
        check_biorthogonality(builder),
    ]
    if builder is model.build_liouvillian:
        checks += [
            alpha_resolution(n=21 if quick else 61),
            check_lep_location(),
            check_windings(jobs),
            check_resultant_zero_locus(),
            check_physicality(),
        ]
    return checks
