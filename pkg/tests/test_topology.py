from fractions import Fraction

import numpy as np
import pytest

from leptopo import eigen, model, topology as tp

from oracles import faddeev_leverrier, resultant_from_roots

SWAP = [0, 3, 4, 1, 2, 5, 6, 7, 8]


@pytest.fixture(scope="module")
def main_loop():
    return tp.track_branches(tp.ParameterLoop(0.327))


def test_loop_validation():
    with pytest.raises(ValueError):
        tp.ParameterLoop(0.0)
    with pytest.raises(ValueError):
        tp.ParameterLoop(0.3, samples=8)
    with pytest.raises(ValueError):
        tp.ParameterLoop(0.3, direction=2)
    with pytest.raises(ValueError):
        tp.ParameterLoop(0.2502)  # passes within 1e-3 of the EP
    loop = tp.ParameterLoop(0.327)
    assert loop.encloses(0.25, 0.0)
    assert not tp.ParameterLoop(0.2).encloses(0.25, 0.0)


def test_loop_points():
    loop = tp.ParameterLoop(0.327, samples=128)
    ks = loop.k_values
    assert ks.size == 128 and ks[0] == pytest.approx(np.pi / 128)
    p = loop.point(np.pi / 2)
    assert p.omega == pytest.approx(0.5) and p.delta == pytest.approx(0.327)
    # no sample on the Delta = 0 line
    assert min(abs(loop.point(k).delta) for k in ks) > 1e-3


def test_permutation_cycles():
    cyc = tp.permutation_cycles(SWAP)
    assert [c for c in cyc if len(c) > 1] == [(1, 3), (2, 4)]
    assert sorted(j for c in cyc for j in c) == list(range(9))
    assert all(len(c) == 1 for c in tp.permutation_cycles(list(range(9))))


def test_main_loop_permutation(main_loop):
    assert list(main_loop.permutation) == SWAP
    assert [c for c in main_loop.cycles() if len(c) > 1] == [(1, 3), (2, 4)]
    assert main_loop.bisections == 0
    assert main_loop.min_overlap > tp.GATE_OVERLAP
    closures = {p.branch_id: p.closure_m for p in main_loop.paths}
    assert closures == {0: 1, 1: 2, 2: 2, 3: 2, 4: 2, 5: 1, 6: 1, 7: 1, 8: 1}


def test_main_loop_windings(main_loop):
    want = {1: Fraction(1, 2), 3: Fraction(1, 2), 2: Fraction(-1, 2), 4: Fraction(-1, 2)}
    for p in main_loop.paths:
        if p.branch_id in want:
            w = tp.winding_number(p, tp.LEP2_REFERENCE)
            assert w.value == want[p.branch_id] and w.quantized
            assert abs(w.raw - float(want[p.branch_id])) <= 1e-4
            assert w.closure_m == 2
        elif p.branch_id >= 5:
            w = tp.winding_number(p, tp.LEP3_REFERENCE)
            assert w.value == 0 and abs(w.raw) <= 1e-4


def test_winding_laps_additive(main_loop):
    p = next(p for p in main_loop.paths if p.branch_id == 1)
    one = tp.winding_number(p, tp.LEP2_REFERENCE)
    two = tp.winding_number(p, tp.LEP2_REFERENCE, laps=2)
    assert two.value == one.value
    assert two.raw == pytest.approx(one.raw, abs=1e-12)


def test_orientation_reversal(main_loop):
    rev = tp.track_branches(tp.ParameterLoop(0.327, direction=-1))
    assert list(rev.permutation) == SWAP
    fwd = {p.branch_id: tp.winding_number(p, tp.LEP2_REFERENCE).value for p in main_loop.paths if 1 <= p.branch_id <= 4}
    back = {p.branch_id: tp.winding_number(p, tp.LEP2_REFERENCE).value for p in rev.paths if 1 <= p.branch_id <= 4}
    assert back == {j: -v for j, v in fwd.items()}


def test_conjugate_branch_pairs(main_loop):
    v = main_loop.values
    assert np.abs(v[:, 2] - v[:, 1].conj()).max() <= 1e-9
    assert np.abs(v[:, 4] - v[:, 3].conj()).max() <= 1e-9


@pytest.mark.parametrize("n", [64, 256])
def test_sample_count_stability(main_loop, n):
    tr = tp.track_branches(tp.ParameterLoop(0.327, samples=n))
    assert list(tr.permutation) == list(main_loop.permutation)
    for a, b in zip(tr.paths, main_loop.paths):
        ref = tp.LEP2_REFERENCE if 1 <= a.branch_id <= 4 else tp.LEP3_REFERENCE
        assert tp.winding_number(a, ref).value == tp.winding_number(b, ref).value


def test_small_loop_identity():
    tr = tp.track_branches(tp.ParameterLoop(0.1))
    assert list(tr.permutation) == list(range(9))
    for p in tr.paths[1:5]:
        assert tp.winding_number(p, tp.LEP2_REFERENCE).value == 0


@pytest.mark.slow
def test_r_scan_threshold():
    out = tp.r_scan(np.round(np.arange(0.20, 0.341, 0.02), 2))
    for r, perm in out:
        assert list(perm) == (SWAP if r > 0.25 else list(range(9))), r


def test_tracking_cost_gate():
    # two sectors crossing: distance alone cannot tell them apart, the gate can
    w0 = np.array([1.0, 1.0 + 1e-3])
    v = np.eye(2, dtype=complex)
    perm, *_ = tp._assign(w0, v, w0[::-1].copy(), v[:, ::-1].copy(), 1.0)
    assert list(perm) == [1, 0]


def test_singular_reference():
    path = tp.BranchPath(1, np.zeros(3), np.array([1.0, 1j, -1.0]), 1)
    with pytest.raises(tp.SingularReferenceError):
        tp.winding_number(path, 1j)


def test_non_quantized_warning():
    # one turn shared over a claimed closure of 7 laps gives 1/7
    k = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    path = tp.BranchPath(1, k, np.exp(1j * k), 7)
    with pytest.warns(tp.NonQuantizedWarning):
        w = tp.winding_number(path, 0.0)
    assert not w.quantized


def test_quantize():
    assert tp.quantize(0.5000004) == (Fraction(1, 2), True)
    assert tp.quantize(-0.33334) == (Fraction(-1, 3), True)
    assert tp.quantize(0.1)[1] is False


def test_char_poly_vs_faddeev_leverrier():
    for om, de in [(0.5, 0.3), (1.1, -0.4), (0.2, 0.05)]:
        p = model.SystemParams(om, de)
        ours = tp.char_poly(p)
        ref = -faddeev_leverrier(model.build_liouvillian(p))
        assert np.abs(ours - ref).max() <= 1e-10 * np.abs(ref).max()
        # lambda_0 = 0 kills the constant coefficient
        assert abs(ours[-1]) <= 1e-12
        lam = model.analytic_eigenvalues(p)
        assert np.abs(np.polyval(ours, lam)).max() <= 1e-10


def test_resultant_simple():
    assert tp.sylvester_resultant([1, -1], [1, 1]) == pytest.approx(2)
    # (x-1)^2 shares a root with its derivative
    assert abs(tp.sylvester_resultant([1, -2, 1], [2, -2])) <= 1e-14
    with pytest.raises(ValueError):
        tp.sylvester_matrix([0, 0], [1, 1])
    with pytest.raises(ValueError):
        tp.sylvester_matrix([3], [1, 1])


def test_resultant_random_cubics():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ra = rng.normal(size=3) + 1j * rng.normal(size=3)
        a = 2.0 * np.poly(ra)
        b = rng.normal(size=4) + 1j * rng.normal(size=4)
        ref = resultant_from_roots(ra, 2.0, b)
        assert tp.sylvester_resultant(a, b) == pytest.approx(ref, rel=1e-9)
        assert abs(ref) <= tp.coefficient_scale(a, b)


@pytest.mark.parametrize("om", [0.15, 0.4, 0.8])
def test_r1_vanishes_on_delta_zero(om):
    rv = tp.resultant_vector(model.SystemParams(om, 0.0))
    assert rv.rel1 <= 1e-6


def test_resultants_at_lep():
    rv = tp.resultant_vector(model.SystemParams(0.25, 0.0))
    # triple roots at -1/2 make P, P', P'' share a root
    assert rv.rel1 <= 1e-6 and rv.rel2 <= 1e-6


def test_r1_nonzero_generic_and_certified():
    rv = tp.resultant_vector(model.SystemParams(0.5, 0.3))
    assert rv.certified and rv.r1 != 0
    lam = model.analytic_eigenvalues(model.SystemParams(0.5, 0.3))
    # Res(P, P') = +- lc^(2n-1) prod_{i != j} (l_i - l_j)
    diffs = np.prod([lam[i] - lam[j] for i in range(9) for j in range(9) if i != j])
    assert abs(rv.r1) == pytest.approx(abs(diffs), rel=1e-6)


@pytest.mark.parametrize("om", [0.15, 0.5, 0.8])
def test_r1_dips_towards_delta_zero(om):
    rel = [tp.resultant_vector(model.SystemParams(om, d)).rel1 for d in (0.3, 1e-2, 1e-3, 0.0)]
    assert all(b < a for a, b in zip(rel, rel[1:]))
    # degenerate pairs split like Delta^2, so R1 falls by >= 6 decades over two decades of Delta
    assert np.log10(rel[0]) - np.log10(rel[2]) >= 6
    assert rel[-1] <= 1e-6


def test_homotopy_main_loop():
    h = tp.homotopy_invariant(tp.ParameterLoop(0.327))
    assert h.invariant == 0 and abs(h.raw) <= 1e-6


def test_homotopy_small_loop():
    assert tp.homotopy_invariant(tp.ParameterLoop(0.1)).invariant == 0


def test_homotopy_synthetic_circle():
    loop = tp.ParameterLoop(0.3, samples=64)
    h = tp.homotopy_invariant(loop, lambda k: tp.ResultantVector(np.cos(k), np.sin(k), 1.0, 1.0))
    assert h.invariant == 1


def test_homotopy_degeneracy_error():
    loop = tp.ParameterLoop(0.3, samples=32)
    with pytest.raises(tp.LoopDegeneracyError):
        tp.homotopy_invariant(loop, lambda k: tp.ResultantVector(0j, 0j, 1.0, 1.0))


def test_locate_lep2():
    lep = tp.locate_lep2()
    assert abs(lep.omega - 0.25) <= 1e-4 and abs(lep.delta) <= 1e-4
    assert lep.metric < eigen.DEFECT_THRESHOLD
    assert (1, 3) in lep.groups
    assert lep.eigenvalue == pytest.approx(-0.25, abs=1e-6)


def test_locate_lep3_not_at_half_kappa():
    om, spread = tp.locate_lep3()
    assert abs(om - 0.25) <= 1e-4 and spread <= 1e-4
    assert tp.lep3_spread(0.5) > 0.5
