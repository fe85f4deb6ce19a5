"""Di-atomic Jensen tests, envelope estimators, certificates."""

import numpy as np
import pytest

from lowmach.jensen import (
    CERTIFIED,
    CONNECTED,
    INCONCLUSIVE,
    VIOLATED,
    EnvelopeBudgets,
    default_jensen_dictionary,
    diatomic_jensen_test,
    envelope_upper_laminate,
    envelope_upper_planewave,
    evaluate_certificate,
    jensen_report,
    profile_values,
    segment_convexity_jensen,
)
from lowmach.measures import (
    AtomicMeasure,
    SpacetimeGrid,
    TestDictionary,
    TestFunction,
    YoungMeasure,
)
from lowmach.operator import RelaxedEulerOperator
from lowmach.states import AugmentedState, lift_augmented


@pytest.fixture(scope="module")
def op2():
    return RelaxedEulerOperator(2)


def lifted_vec(u, P):
    return lift_augmented(AugmentedState(np.asarray(u, float), P)).to_vector()


def diatomic_measure(u1, P1, u2, P2, grid=None, lam=0.5):
    grid = grid or SpacetimeGrid(1, 1, 2, T=1.0)
    pts = np.array([lifted_vec(u1, P1), lifted_vec(u2, P2)])
    nu = AtomicMeasure(np.array([lam, 1.0 - lam]), pts)
    return YoungMeasure.constant(grid, nu)


def up_measure(atoms, weights=None, grid=None):
    """Measure over (u, P) states from a list of (u1, u2, P) rows."""
    grid = grid or SpacetimeGrid(1, 1, 2, T=1.0)
    pts = np.asarray(atoms, dtype=float)
    w = np.full(len(pts), 1.0 / len(pts)) if weights is None else np.asarray(weights)
    return YoungMeasure.constant(grid, AtomicMeasure(w, pts))


# -- exact di-atomic test ----------------------------------------------------


def test_diatomic_equal_velocities_connected():
    mu = diatomic_measure([1.0, 2.0], 0.5, [1.0, 2.0], -0.5)
    report = diatomic_jensen_test(mu)
    assert all(s == CONNECTED for s in report.statuses.flat)
    assert report.violated_fraction == 0.0


def test_diatomic_pressure_free_connected():
    mu = diatomic_measure([1.0, 0.0], 0.0, [0.0, 1.0], 0.0)
    report = diatomic_jensen_test(mu)
    assert all(s == CONNECTED for s in report.statuses.flat)


def test_diatomic_violated_fixture():
    mu = diatomic_measure([1.0, 0.0], 1.0, [0.0, 0.0], 0.0)
    report = diatomic_jensen_test(mu)
    assert all(s == VIOLATED for s in report.statuses.flat)
    assert report.violated_fraction == 1.0
    assert report.violated_measure == pytest.approx(mu.grid.T)


def test_diatomic_rejects_bad_input():
    grid = SpacetimeGrid(1, 1, 2, T=1.0)
    three = AtomicMeasure(
        np.array([0.4, 0.3, 0.3]),
        np.array([lifted_vec([0, 0], 0), lifted_vec([1, 0], 0), lifted_vec([0, 1], 0)]),
    )
    with pytest.raises(ValueError):
        diatomic_jensen_test(YoungMeasure.constant(grid, three))
    not_lifted = AtomicMeasure(np.array([1.0]), np.array([[2.0, 0, 0, 0, 0, 0]]))
    with pytest.raises(ValueError):
        diatomic_jensen_test(YoungMeasure.constant(grid, not_lifted))


def test_diatomic_merged_single_atom_connected():
    mu = diatomic_measure([1.0, 0.0], 1.0, [1.0, 0.0], 1.0)  # atoms merge
    report = diatomic_jensen_test(mu)
    assert all(s == CONNECTED for s in report.statuses.flat)


# -- laminate estimator ------------------------------------------------------


def test_laminate_convex_function_no_split(op2):
    f = lambda pts: (pts**2).sum(axis=1)
    z = np.array([1.0, 0.5, -0.5, 0.2, 0.1, 2.0])
    est = envelope_upper_laminate(f, z, depth=2, q=1.0, trials=2, op=op2)
    assert est.value == pytest.approx(f(z[None, :])[0], rel=1e-9)
    assert est.value <= f(z[None, :])[0] + 1e-12


def test_laminate_quadratic_benchmark(op2):
    # f = -(kernel coordinate)^2: a depth-1 split of +-q along the kernel
    # direction gives exactly f(z) - q^2
    v = op2.kernel(np.array([1.0, 1.0, 0.5]))[0]
    z = np.zeros(6)
    f = lambda pts, _v=v: -((pts - z[None, :]) @ _v) ** 2
    q = 0.7
    est = envelope_upper_laminate(f, z, depth=1, q=q, trials=1, op=op2, directions=[v])
    assert est.value == pytest.approx(-(q**2), rel=1e-10)


def test_laminate_depth_monotone(op2):
    rng = np.random.default_rng(0)
    z = rng.normal(size=6)
    f = lambda pts: np.cos((pts**2).sum(axis=1)) - 0.3 * pts[:, 1] ** 2
    vals = [
        envelope_upper_laminate(f, z, depth=d, q=1.5, trials=2, op=op2, seed=3).value
        for d in (1, 2, 3)
    ]
    assert vals[1] <= vals[0] + 1e-12
    assert vals[2] <= vals[1] + 1e-12


def test_laminate_q_monotone(op2):
    v = op2.kernel(np.array([0.3, 1.0, -0.2]))[1]
    f = lambda pts: -np.abs(pts @ v) - 0.1 * np.sin(3.0 * pts @ v)
    z = np.full(6, 0.2)
    vals = [
        envelope_upper_laminate(
            f, z, depth=1, q=q, trials=1, op=op2, directions=[v]
        ).value
        for q in (0.5, 1.0, 2.0)
    ]
    assert vals[1] <= vals[0] + 1e-12
    assert vals[2] <= vals[1] + 1e-12


def test_laminate_certificate_reevaluates(op2):
    rng = np.random.default_rng(1)
    for seed in range(3):
        z = rng.normal(size=6)
        f = lambda pts: -(pts[:, 1] ** 2) * np.exp(-0.1 * (pts**2).sum(axis=1))
        est = envelope_upper_laminate(f, z, depth=2, q=1.0, trials=2, op=op2, seed=seed)
        re_val = evaluate_certificate(est.certificate, f)
        assert re_val == pytest.approx(est.value, rel=1e-6)
        # barycenter of the leaves equals the root state
        bary = sum(
            leaf["weight"] * np.array(leaf["state"])
            for leaf in est.certificate["leaves"]
        )
        assert np.allclose(bary, z, atol=1e-9)


def test_laminate_rejects_non_cone_direction(op2):
    # differences of lifted states with distinct velocities AND pressures
    # are outside the wave cone (nonzero determinant)
    bad = lifted_vec([1.0, 0.0], 1.0) - lifted_vec([0.0, 0.0], 0.0)
    assert not op2.wave_cone_membership(bad, tol=1e-6).member
    f = lambda pts: pts[:, 0]
    with pytest.raises(ValueError):
        envelope_upper_laminate(f, np.zeros(6), directions=[bad], op=op2)


# -- plane-wave estimator ----------------------------------------------------


def test_planewave_linear_function(op2):
    rng = np.random.default_rng(2)
    c = rng.normal(size=6)
    f = lambda pts: pts @ c + 1.0
    z = rng.normal(size=6)
    est = envelope_upper_planewave(f, z, modes=1, q=1.0, trials=3, op=op2)
    assert est.value == pytest.approx(f(z[None, :])[0], rel=1e-10)


def test_planewave_never_exceeds_f(op2):
    rng = np.random.default_rng(3)
    for seed in range(3):
        z = rng.normal(size=6)
        f = lambda pts: np.sin(pts[:, 2]) + (pts[:, 4] - 1.0) ** 2
        est = envelope_upper_planewave(f, z, modes=2, q=1.0, trials=2, op=op2, seed=seed)
        assert est.value <= f(z[None, :])[0] + 1e-12


def test_planewave_quadratic_benchmark_agreement(op2):
    # depth-1 laminate reaches f(z) - q^2; the plane-wave bound with the
    # steep smoothed-square profile must come within 5%
    k = np.array([1.0, 1.0, 0.0])
    v = op2.kernel(k)[0]
    z = np.zeros(6)
    f = lambda pts, _v=v: -(pts @ _v) ** 2
    q = 1.0
    lam = envelope_upper_laminate(f, z, depth=1, q=q, trials=1, op=op2, directions=[v])
    pw = envelope_upper_planewave(
        f, z, q=q, quad_points=256, trials=8, op=op2, modes_spec=[(k, v)]
    )
    assert lam.value == pytest.approx(-(q**2), rel=1e-10)
    assert abs(pw.value - lam.value) <= 0.05 * abs(lam.value)
    assert pw.value >= lam.value - 1e-9  # laminate is the sharper bound here


def test_planewave_q_monotone(op2):
    k = np.array([0.0, 1.0, 1.0])
    v = op2.kernel(k)[0]
    f = lambda pts: -((pts @ v) ** 2) + 0.3 * np.sin(pts @ v)
    z = np.zeros(6)
    vals = [
        envelope_upper_planewave(
            f, z, q=q, quad_points=64, trials=2, op=op2, modes_spec=[(k, v)]
        ).value
        for q in (0.5, 1.0, 2.0)
    ]
    assert vals[1] <= vals[0] + 1e-12
    assert vals[2] <= vals[1] + 1e-12


def test_planewave_certificate_reevaluates(op2):
    k = np.array([1.0, 0.0, 2.0])
    v = op2.kernel(k)[2]
    f = lambda pts: -((pts @ v) ** 2)
    est = envelope_upper_planewave(
        f, np.zeros(6), q=1.0, quad_points=32, trials=4, op=op2, modes_spec=[(k, v)]
    )
    re_val = evaluate_certificate(est.certificate, f)
    assert re_val == pytest.approx(est.value, rel=1e-6)


def test_profiles_are_mean_zero_unit_sup():
    s = (np.arange(4096) + 0.5) / 4096
    for kind, tau in (("sin", 0.0), ("tanh_square", 0.3), ("tanh_square", 0.05)):
        p = profile_values(kind, tau, s)
        assert abs(p.mean()) < 1e-14
        assert np.abs(p).max() <= 1.0 + 1e-12


# -- segment convexity -------------------------------------------------------


def test_segment_convexity_affine(op2):
    v = op2.kernel(np.array([1.0, 0.5, 0.5]))[0]
    z1 = np.zeros(6)
    z2 = z1 + 1.3 * v
    c = np.arange(1.0, 7.0)
    f = lambda pts: pts @ c - 2.0
    assert segment_convexity_jensen(f, z1, z2, lam=0.3, op=op2)


def test_segment_convexity_convex(op2):
    v = op2.kernel(np.array([1.0, 0.5, 0.5]))[1]
    z1, z2 = np.zeros(6), 2.0 * v
    f = lambda pts: (pts**2).sum(axis=1)
    assert segment_convexity_jensen(f, z1, z2, lam=0.5, op=op2)


def test_segment_convexity_double_well(op2):
    # f along the segment is s^2 (1-s)^2; the hull at 1/2 is 0 and the
    # endpoint combination is 0, so the inequality holds with equality
    v = op2.kernel(np.array([0.0, 1.0, 0.0]))[0]
    z1, z2 = np.zeros(6), v.copy()

    def f(pts):
        s = pts @ v / (v @ v)
        return s**2 * (1.0 - s) ** 2

    assert segment_convexity_jensen(f, z1, z2, lam=0.5, op=op2)


def test_segment_convexity_rejects_disconnected(op2):
    z1 = lifted_vec([1.0, 0.0], 1.0)
    z2 = lifted_vec([0.0, 0.0], 0.0)
    f = lambda pts: pts[:, 0]
    with pytest.raises(ValueError):
        segment_convexity_jensen(f, z1, z2, lam=0.5, op=op2)


# -- per-cell report ---------------------------------------------------------


def test_jensen_report_atomic_certified(op2):
    mu = up_measure([[0.5, -0.5, 1.2]])
    report = jensen_report(mu, op=op2)
    assert all(c.status == CERTIFIED for c in report.cells.flat)
    assert report.violated_fraction == 0.0


def test_jensen_report_diatomic_violated(op2):
    mu = up_measure([[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    report = jensen_report(mu, op=op2)
    assert all(c.status == VIOLATED for c in report.cells.flat)
    assert report.violated_fraction == 1.0
    witness = next(iter(report.cells.flat)).witness
    # atom canonicalization may swap the two states, flipping the sign
    assert abs(witness["det"]) == pytest.approx(1.0, rel=1e-10)


def test_jensen_report_diatomic_equal_pressure_not_violated(op2):
    mu = up_measure([[1.0, 0.0, 0.7], [0.0, 1.0, 0.7]])
    report = jensen_report(mu, op=op2)
    assert all(c.status == CERTIFIED for c in report.cells.flat)


def test_jensen_report_multiatom_linear_dictionary_certifies(op2):
    # with coordinate (linear) test functions the upper bound at the
    # barycenter equals the pairing, so the cell certifies
    dictionary = TestDictionary.coordinates(6)
    # relabel entries as functions on lifted states directly
    mu = up_measure([[0.3, 0.0, 0.1], [0.0, 0.2, -0.1], [0.1, 0.1, 0.0]])
    report = jensen_report(mu, dictionary=dictionary, op=op2, budgets=EnvelopeBudgets(trials=1))
    assert all(c.status == CERTIFIED for c in report.cells.flat)


def test_jensen_report_inconclusive_has_witness(op2):
    # a concave test function makes the pairing fall below the barycenter
    # bound: the report must refuse to certify without claiming violation
    concave = TestDictionary(
        [TestFunction("neg_norm_sq", lambda pts: -(np.atleast_2d(pts) ** 2).sum(axis=1), np.inf, np.inf)]
    )
    mu = up_measure([[1.0, 0.0, 0.5], [-1.0, 0.0, 0.5], [0.0, 1.0, -1.0]])
    report = jensen_report(mu, dictionary=concave, op=op2, budgets=EnvelopeBudgets(trials=1))
    statuses = {c.status for c in report.cells.flat}
    assert statuses <= {INCONCLUSIVE, CERTIFIED}
    for c in report.cells.flat:
        if c.status == INCONCLUSIVE:
            assert c.witness["test_function"] == "neg_norm_sq"
            assert c.witness["gap"] > 0


def test_jensen_report_rejects_empty_dictionary(op2):
    mu = up_measure([[0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        jensen_report(mu, dictionary=TestDictionary([]), op=op2)


def test_jensen_report_json(op2):
    mu = up_measure([[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    doc = jensen_report(mu, op=op2).to_json_dict()
    assert doc["violated_fraction"] == 1.0
    assert doc["cells"][0]["status"] == VIOLATED


def test_default_dictionary_shape():
    d = default_jensen_dictionary()
    names = [e.name for e in d]
    assert "det_derived" in names and "norm_sq" in names
    assert len(names) == 6 + 21 + 1 + 1
