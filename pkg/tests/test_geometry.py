import numpy as np
import pytest
from scipy.optimize import minimize

from flowconn.curves import sample_curve
from flowconn.estimators import verify_theorem
from flowconn.exceptions import CaptureRadiusError, ConfigError, PointOffManifoldError, UnknownSpecError
from flowconn.geometry import (
    Sphere,
    check_identities,
    christoffel,
    drift_r,
    parse_manifold,
    projection_at,
    q_via_remark,
    random_points,
    retract,
    retract_points,
    s_tensor,
    tangent_basis,
)

E1 = np.array([1.0, 0.0, 0.0])


def test_sphere_projection_at_pole(sphere):
    assert np.allclose(projection_at(sphere, E1), np.diag([0.0, 1.0, 1.0]), atol=1e-15)


def test_sphere_closed_forms(sphere, rng):
    for x in random_points(sphere, 5, rng):
        P = projection_at(sphere, x)
        expected_s = -np.einsum("j,il->ijl", x, P)
        expected_gamma = np.einsum("i,jl->ijl", x, P) - np.einsum("j,il->ijl", x, P)
        assert np.allclose(s_tensor(sphere, x), expected_s, atol=1e-12)
        assert np.allclose(drift_r(sphere, x), -x, atol=1e-12)
        assert np.allclose(christoffel(sphere, x).values, expected_gamma, atol=1e-12)
        assert np.allclose(q_via_remark(sphere, x), drift_r(sphere, x), atol=1e-12)


def test_drift_scales_with_sphere_dimension():
    m = Sphere(5)
    x = np.zeros(5)
    x[2] = 1.0
    assert np.allclose(drift_r(m, x), -2.0 * x, atol=1e-12)


def test_circle_drift(circle):
    assert np.allclose(drift_r(circle, [1.0, 0.0]), [-0.5, 0.0], atol=1e-15)


def test_plane_is_flat(plane):
    x = np.array([0.3, -1.2, 0.0])
    assert np.allclose(projection_at(plane, x), np.diag([1.0, 1.0, 0.0]))
    assert not np.any(s_tensor(plane, x))
    assert not np.any(christoffel(plane, x).values)
    assert christoffel(plane, x).nonzero() == []


def test_christoffel_nonzero_entries(sphere):
    entries = christoffel(sphere, E1).nonzero()
    assert (0, 1, 1, 1.0) in entries
    assert (1, 0, 1, -1.0) in entries


def test_christoffel_contract(sphere):
    contracted = christoffel(sphere, E1).contract([0.0, 1.0, 0.0])
    assert contracted[0, 1] == pytest.approx(1.0)
    assert contracted[1, 0] == pytest.approx(-1.0)


@pytest.mark.parametrize("name", ["sphere", "torus"])
def test_identity_suite_analytic(name, request, rng):
    m = request.getfixturevalue(name)
    report = check_identities(m, random_points(m, 1000, rng))
    for identity, (violation, _) in report.items():
        assert violation < 1e-9, identity


def test_identity_suite_finite_differences(ellipsoid, rng):
    assert ellipsoid.derivative == "fd"
    report = check_identities(ellipsoid, random_points(ellipsoid, 200, rng))
    for identity, (violation, _) in report.items():
        assert violation < 1e-5, identity


def test_retraction_extension_uses_finite_differences(rng):
    m = Sphere(3, extension="retraction")
    assert m.derivative == "fd"
    report = check_identities(m, random_points(m, 100, rng))
    assert max(violation for violation, _ in report.values()) < 1e-5


@pytest.mark.parametrize("spec", ["sphere:n=3", "torus:R=2,r=1"])
def test_tangent_contraction_ignores_extension(spec, rng):
    canonical = parse_manifold(spec)
    retracted = parse_manifold(spec + ",extension=retraction")
    for x in random_points(canonical, 50, rng):
        for v in tangent_basis(canonical, x):
            expected = christoffel(canonical, x).contract(v)
            assert np.allclose(christoffel(retracted, x).contract(v), expected, atol=1e-5)


def test_theorem_rhs_ignores_extension():
    reports = [
        verify_theorem(m, sample_curve(m, "quarter-great-circle", 200))
        for m in (Sphere(3), Sphere(3, extension="retraction"))
    ]
    for canonical, retracted in zip(reports[0].entries, reports[1].entries):
        assert retracted.rhs == pytest.approx(canonical.rhs, abs=1e-5)


def test_finite_differences_match_analytic(torus, rng):
    fd = parse_manifold("torus:R=2,r=1,derivative=fd")
    points = random_points(torus, 20, rng)
    assert np.allclose(fd.projection_derivative(points), torus.projection_derivative(points), atol=1e-8)


def test_off_manifold_point_rejected(sphere):
    with pytest.raises(PointOffManifoldError):
        s_tensor(sphere, [2.0, 0.0, 0.0])


def test_wrong_dimension_rejected(sphere):
    with pytest.raises(ValueError):
        drift_r(sphere, [1.0, 0.0])


def test_retraction_capture_radius(sphere):
    assert np.allclose(retract(sphere, [1.5, 0.0, 0.0]), E1)
    with pytest.raises(CaptureRadiusError):
        retract(sphere, [3.0, 0.0, 0.0])
    with pytest.raises(CaptureRadiusError):
        retract_points(sphere, np.zeros((1, 3)))


@pytest.mark.parametrize("name", ["sphere", "torus", "ellipsoid", "plane"])
def test_retraction_fixes_manifold_points(name, request, rng):
    m = request.getfixturevalue(name)
    for x in random_points(m, 10, rng):
        assert np.allclose(retract(m, x), x, atol=1e-12)


def test_torus_retraction_undoes_normal_offset(torus, rng):
    for x in random_points(torus, 10, rng):
        normal = torus.foot(x) - torus.R * np.append(x[:2] / np.hypot(x[0], x[1]), 0.0)
        normal /= np.linalg.norm(normal)
        shifted = x + 1e-3 * normal
        assert torus.distance(retract(torus, shifted)) < 1e-12
        assert np.linalg.norm(retract(torus, shifted) - x) < 1e-12


def test_torus_foot_is_nearest_point(torus, rng):
    surface = random_points(torus, 5, rng)
    normals = rng.standard_normal((5, 3)) * 0.2
    for x in surface + normals:
        foot = torus.foot(x)

        def gap(angles):
            return np.sum((torus.point(angles[0], angles[1]) - x) ** 2)

        phi = np.arctan2(foot[1], foot[0])
        theta = np.arctan2(foot[2], np.hypot(foot[0], foot[1]) - torus.R)
        best = minimize(gap, x0=[phi + 0.05, theta - 0.05], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        assert np.linalg.norm(foot - x) <= np.sqrt(best.fun) + 1e-6


def test_ellipsoid_foot_lies_on_surface(ellipsoid, rng):
    x = random_points(ellipsoid, 50, rng) * 1.05
    foot = ellipsoid.foot(x)
    assert np.allclose(np.sum((foot / ellipsoid.axes) ** 2, axis=-1), 1.0, atol=1e-10)


def test_tangent_basis_is_orthonormal(sphere):
    basis = tangent_basis(sphere, E1)
    assert np.allclose(basis, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(basis @ basis.T, np.eye(2))


@pytest.mark.parametrize(
    "spec, spec_out",
    [
        ("sphere:n=3", "sphere:n=3"),
        ("Sphere:n=4", "sphere:n=4"),
        ("circle", "circle"),
        ("plane:n=4,k=2", "plane:n=4,k=2"),
        ("torus:R=3,r=0.5", "torus:R=3,r=0.5"),
        ("ellipsoid:a=1,b=2,c=3", "ellipsoid:a=1,b=2,c=3"),
    ],
)
def test_parse_manifold(spec, spec_out):
    assert parse_manifold(spec).spec == spec_out


@pytest.mark.parametrize("spec", ["cube", "sphere:n=3,radius=2", "torus:R=2,r=oops", "sphere:n"])
def test_parse_manifold_rejects_bad_specs(spec):
    with pytest.raises((UnknownSpecError, ConfigError)):
        parse_manifold(spec)


def test_invalid_dimensions():
    with pytest.raises(ConfigError):
        Sphere(1)
    with pytest.raises(ConfigError):
        parse_manifold("torus:R=1,r=2")
