import numpy as np
import pytest

from flowconn.curves import (
    Curve,
    OneForm,
    geodesic_segment,
    increment_tangency,
    line_integral_matrix,
    line_integral_xdx,
    one_form_integral,
    sample_curve,
    tangent_loop,
    tensor_form_integral,
)
from flowconn.exceptions import CurveError, OneFormEvaluationError, UnknownSpecError


def test_quarter_circle_area_integral(quarter_circle):
    assert line_integral_xdx(quarter_circle, 0, 1) == pytest.approx(np.pi / 4, abs=1e-4)
    assert line_integral_xdx(quarter_circle, 1, 0) == pytest.approx(-np.pi / 4, abs=1e-4)
    assert line_integral_xdx(quarter_circle, 2, 0) == 0.0


def test_quadrature_error_is_second_order(sphere):
    errors = [
        abs(line_integral_xdx(sample_curve(sphere, "quarter-great-circle", N), 0, 1) - np.pi / 4)
        for N in (25, 50, 100, 200)
    ]
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine >= 3.5


def test_reversal_negates_exactly(quarter_circle):
    forward = line_integral_xdx(quarter_circle, 0, 1)
    assert line_integral_xdx(quarter_circle.reversed(), 0, 1) == -forward


def test_line_integral_matrix_matches_entries(quarter_circle):
    matrix = line_integral_matrix(quarter_circle)
    assert matrix[0, 1] == line_integral_xdx(quarter_circle, 0, 1)
    assert matrix.shape == (3, 3)


def test_index_out_of_range(quarter_circle):
    with pytest.raises(IndexError):
        line_integral_xdx(quarter_circle, 0, 3)


def test_great_circle_is_closed(sphere):
    c = sample_curve(sphere, "great-circle", 400)
    assert c.closed
    assert np.array_equal(c.nodes[0], c.nodes[-1])
    # shoelace area of the inscribed polygon
    assert line_integral_xdx(c, 0, 1) == pytest.approx(np.pi, abs=1e-3)


def test_single_node_curve():
    c = Curve(np.array([[1.0, 0.0, 0.0]]), np.array([0.0]))
    assert c.segments == 0
    assert line_integral_xdx(c, 0, 1) == 0.0


@pytest.mark.parametrize(
    "params",
    [[0.0, 0.7, 0.5, 1.0], [0.1, 0.4, 0.7, 1.0], [0.0, 0.3, 0.6, 0.9]],
)
def test_curve_rejects_bad_parameters(params):
    with pytest.raises(CurveError):
        Curve(np.zeros((4, 3)), np.array(params))


def test_closed_curve_must_close():
    nodes = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    with pytest.raises(CurveError):
        Curve.from_nodes(nodes, closed=True)


def test_curve_nodes_are_read_only(quarter_circle):
    with pytest.raises(ValueError):
        quarter_circle.nodes[0, 0] = 5.0


def test_exact_form_vanishes_on_loop(sphere):
    c = sample_curve(sphere, "loop:center=0;0;1,radius=0.3", 100)
    # d(x^0 x^1)
    omega = OneForm(lambda x: np.stack([x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1))
    assert abs(one_form_integral(c, omega)) < 1e-12


def test_one_form_failures(quarter_circle):
    def broken(x):
        raise RuntimeError("no value here")

    with pytest.raises(OneFormEvaluationError):
        one_form_integral(quarter_circle, broken)
    with pytest.raises(OneFormEvaluationError):
        one_form_integral(quarter_circle, lambda x: np.full_like(x, np.nan))
    with pytest.raises(OneFormEvaluationError):
        one_form_integral(quarter_circle, lambda x: x[..., :2])


def test_tensor_form_integral_of_area_tensor(quarter_circle):
    def area(x):
        tensor = np.zeros(x.shape[:-1] + (3, 3, 3))
        tensor[..., 0, 1, 1] = x[..., 0]
        return tensor

    values = tensor_form_integral(quarter_circle, area)
    assert values[0, 1] == pytest.approx(line_integral_xdx(quarter_circle, 0, 1), abs=1e-14)
    assert np.count_nonzero(values) == 1


def test_chords_of_great_circle_are_tangent_at_midpoints(sphere, quarter_circle):
    assert np.max(increment_tangency(sphere, quarter_circle)) < 1e-8


@pytest.mark.parametrize(
    "spec",
    [
        "quarter-great-circle",
        "arc:from=0.1,to=2.0",
        "loop:center=1;0;0,radius=0.1",
        "segment:from=1;0;0,to=0;0;1",
        "segment:from=1;0;0,to=0;0;1,via=chord",
    ],
)
def test_sampled_curves_lie_on_sphere(sphere, spec):
    c = sample_curve(sphere, spec, 50)
    assert c.segments == 50
    assert np.allclose(np.linalg.norm(c.nodes, axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("spec", ["meridian:phi=0.3", "parallel:theta=1.0"])
def test_torus_coordinate_loops(torus, spec):
    c = sample_curve(torus, spec, 80)
    assert c.closed
    assert np.max(torus.distance(c.nodes)) < 1e-12


def test_unknown_curves(sphere):
    with pytest.raises(UnknownSpecError):
        sample_curve(sphere, "spiral", 10)
    with pytest.raises(UnknownSpecError):
        sample_curve(sphere, "meridian:phi=0", 10)
    with pytest.raises(UnknownSpecError):
        sample_curve(sphere, "great-circle:tilt=1", 10)
    with pytest.raises(CurveError):
        sample_curve(sphere, "great-circle", 1)


def test_geodesic_segment_length(sphere):
    c = geodesic_segment(sphere, np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0]), 0.04, 100)
    assert np.allclose(c.nodes[-1], [np.cos(0.04), np.sin(0.04), 0.0])
    assert np.sum(np.linalg.norm(c.increments, axis=-1)) == pytest.approx(0.04, rel=1e-6)


def test_geodesic_segment_falls_back_to_retraction(torus):
    x = torus.point(0.0, 0.5)
    c = geodesic_segment(torus, x, np.array([0.0, 1.0, 0.0]), 0.05, 20)
    assert np.max(torus.distance(c.nodes)) < 1e-12
    assert np.allclose(c.nodes[0], x)


def test_tangent_loop_centered(sphere):
    center = np.array([0.0, 0.0, 1.0])
    c = tangent_loop(sphere, center, 0.1, 64)
    assert c.closed
    assert np.allclose(c.midpoints.mean(axis=0)[:2], 0.0, atol=1e-12)


def test_loop_needs_a_surface(circle):
    with pytest.raises(CurveError):
        tangent_loop(circle, np.array([1.0, 0.0]), 0.1, 16)
