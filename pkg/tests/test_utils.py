import numpy as np
import pytest

from flowconn.exceptions import ConfigError, UnknownSpecError
from flowconn.utils import load_key_value_file, parse_ladder, parse_spec, parse_vector, rows_to_csv


def test_parse_spec_with_vector_options():
    name, options = parse_spec("Loop:center=1;0;0, radius=0.1")
    assert name == "loop"
    assert options == {"center": "1;0;0", "radius": "0.1"}


def test_parse_spec_without_options():
    assert parse_spec("circle") == ("circle", {})


@pytest.mark.parametrize("text", ["", "   ", "sphere:n", "sphere:=3"])
def test_parse_spec_rejects_malformed(text):
    with pytest.raises(UnknownSpecError):
        parse_spec(text)


def test_parse_vector_separators():
    assert np.array_equal(parse_vector("1,0,0", "point"), [1.0, 0.0, 0.0])
    assert np.array_equal(parse_vector("1;0;-2.5", "point"), [1.0, 0.0, -2.5])


def test_parse_vector_names_the_field():
    with pytest.raises(ConfigError, match="point"):
        parse_vector("1,x,0", "point")


def test_parse_ladder_requires_positive_values():
    assert parse_ladder("0.04,0.02,0.01", "ladder") == [0.04, 0.02, 0.01]
    with pytest.raises(ConfigError):
        parse_ladder("0.04,-0.02", "ladder")


def test_load_key_value_file(tmp_path):
    path = tmp_path / "experiment.cfg"
    path.write_text("# sphere run\nmanifold = sphere:n=3\n\nq-source=analytic  # inline\n", encoding="utf-8")
    assert load_key_value_file(path) == {"manifold": "sphere:n=3", "q_source": "analytic"}


def test_load_key_value_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_key_value_file(tmp_path / "missing.cfg")
    path = tmp_path / "broken.cfg"
    path.write_text("manifold sphere\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_key_value_file(path)


def test_rows_to_csv_formats_cells():
    text = rows_to_csv(["i", "value", "pass"], [{"i": 1, "value": 0.1, "pass": True, "extra": 5}])
    assert text == "i,value,pass\n1,0.1,true\n"
