import json

import numpy as np
import pytest

from bunchlab.errors import DomainError, InputError
from bunchlab.utils.io_utils import (
    MatrixFile,
    load_gram_spec,
    load_json,
    load_matrix_file,
    parse_kappa,
    parse_matrix,
)


def test_matrix_file_without_imaginary_part():
    a = parse_matrix({"rows": 2, "cols": 2, "re": [1, 0, 0, 1]})
    np.testing.assert_array_equal(a, np.eye(2))
    assert a.dtype == np.complex128


def test_save_and_load_keep_exact_values(matrix_file, random_complex):
    a = random_complex(3)
    np.testing.assert_array_equal(load_matrix_file(matrix_file(a)), a)


@pytest.mark.parametrize("data", [
    {"rows": 2, "cols": 2, "re": [1, 2, 3]},
    {"rows": 1, "cols": 2, "re": [1, 2], "im": [0]},
    {"rows": 0, "cols": 2, "re": []},
    {"rows": 1, "cols": 1, "re": [1], "extra": True},
    {"rows": 1, "cols": 1, "re": [float("nan")]},
    {"cols": 1, "re": [1]},
])
def test_invalid_matrix_data(data):
    with pytest.raises(InputError):
        parse_matrix(data)


def test_load_json_errors(tmp_path):
    with pytest.raises(InputError):
        load_json(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(InputError):
        load_json(str(broken))


def test_load_gram_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"kind": "x_model", "n": 3, "x": 0.5}))
    assert load_gram_spec(str(path)).kind == "x_model"
    path.write_text(json.dumps({"kind": "x_model", "n": 3, "x": 1.5}))
    with pytest.raises(DomainError):
        load_gram_spec(str(path))


def test_matrix_file_from_array_shape():
    model = MatrixFile.from_array(np.ones((2, 3)))
    assert (model.rows, model.cols) == (2, 3)
    assert model.im == [0.0] * 6


@pytest.mark.parametrize("text, expected", [("1", [1]), ("1,2", [1, 2]), (" 3 , 5,", [3, 5])])
def test_parse_kappa(text, expected):
    assert parse_kappa(text) == expected


@pytest.mark.parametrize("text", ["", "one", "1;2"])
def test_parse_kappa_rejects(text):
    with pytest.raises(InputError):
        parse_kappa(text)
