import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dppairwise.report import REPORT_KEYS, dumps, make_report


def test_seventeen_digits():
    text = dumps({"a": 0.1, "b": 1.0, "c": 1e-20, "d": 2})
    assert '"a": 0.10000000000000001' in text
    assert '"b": 1.0' in text and '"c": 9.9999999999999995e-21' in text and '"d": 2' in text


def test_nonfinite_to_null():
    assert json.loads(dumps([math.nan, math.inf, 1.5])) == [None, None, 1.5]


def test_numpy_values():
    obj = {"v": np.array([0.5, 0.25]), "i": np.int64(3), "b": np.bool_(True), "m": np.eye(2)}
    assert json.loads(dumps(obj)) == {"v": [0.5, 0.25], "i": 3, "b": True, "m": [[1.0, 0.0], [0.0, 1.0]]}


def test_unknown_type():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_report_keys():
    assert tuple(make_report({}, [])) == REPORT_KEYS


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert json.loads(dumps([x]))[0] == x
