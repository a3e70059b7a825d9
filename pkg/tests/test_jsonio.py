import json

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from stablebatch.jsonio import dumps, fmt_float, read_json, write_json


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(fmt_float(x)) == x


def test_integer_looking_floats_keep_a_point():
    assert fmt_float(3.0) == "3.0"
    assert fmt_float(1e20) == "1e+20"


def test_dumps_is_stable_and_parses(tmp_path):
    obj = {"b": [1.0, 2.5, np.float64(0.1)], "a": {"x": np.int64(3), "y": None, "z": True}}
    text = dumps(obj)
    assert text == dumps(obj)
    back = json.loads(text)
    assert back["b"] == [1.0, 2.5, 0.1] and back["a"] == {"x": 3, "y": None, "z": True}
    p = write_json(obj, tmp_path / "sub" / "o.json")
    assert read_json(p) == back
    assert p.read_bytes().endswith(b"\n")
