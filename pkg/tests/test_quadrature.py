import math
import warnings

import pytest

from stablebatch.quadrature import adaptive_simpson


def test_polynomial_exact():
    assert adaptive_simpson(lambda x: x**3 - 2 * x, 0.0, 3.0) == pytest.approx(11.25, rel=1e-14)
    assert adaptive_simpson(lambda x: x**2, 0.0, 3.0) == pytest.approx(9.0, rel=1e-14)


def test_smooth_integrands():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, rel=1e-9)
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-9)


def test_near_singular_integrand():
    # 1/(1 - x) on [0, 0.999] = ln(1000)
    val = adaptive_simpson(lambda x: 1.0 / (1.0 - x), 0.0, 0.999, rel_tol=1e-10)
    assert val == pytest.approx(math.log(1000.0), rel=1e-8)


def test_reversed_and_empty_interval():
    assert adaptive_simpson(math.exp, 1.0, 0.0) == pytest.approx(-(math.e - 1), rel=1e-9)
    assert adaptive_simpson(math.exp, 1.0, 1.0) == 0.0


def test_cap_warns_once():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        adaptive_simpson(lambda x: abs(math.sin(1 / x)) if x else 0.0, 0.0, 1.0, rel_tol=1e-14, max_subdivisions=64)
    assert len(rec) == 1
