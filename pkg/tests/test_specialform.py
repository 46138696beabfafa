"""Tests for quadrature, sampled functions, and special-form recovery."""

import math
from fractions import Fraction

import numpy as np
import pytest

from expandlab.errors import NumericalError, PreconditionError, QuadratureError
from expandlab.expr import FunctionSpec, compile_batch, const, parse, var
from expandlab.specialform import (
    SampledFunction1D,
    quadrature,
    reconstruction_residual,
    recover_bivariate,
    recover_trivariate,
)

# ---------------------------------------------------------------------------
# quadrature (oracle: analytic antiderivatives)
# ---------------------------------------------------------------------------


def test_quadrature_constant():
    assert quadrature(parse("1"), "s", 0, 1) == pytest.approx(1.0, abs=1e-12)


def test_quadrature_log():
    assert quadrature(parse("1/s"), "s", 1, 2) == pytest.approx(math.log(2), abs=1e-10)


def test_quadrature_arctan():
    assert quadrature(parse("1/(1 + s^2)"), "s", 0, 1) == pytest.approx(math.pi / 4, abs=1e-10)


def test_quadrature_rejects_sign_change():
    with pytest.raises(QuadratureError):
        quadrature(parse("s - 1/2"), "s", 0, 1)


def test_quadrature_rejects_singularity():
    with pytest.raises(QuadratureError):
        quadrature(parse("1/s"), "s", -1, 1)


def test_quadrature_rejects_extra_variables():
    with pytest.raises(ValueError):
        quadrature(parse("s + t"), "s", 0, 1)


def test_quadrature_empty_interval_and_order():
    assert quadrature(parse("s^2"), "s", 1, 1) == 0.0
    with pytest.raises(ValueError):
        quadrature(parse("s^2"), "s", 1, 0)


def test_quadrature_tolerance_tightening_never_hurts():
    cases = [
        (parse("1/s"), "s", 1.0, 2.0, math.log(2)),
        (parse("1/(1 + s^2)"), "s", 0.0, 1.0, math.pi / 4),
        (parse("exp(s)"), "s", 0.0, 1.0, math.e - 1.0),
    ]
    for e, v, a, b, truth in cases:
        errs = [abs(quadrature(e, v, a, b, tol=tol) - truth) for tol in (1e-6, 1e-8, 1e-10, 1e-12)]
        # allow a whisker of rounding noise at the tight end
        for coarse, fine in zip(errs, errs[1:]):
            assert fine <= coarse + 1e-13


# ---------------------------------------------------------------------------
# sampled functions
# ---------------------------------------------------------------------------


def test_sampled_function_interpolates_cubics_exactly():
    g = np.linspace(0, 2, 33)
    v = g**3 - g + 1
    sf = SampledFunction1D(g, v)
    xs = np.linspace(0, 2, 101)
    assert np.max(np.abs(sf(xs) - (xs**3 - xs + 1))) < 1e-12


def test_sampled_function_inverse_accuracy():
    g = np.linspace(0, 1.5, 65)
    sf = SampledFunction1D(g, g**3 + g)
    for y in (0.0, 0.7, 2.3, 4.8):
        x = sf.inverse_at(y)
        assert abs((x**3 + x) - y) < 1e-10


def test_sampled_function_inverse_requires_monotonicity():
    g = np.linspace(-1, 1, 33)
    sf = SampledFunction1D(g, g**2)
    assert not sf.is_strictly_monotone
    with pytest.raises(NumericalError):
        sf.inverse_at(0.5)


def test_sampled_function_validates_grid():
    with pytest.raises(ValueError):
        SampledFunction1D(np.array([0.0, 0.0, 1.0, 2.0]), np.zeros(4))


# ---------------------------------------------------------------------------
# trivariate recovery
# ---------------------------------------------------------------------------


def test_recover_trivariate_additive():
    f = FunctionSpec(parse("x + y + z"), ("x", "y", "z"), ((0, 1),) * 3)
    r = recover_trivariate(f, base=(0, 0, 0))
    assert r.success
    assert r.residual < 1e-10
    for name in ("H1", "H2", "H3"):
        # identity shifts: H_i(t) = t - base_i
        sf = r.components[name]
        assert np.max(np.abs(sf.values - sf.grid)) < 1e-10


def test_recover_trivariate_product():
    f = FunctionSpec(parse("x*y*z"), ("x", "y", "z"), ((1, 2),) * 3)
    r = recover_trivariate(f, base=(1, 1, 1))
    assert r.success
    assert r.residual < 1e-7
    h1 = r.components["H1"]
    # the inner components are logarithms in the base-point gauge
    assert max(abs(h1(t) - math.log(t)) for t in np.linspace(1, 2, 9)) < 1e-8


def test_recover_trivariate_exponential():
    f = FunctionSpec(parse("exp(x + y^2 + z^3)"), ("x", "y", "z"), ((0.5, 1.5),) * 3)
    r = recover_trivariate(f)
    assert r.success
    assert r.residual < 1e-6


def test_recover_trivariate_components_vanish_at_base():
    f = FunctionSpec(parse("x*y*z"), ("x", "y", "z"), ((1, 2),) * 3)
    r = recover_trivariate(f, base=(1.25, 1.5, 1.75))
    for i, name in enumerate(("H1", "H2", "H3")):
        assert abs(r.components[name](r.base[i])) < 1e-12


def test_recover_trivariate_rejects_expanding():
    f = FunctionSpec(parse("x*(y + z)"), ("x", "y", "z"), ((0.5, 1.5),) * 3)
    with pytest.raises(PreconditionError):
        recover_trivariate(f)


# ---------------------------------------------------------------------------
# bivariate recovery
# ---------------------------------------------------------------------------


def test_recover_bivariate_cubed_sum():
    f = FunctionSpec(parse("(x + y^2)^3"), ("x", "y"), ((0.5, 1.5),) * 2)
    r = recover_bivariate(f)
    assert r.success
    assert r.residual < 1e-6
    # h is x - x0 up to the shared gauge factor: check linearity
    h = r.components["h"]
    dev = np.diff(h.values) / np.diff(h.grid)
    assert np.max(np.abs(dev - dev[0])) < 1e-9


def test_recover_bivariate_additive():
    f = FunctionSpec(parse("x + y"), ("x", "y"), ((0, 1),) * 2)
    r = recover_bivariate(f)
    assert r.success
    assert r.residual < 1e-12


def test_recover_bivariate_rejects_expanding():
    f = FunctionSpec(parse("x^2 + x*y"), ("x", "y"), ((0.5, 1.5),) * 2)
    with pytest.raises(PreconditionError):
        recover_bivariate(f)


def _random_special_form(rng):
    """g(h(x)+k(y)) from monotone cubics h, k and a monotone quintic g whose
    second derivative keeps a sign on the attained range."""

    def monotone_cubic(v):
        p = Fraction(int(rng.integers(5, 15)), 10)
        q = Fraction(int(rng.integers(0, 10)), 10)
        s = Fraction(int(rng.integers(0, 10)), 10)
        t = var(v)
        return const(p) * t + const(q) * (t - const(s)) ** 3 / 3

    h = monotone_cubic("x")
    k = monotone_cubic("y")
    inner = h + k
    fn = compile_batch(inner, ("x", "y"))
    g = np.linspace(0, 1, 33)
    mx, my = np.meshgrid(g, g, indexing="ij")
    lo = float(fn(mx.ravel(), my.ravel()).min())
    p = Fraction(int(rng.integers(5, 15)), 10)
    a = Fraction(int(rng.integers(1, 5)), 10)
    s = Fraction(lo).limit_denominator(100) - Fraction(int(rng.integers(2, 10)), 10)
    expr = const(p) * inner + const(a) * (inner - const(s)) ** 5 / 5
    return FunctionSpec(expr, ("x", "y"), ((0.0, 1.0), (0.0, 1.0)))


def test_recover_bivariate_random_round_trips():
    rng = np.random.default_rng(202)
    for _ in range(5):
        f = _random_special_form(rng)
        r = recover_bivariate(f)
        assert r.residual < 1e-5


def test_recover_gauge_freedom():
    f = FunctionSpec(parse("(x + y^2)^3"), ("x", "y"), ((0.5, 1.5),) * 2)
    r = recover_bivariate(f)
    c = 2.0
    offsets = (0.3, -0.2)
    regauged = {
        "h": SampledFunction1D(r.components["h"].grid, c * r.components["h"].values + offsets[0]),
        "k": SampledFunction1D(r.components["k"].grid, c * r.components["k"].values + offsets[1]),
        "g": SampledFunction1D(
            c * r.components["g"].grid + sum(offsets), r.components["g"].values
        ),
    }
    residual = reconstruction_residual(f, regauged, 50)
    assert residual < max(r.residual, 1e-6)


def test_recovery_result_serializes():
    f = FunctionSpec(parse("x + y"), ("x", "y"), ((0, 1),) * 2)
    doc = recover_bivariate(f).to_json_dict()
    assert doc["verdict"] == "success"
    assert doc["components"] == ["g", "h", "k"]
    assert doc["kind"] == "bivariate"
