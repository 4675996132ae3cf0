import math

import numpy as np
import pytest

from hybridad import (
    EXP,
    ImplicitSystem,
    MaxIterExceeded,
    Pow,
    SingularJacobian,
    TapeBuilder,
    implicit_second_derivative,
    implicit_sensitivity,
    jet_apply,
    jet_derivative,
    jet_var,
    newton,
    newton_jet,
    warm_start_probe,
)


def sqrt_system() -> ImplicitSystem:
    b = TapeBuilder(2)
    x, a = b.input(0), b.input(1)
    return ImplicitSystem(b.build([b.sub(b.mul(x, x), a)]), 1, 1)


def exp_cubic_system() -> ImplicitSystem:
    # P(x, b) = e^x + x^3 - b
    b = TapeBuilder(2)
    x, bb = b.input(0), b.input(1)
    r = b.sub(b.add(b.apply(EXP, x), b.apply(Pow(3.0), x)), bb)
    return ImplicitSystem(b.build([r]), 1, 1)


def no_root_system() -> ImplicitSystem:
    b = TapeBuilder(2)
    x = b.input(0)
    b.input(1)
    return ImplicitSystem(b.build([b.add(b.mul(x, x), b.const(1.0))]), 1, 1)


def test_newton_sqrt_of_two():
    res = newton(sqrt_system(), [1.0], [2.0], tol=1e-12)
    assert res.root[0] == pytest.approx(1.41421356237, abs=1e-11)
    assert res.iterations <= 6


def test_newton_exp_cubic_at_one():
    res = newton(exp_cubic_system(), [0.5], [1.0], tol=1e-13)
    assert res.root[0] == pytest.approx(0.0, abs=1e-12)


def test_newton_no_real_root():
    with pytest.raises(MaxIterExceeded) as exc:
        newton(no_root_system(), [1.0], [0.0], tol=1e-12, max_iter=40)
    assert np.isfinite(exc.value.best).all()
    with pytest.raises(MaxIterExceeded):
        newton(no_root_system(), [0.7], [0.0], tol=1e-12, max_iter=40)


def test_residual_certificate():
    rng = np.random.default_rng(12)
    s = exp_cubic_system()
    for _ in range(20):
        b0 = float(rng.uniform(0.5, 5.0))
        x0 = float(rng.uniform(-0.5, 1.5))
        tol = 1e-10
        res = newton(s, [x0], [b0], tol=tol)
        scale = max(1.0, float(np.abs(s.residual([x0], [b0]))[0]))
        assert res.residual_norm <= 10.0 * tol * scale


def test_implicit_sensitivity_sqrt():
    s = sqrt_system()
    root = math.sqrt(1.5)
    ds = implicit_sensitivity(s, [root], [1.5])
    assert ds[0, 0] == pytest.approx(1.0 / (2.0 * root), rel=1e-13)


def test_implicit_sensitivity_exp_cubic():
    ds = implicit_sensitivity(exp_cubic_system(), [0.0], [1.0])
    assert ds[0, 0] == pytest.approx(1.0, rel=1e-13)


def test_implicit_sensitivity_singular():
    s = sqrt_system()
    with pytest.raises(SingularJacobian):
        implicit_sensitivity(s, [0.0], [0.0])


def test_second_derivative_nested_exact():
    s = sqrt_system()
    tight = newton(s, [1.00001], [1.5], tol=1e-14)
    d2 = implicit_second_derivative(s, tight.root, [1.5])
    assert d2 == pytest.approx(-0.1360827636, abs=1e-7)
    assert d2 == pytest.approx(-0.25 * 1.5 ** -1.5, rel=1e-12)


def test_second_derivative_through_loose_iteration():
    # differentiating through a tol=1e-4 production loop lands on the
    # slightly-off value such an implementation actually returns
    s = sqrt_system()
    loose = newton(s, [1.00001], [1.5], tol=1e-4)
    d2 = implicit_second_derivative(s, loose.root, [1.5])
    assert d2 == pytest.approx(-0.1360827546, abs=1e-7)


def test_sensitivity_matches_fd_of_tightly_solved_root():
    s = exp_cubic_system()
    for b0 in (1.0, 2.0, 4.0):
        root = newton(s, [0.5], [b0], tol=1e-14).root
        ds = implicit_sensitivity(s, root, [b0])[0, 0]
        h = 1e-6 * max(1.0, b0)
        up = newton(s, [root[0]], [b0 + h], tol=1e-14).root[0]
        dn = newton(s, [root[0]], [b0 - h], tol=1e-14).root[0]
        fd = (up - dn) / (2 * h)
        assert ds == pytest.approx(fd, rel=1e-7)


# -- Newton on series ----------------------------------------------------------

def test_newton_jet_three_iterations_reference_value():
    j = newton_jet(sqrt_system(), 2.0, 1.0, order=19, iterations=3)
    d19 = jet_derivative(j, 19)
    assert abs(d19 - 1.141438794e9) <= 1e3


def test_newton_jet_converged_value():
    j = newton_jet(sqrt_system(), 2.0, 1.0, order=19, iterations=6)
    d19 = jet_derivative(j, 19)
    assert abs(d19 - 1.140326912e9) <= 1e2


def test_newton_jet_order_one_reduces_to_implicit_sensitivity():
    s = sqrt_system()
    j = newton_jet(s, 2.0, 1.0, order=1, tol=1e-13)
    root = j.coeffs[0]
    ds = implicit_sensitivity(s, [root], [2.0])[0, 0]
    assert jet_derivative(j, 1) == pytest.approx(ds, abs=1e-12)


def test_newton_jet_doubling_property():
    # once the constant term has converged, i extra sweeps fix 2^i coeffs
    s = sqrt_system()
    exact = jet_apply(__import__("hybridad").SQRT, jet_var(2.0, 15))
    base = newton_jet(s, 2.0, 1.0, order=15, iterations=8)   # constant exact
    for i in (1, 2, 3):
        j = newton_jet(s, 2.0, math.sqrt(2.0), order=15, iterations=i)
        k_max = 2 ** i
        for k in range(min(k_max, 16)):
            assert j.coeffs[k] == pytest.approx(exact.coeffs[k], rel=1e-10), (i, k)
    assert np.allclose(base.coeffs, exact.coeffs, rtol=1e-12)


def test_newton_jet_default_margin_reaches_exact_series():
    s = sqrt_system()
    exact = jet_apply(__import__("hybridad").SQRT, jet_var(2.0, 19))
    j = newton_jet(s, 2.0, 1.0, order=19, tol=1e-12)
    assert np.allclose(j.coeffs, exact.coeffs, rtol=1e-11)


# -- warm-start hazard ----------------------------------------------------------

def test_warm_start_loose_tolerance_mostly_constant():
    grid = np.arange(0.1, 2.0 + 1e-12, 1e-3)
    rep = warm_start_probe(sqrt_system(), grid, tol=5e-2)
    assert rep.constant_fraction > 0.5


def test_warm_start_tight_tolerance_moves_everywhere():
    grid = np.arange(0.1, 2.0 + 1e-12, 1e-3)
    rep = warm_start_probe(sqrt_system(), grid, tol=1e-14)
    assert rep.constant_fraction <= 0.01


def test_warm_start_constant_residual_family():
    # residual independent of theta: the first root satisfies every solve
    b = TapeBuilder(2)
    x = b.input(0)
    b.input(1)
    s = ImplicitSystem(b.build([b.sub(b.mul(x, x), b.const(2.0))]), 1, 1)
    rep = warm_start_probe(s, np.linspace(0.0, 1.0, 101), tol=1e-10)
    assert rep.constant_fraction == 1.0
