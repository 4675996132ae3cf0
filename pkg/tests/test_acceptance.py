"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every tolerance is pinned here, straight from the statement being tested;
nothing is deferred to later calibration.  Reference values are either
analytic closed forms re-derived in the corresponding unit-test oracles or
ten-digit worksheet constants cross-checked against those closed forms.

Criterion 11 carries two sub-checks that double-precision arithmetic
cannot meet (see notes in the sequence-probe test below); they are
asserted as stated and expected to show FAIL.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import random_tape
from hybridad import (
    ImpactSurface,
    SimConfig,
    TapeBuilder,
    agdm_diff,
    compare_report,
    dde_extend,
    finite_difference,
    flatten,
    forward_gradient,
    hessian,
    impact_update,
    integrate,
    jet_derivative,
    newton,
    newton_jet,
    op_count,
    parse_diagram,
    parse_expr,
    reverse_gradient,
    sensitivity_extend,
    sequence_probe,
    tape_eval,
    warm_start_probe,
)
from hybridad.cli import optimize_scalar, step_map_derivatives
from hybridad.sim import DelaySlot, make_ode_model
from hybridad.solvers import ImplicitSystem, implicit_second_derivative

MODELS = os.path.join(os.path.dirname(__file__), "..", "models")


def _report(num, desc, checks):
    ok = all(passed for _, passed, _ in checks)
    print(f"\ncriterion {num:2d} [{'PASS' if ok else 'FAIL'}] {desc}")
    for name, passed, detail in checks:
        print(f"    {'ok  ' if passed else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} failed: " + "; ".join(
        n for n, p, _ in checks if not p)


def _model(name):
    with open(os.path.join(MODELS, name)) as fh:
        return parse_diagram(fh.read())


def _sqrt_system():
    b = TapeBuilder(2)
    x, a = b.input(0), b.input(1)
    return ImplicitSystem(b.build([b.sub(b.mul(x, x), a)]), 1, 1)


def _sig6(x):
    return float(f"{x:.6g}")


def test_criterion_01_integrator_jet_table():
    t0 = time.monotonic()
    rk4 = step_map_derivatives("rk4", 8)
    mid = step_map_derivatives("midpoint", 8)
    elapsed = time.monotonic() - t0
    rk4_ref = [-1.0, 2.0, -6.0, 24.0, -115.0, 600.0, -3438.75, 19530.0]
    mid_ref = [-1.0, 2.0, -1.5, 0.0, 0.0, 0.0, 0.0, 0.0]
    rk4_ok = all(_sig6(a) == _sig6(b) for a, b in zip(rk4, rk4_ref))
    mid_ok = mid[:3] == pytest.approx(mid_ref[:3]) and all(v == 0.0 for v in mid[3:])
    _report(1, "integrator one-step map as a jet (orders 1-8)", [
        ("RK4 row to 6 significant digits", rk4_ok, f"{[_sig6(v) for v in rk4]}"),
        ("midpoint row with exact zeros", mid_ok, f"{mid}"),
        ("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s"),
    ])


def test_criterion_02_newton_sqrt_second_derivative():
    s = _sqrt_system()
    tight = newton(s, [1.00001], [1.5], tol=1e-14)
    d2_exact = implicit_second_derivative(s, tight.root, [1.5])
    loose = newton(s, [1.00001], [1.5], tol=1e-4)
    d2_loose = implicit_second_derivative(s, loose.root, [1.5])
    _report(2, "nested implicit second derivative of sqrt at a=1.5", [
        ("converged root: -0.1360827636 +- 1e-7",
         abs(d2_exact - (-0.1360827636)) <= 1e-7, f"{d2_exact:.10f}"),
        ("through the tol=1e-4 iteration: -0.1360827546 +- 1e-7",
         abs(d2_loose - (-0.1360827546)) <= 1e-7, f"{d2_loose:.10f}"),
    ])


def test_criterion_03_newton_on_jets():
    s = _sqrt_system()
    j3 = newton_jet(s, 2.0, 1.0, order=19, iterations=3)
    d3 = jet_derivative(j3, 19)
    j6 = newton_jet(s, 2.0, 1.0, order=19, iterations=6)
    d6 = jet_derivative(j6, 19)
    _report(3, "19th derivative of sqrt(a) at a=2 by Newton on series", [
        ("exactly 3 iterations: 1.141438794e9 +- 1e3",
         abs(d3 - 1.141438794e9) <= 1e3, f"{d3:.10e}"),
        (">=5 iterations: 1.140326912e9 +- 1e2",
         abs(d6 - 1.140326912e9) <= 1e2, f"{d6:.10e}"),
    ])


def test_criterion_04_first_order_sensitivity():
    d = _model("first_order.json")
    c = SimConfig(step=1e-3, tf=5.0, method="rk4")
    k, tau = 1.0, 0.5
    # reference: d/dtau of the closed-form response k(1 - e^{-t/tau}),
    # i.e. -k t e^{-t/tau}/tau^2 (the Laplace-domain derivative
    # -ks/(1+tau s)^2 inverted on a unit step gives the same signal)
    tr_a = integrate(flatten(agdm_diff(d, "tau")), c)
    t = tr_a.times
    ref = -k * t * np.exp(-t / tau) / tau ** 2
    err_a = float(np.max(np.abs(tr_a.output("dy/dtau") - ref)))
    tr_s = integrate(sensitivity_extend(flatten(d), "tau"), c)
    err_s = float(np.max(np.abs(tr_s.output("dy/dtau") - ref)))
    _report(4, "first-order model sensitivity in the time constant", [
        ("graphic route max abs error <= 1e-5", err_a <= 1e-5, f"{err_a:.3e}"),
        ("sensitivity-ODE route max abs error <= 1e-5", err_s <= 1e-5, f"{err_s:.3e}"),
    ])


def test_criterion_05_second_order_optimization():
    t0 = time.monotonic()
    d = _model("second_order_cost.json")
    target = 0.7071067811865475
    res_ad = optimize_scalar(d, "zeta", "integrand",
                             SimConfig(step=0.005, tf=10.0), theta0=0.1,
                             jacobian="ad")
    res_fd = optimize_scalar(d, "zeta", "integrand",
                             SimConfig(step=0.005, tf=10.0), theta0=0.1,
                             jacobian="fd", decimate=0.5)
    res_ad_dec = optimize_scalar(d, "zeta", "integrand",
                                 SimConfig(step=0.005, tf=10.0), theta0=0.1,
                                 jacobian="ad", decimate=0.5)
    elapsed = time.monotonic() - t0
    _report(5, "damping optimization of the second-order cost", [
        ("AD jacobian, step 0.005: |zeta - sqrt(2)/2| <= 5e-3",
         abs(res_ad["theta_opt"] - target) <= 5e-3,
         f"zeta_opt={res_ad['theta_opt']:.8f}"),
        ("FD jacobian, 0.5 s decimation: stalls at |zeta - 0.1| <= 0.05",
         abs(res_fd["theta_opt"] - 0.1) <= 0.05,
         f"zeta_opt={res_fd['theta_opt']:.8f} in {res_fd['iterations']} iteration(s)"),
        ("AD jacobian, 0.5 s decimation: still |zeta - sqrt(2)/2| <= 5e-3",
         abs(res_ad_dec["theta_opt"] - target) <= 5e-3,
         f"zeta_opt={res_ad_dec['theta_opt']:.8f}"),
        ("runtime < 30 s", elapsed < 30.0, f"{elapsed:.1f} s"),
    ])


def test_criterion_06_mode_equivalence():
    rng = np.random.default_rng(606)
    worst_fr = 0.0
    for _ in range(500):
        t, x0 = random_tape(rng, max_nodes=300)
        J = forward_gradient(t, x0)
        for i in range(len(t.outputs)):
            r = reverse_gradient(t, x0, i)
            scale = np.maximum(1.0, np.maximum(np.abs(J[i]), np.abs(r)))
            worst_fr = max(worst_fr, float(np.max(np.abs(J[i] - r) / scale)))
    worst_fd = 0.0
    for _ in range(60):
        t, x0 = random_tape(rng, max_nodes=150)
        J = forward_gradient(t, x0)
        fd = finite_difference(lambda v: tape_eval(t, v), x0)
        rep = compare_report(J, fd, tol=1e-6)
        worst_fd = max(worst_fd, rep.max_rel)
    _report(6, "forward = reverse = central differences on random tapes", [
        ("forward vs reverse <= 1e-12 (500 tapes, <=300 nodes)",
         worst_fr <= 1e-12, f"max {worst_fr:.2e}"),
        ("either mode vs central FD rel <= 1e-6 (smooth tapes)",
         worst_fd <= 1e-6, f"max {worst_fd:.2e}"),
    ])


def test_criterion_07_op_count_bounds():
    rng = np.random.default_rng(707)
    ok_mul, ok_div = True, True
    detail = []
    for _ in range(100):
        t, _ = random_tape(rng, max_nodes=200, ops=("add", "sub", "mul"))
        s = sum(1 for n in t.nodes if n.op in ("add", "sub", "mul", "div"))
        ok_mul &= op_count(t, "forward") <= 4 * s
        t2, _ = random_tape(rng, max_nodes=200, ops=("add", "sub", "mul", "div"))
        s2 = sum(1 for n in t2.nodes if n.op in ("add", "sub", "mul", "div"))
        ok_div &= op_count(t2, "forward") <= 5 * s2
    _report(7, "forward derivative operation-count bounds", [
        ("<= 4s on {+,-,x} tapes (100 random)", ok_mul, "per-tape assertion"),
        ("<= 5s with division (100 random)", ok_div, "per-tape assertion"),
    ])


def test_criterion_08_hessian():
    rng = np.random.default_rng(808)
    worst_sym, worst_fd = 0.0, 0.0
    for _ in range(50):
        t, x0 = random_tape(rng, max_nodes=60, num_inputs=int(rng.integers(2, 4)))
        H = hessian(t, x0, 0)
        worst_sym = max(worst_sym, float(np.max(np.abs(H - H.T))))
        fd = finite_difference(lambda v: reverse_gradient(t, v, 0), x0)
        scale = np.maximum(1.0, np.maximum(np.abs(H), np.abs(fd)))
        worst_fd = max(worst_fd, float(np.max(np.abs(H - fd) / scale)))
    _report(8, "forward-over-reverse Hessian on 50 random tapes", [
        ("symmetric to 1e-10", worst_sym <= 1e-10, f"max asymmetry {worst_sym:.2e}"),
        ("matches FD-of-gradient to 1e-5", worst_fd <= 1e-5, f"max rel {worst_fd:.2e}"),
    ])


def _impact_surface(dim, wall_speed, e_pos, e_neg, A):
    b = TapeBuilder(dim + 1)
    q0 = b.input(0)
    tn = b.input(dim)
    expr = b.sub(q0, b.add(b.const(1.0), b.mul(b.const(wall_speed), tn)))
    return ImpactSurface(dim, lambda q: A, lambda q: e_pos, lambda q: e_neg,
                         b.build([expr]))


def test_criterion_09_impact_law():
    rng = np.random.default_rng(909)
    worst_energy, worst_reflect, worst_tang = 0.0, 0.0, 0.0
    reflections = 0
    for _ in range(1000):
        dim = int(rng.integers(1, 4))
        M = rng.normal(size=(dim, dim))
        A = M @ M.T + dim * np.eye(dim)
        e_pos = float(rng.uniform(-2.0, 2.0))
        e_neg = float(rng.uniform(-2.0, 2.0))
        w = float(rng.uniform(-1.0, 1.0))
        s = _impact_surface(dim, w, e_pos, e_neg, A)
        q = np.zeros(dim)
        q[0] = 1.0
        v_pre = rng.uniform(-2.0, 2.0, dim)
        if v_pre[0] - w <= 1e-3:
            v_pre[0] = abs(v_pre[0]) + max(0.0, w) + 0.5
        v_post = impact_update(s, q, v_pre, 0.0)

        gq = np.zeros(dim)
        gq[0] = 1.0
        e_n = np.linalg.solve(A, gq)
        gn = float(gq @ e_n)
        wall = w / gn
        vn_pre = float(gq @ v_pre) / gn
        vn_post = float(gq @ v_post) / gn
        crossing = gn * (vn_pre - wall) ** 2 + (e_neg - e_pos) >= 0.0
        pre_total = gn * (vn_pre - wall) ** 2 + e_neg
        post_total = gn * (vn_post - wall) ** 2 + (e_pos if crossing else e_neg)
        worst_energy = max(worst_energy,
                           abs(pre_total - post_total) / max(1.0, abs(pre_total)))
        if not crossing:
            reflections += 1
            worst_reflect = max(worst_reflect,
                                abs((vn_post - wall) + (vn_pre - wall)))
        if dim > 1:
            basis = np.zeros((dim, dim))
            for i in range(1, dim):
                basis[:, i - 1] = np.eye(dim)[i]
            basis[:, dim - 1] = e_n
            xi_pre = np.linalg.solve(basis, v_pre)
            xi_post = np.linalg.solve(basis, v_post)
            worst_tang = max(worst_tang, float(np.max(np.abs(xi_pre[:-1]
                                                             - xi_post[:-1]))))
    _report(9, "impact law on 1000 randomized (A, E_p, v, wall-speed) cases", [
        ("relative-speed energy balance conserved to 1e-9",
         worst_energy <= 1e-9, f"max {worst_energy:.2e}"),
        (f"reflection branch v+ - v = -(v- - v) to 1e-12 ({reflections} cases)",
         worst_reflect <= 1e-12, f"max {worst_reflect:.2e}"),
        ("tangential components preserved exactly",
         worst_tang <= 1e-12, f"max {worst_tang:.2e}"),
    ])


def test_criterion_10_dde_sensitivity():
    h = 0.5
    b = TapeBuilder(5)              # [x, t, h, xdel, xdelslope]
    x = b.input(0)
    xdel = b.input(3)
    tape = b.build([b.neg(xdel), x, x])
    m = make_ode_model(1, tape, ("h",), {"h": h}, ("x",), ("y",),
                       init_exprs=(parse_expr(1.0),),
                       delays=(DelaySlot(parse_expr("h"), parse_expr(1.0)),))
    c = SimConfig(step=1e-3, tf=1.0)
    tr = integrate(dde_extend(m, "h"), c)
    t = tr.times
    # method of steps: x = 1-t on (0,h], then dx/dh = -(t-h) on (h,2h]
    ref = np.where(t <= h, 0.0, -(t - h))
    err_closed = float(np.max(np.abs(tr.output("dy/dh") - ref)))
    eps = 1e-5
    up = integrate(m, c, theta={"h": h + eps}).output("y")
    dn = integrate(m, c, theta={"h": h - eps}).output("y")
    fd = (up - dn) / (2 * eps)
    rel_fd = float(np.max(np.abs(tr.output("dy/dh") - fd)
                          / np.maximum(1.0, np.abs(fd))))
    _report(10, "delay-equation sensitivity in the delay itself", [
        ("matches the method-of-steps closed form to 1e-6",
         err_closed <= 1e-6, f"max {err_closed:.2e}"),
        ("matches central FD to rel 1e-4", rel_fd <= 1e-4, f"max {rel_fd:.2e}"),
    ])


def test_criterion_11_sequence_probe():
    p = sequence_probe()
    fd_fails = all(abs(v - 1.0) >= 0.5 or not math.isfinite(v)
                   for v in p.fd.values())
    # The two checks below are asserted exactly as stated and are expected
    # to FAIL in IEEE-754 double precision: the dual factors 10^n are
    # individually rounded, so their product is 1 + 2 ulp (not exactly 1),
    # and the perturbation magnitudes (1e-55 swing) never leave the double
    # range, so the finite difference stays benign.  The float32 channel in
    # the probe's report shows the catastrophic collapse the construction
    # aims at.  See the decisions log for the full analysis.
    _report(11, "iterated-sequence precision probe", [
        ("value equals (0, 11) exactly", p.value == (0.0, 11), f"{p.value}"),
        ("dual-propagation derivative equals 1.0 exactly",
         p.ad_derivative == 1.0, f"{p.ad_derivative!r}"),
        ("forward FD at eps=1e-8 errs by >= 0.5 or overflows",
         fd_fails, f"{p.fd!r} (float32 channel: {p.fd_float32!r})"),
    ])


def test_criterion_12_warm_start_hazard():
    s = _sqrt_system()
    grid = np.arange(0.1, 2.0 + 1e-12, 1e-3)
    loose = warm_start_probe(s, grid, tol=5e-2)
    tight = warm_start_probe(s, grid, tol=1e-14)
    _report(12, "warm-started solver output is piecewise constant", [
        ("tol 5e-2: >= 50% locally-constant grid points",
         loose.constant_fraction >= 0.5, f"{loose.constant_fraction:.1%}"),
        ("tol 1e-14: <= 1% locally-constant grid points",
         tight.constant_fraction <= 0.01, f"{tight.constant_fraction:.1%}"),
    ])


def test_criterion_13_second_order_graphic_derivative():
    d = _model("first_order.json")
    c = SimConfig(step=1e-3, tf=5.0)
    tr = integrate(flatten(agdm_diff(agdm_diff(d, "tau"), "tau")), c)
    k, tau = 1.0, 0.5
    # independent oracle: the second-derivative transfer function
    # d2Y/dtau2 = 2ks^2/(1+tau s)^3 U realized in canonical state-space
    # form and driven by the same step (its response has Laplace
    # transform 2ks/(1+tau s)^3)
    oracle_doc = {
        "schema": 1, "name": "oracle", "params": {},
        "blocks": [
            {"id": "U", "kind": "Step", "time": 0.0, "level": 1.0},
            {"id": "H", "kind": "TransferFnS",
             "num": [0.0, 0.0, 2.0 * k],
             "den": [1.0, 3 * tau, 3 * tau ** 2, tau ** 3]},
        ],
        "links": [{"from": "U.out", "to": "H.in"}],
        "outputs": [{"name": "d2", "from": "H.out"}],
    }
    oracle = integrate(flatten(parse_diagram(json.dumps(oracle_doc))), c)
    t = tr.times
    closed = k * t * np.exp(-t / tau) * (2 / tau ** 3 - t / tau ** 4)
    err_oracle = float(np.max(np.abs(tr.output("d2y/dtau2") - oracle.output("d2"))))
    err_oracle_closed = float(np.max(np.abs(oracle.output("d2") - closed)))
    _report(13, "twice-applied graphic differentiation of the first-order model", [
        ("matches the state-space oracle to 1e-6",
         err_oracle <= 1e-6, f"max {err_oracle:.2e}"),
        ("oracle itself matches the closed form to 1e-6",
         err_oracle_closed <= 1e-6, f"max {err_oracle_closed:.2e}"),
    ])


def test_criterion_14_discrete_loop_derivative():
    d = _model("discrete_loop.json")
    c = SimConfig(step=0.1, tf=8.0)
    tr = integrate(flatten(agdm_diff(d, "K")), c)
    K, a, bq, Ts = 1.0, 0.3, 0.2, 0.1
    # printed rational derivative of the closed loop with respect to the
    # integrator gain, realized as an independent discrete transfer function:
    # dY/dK = Ts(z^4 + a z^3 + (b-1) z^2 - a z - b) / D(z)^2,
    # D = z^3 + (a-1) z^2 + (K Ts - a + b) z + (K Ts - b)
    num_desc = Ts * np.array([1.0, a, bq - 1.0, -a, -bq])
    D = np.array([1.0, a - 1.0, K * Ts - a + bq, K * Ts - bq])
    den_desc = np.polymul(D, D)
    oracle_doc = {
        "schema": 1, "name": "oracle", "params": {},
        "blocks": [
            {"id": "U", "kind": "Step", "time": 0.0, "level": 1.0},
            {"id": "H", "kind": "TransferFnZ", "num": list(num_desc[::-1]),
             "den": list(den_desc[::-1]), "sample_time": 0.1},
        ],
        "links": [{"from": "U.out", "to": "H.in"}],
        "outputs": [{"name": "dy", "from": "H.out"}],
    }
    oracle = integrate(flatten(parse_diagram(json.dumps(oracle_doc))), c)
    err = float(np.max(np.abs(tr.output("dy/dK") - oracle.output("dy"))))
    _report(14, "discrete-loop derivative vs the printed rational derivative", [
        ("per-sample agreement to 1e-8", err <= 1e-8, f"max {err:.2e}"),
    ])
