import math

import numpy as np
import pytest

from conftest import random_tape, worked_example_tape
from hybridad import (
    ABS,
    COS,
    EXP,
    EvalDomainError,
    NonDifferentiablePoint,
    SIN,
    TapeBuilder,
    audit_branches,
    compare_report,
    compile_tape,
    dump,
    finite_difference,
    forward_gradient,
    hessian,
    jet_derivative,
    jet_var,
    jvp_tape,
    op_count,
    parse_dump,
    reverse_gradient,
    tape_eval,
    tape_jet_eval,
    taylor_patch,
)
from hybridad.jet import jet_const


def test_worked_example_value():
    t = worked_example_tape()
    assert tape_eval(t, [1.0, 2.0]) == [10.0]


def test_identity_tape():
    b = TapeBuilder(1)
    t = b.build([b.input(0)])
    assert tape_eval(t, [7.0]) == [7.0]


def _half_cos_tape():
    """branch(|x| >= tiny ? (1-cos x)/x : 0) -- removable singularity."""
    b = TapeBuilder(1)
    x = b.input(0)
    absx = b.apply(ABS, x)
    num = b.sub(b.const(1.0), b.apply(COS, x))
    expr = b.div(num, x)
    out = b.branch(absx, 5e-324, expr, b.const(0.0))
    return b.build([out])


def test_branch_takes_one_arm_only():
    t = _half_cos_tape()
    # at exactly zero the singular arm must not be evaluated
    assert tape_eval(t, [0.0]) == [0.0]
    assert tape_eval(t, [1.0]) == [pytest.approx((1 - math.cos(1.0)) / 1.0)]


def test_worked_example_gradients():
    t = worked_example_tape()
    assert forward_gradient(t, [1.0, 2.0]) == pytest.approx(np.array([[8.0, 7.0]]))
    assert reverse_gradient(t, [1.0, 2.0], 0) == pytest.approx(np.array([8.0, 7.0]))


def test_constant_tape_zero_jacobian():
    b = TapeBuilder(2)
    b.input(0), b.input(1)
    t = b.build([b.const(3.0)])
    assert np.all(forward_gradient(t, [1.0, 2.0]) == 0.0)


def test_square_power_rule():
    b = TapeBuilder(1)
    x = b.input(0)
    t = b.build([b.mul(x, x)])
    assert forward_gradient(t, [3.0])[0, 0] == pytest.approx(6.0)


def test_reverse_chain_example():
    b = TapeBuilder(1)
    x = b.input(0)
    t = b.build([b.apply(EXP, b.apply(SIN, x))])
    assert reverse_gradient(t, [0.0], 0)[0] == pytest.approx(1.0)


def test_hessian_examples():
    b = TapeBuilder(2)
    x, y = b.input(0), b.input(1)
    t = b.build([b.mul(b.mul(x, x), y)])
    H = hessian(t, [2.0, 3.0], 0)
    assert H == pytest.approx(np.array([[6.0, 4.0], [4.0, 0.0]]))

    b = TapeBuilder(2)
    t = b.build([b.add(b.input(0), b.mul(b.const(2.0), b.input(1)))])
    assert np.all(hessian(t, [0.3, -1.0], 0) == 0.0)

    H = hessian(worked_example_tape(), [1.0, 2.0], 0)
    assert H == pytest.approx(np.array([[4.0, 6.0], [6.0, 2.0]]))
    assert np.array_equal(H, H.T)


def test_jet_eval_geometric_series():
    b = TapeBuilder(1)
    x = b.input(0)
    t = b.build([b.div(b.const(1.0), b.add(b.const(1.0), x))])
    out = tape_jet_eval(t, [jet_var(0.0, 11)])[0]
    for i in range(12):
        assert jet_derivative(out, i) == pytest.approx(
            (-1.0) ** i * math.factorial(i), rel=1e-13)


def test_jet_eval_order_zero_reduces_to_eval():
    t = worked_example_tape()
    out = tape_jet_eval(t, [jet_const(1.0, 0), jet_const(2.0, 0)])[0]
    assert out.coeffs == (10.0,)


def test_jet_eval_exp_tape():
    b = TapeBuilder(1)
    t = b.build([b.apply(EXP, b.input(0))])
    out = tape_jet_eval(t, [jet_var(0.0, 3)])[0]
    assert out.coeffs == pytest.approx((1.0, 1.0, 0.5, 1.0 / 6.0))


def test_jet_order_one_matches_forward_column():
    rng = np.random.default_rng(3)
    for _ in range(25):
        t, x0 = random_tape(rng, max_nodes=60)
        J = forward_gradient(t, x0)
        for j in range(t.num_inputs):
            jets = [jet_var(v, 1) if k == j else jet_const(v, 1)
                    for k, v in enumerate(x0)]
            outs = tape_jet_eval(t, jets)
            col = np.array([jet_derivative(o, 1) for o in outs])
            assert np.allclose(col, J[:, j], rtol=1e-13, atol=1e-13)


def test_forward_equals_reverse_on_random_tapes():
    rng = np.random.default_rng(11)
    for _ in range(60):
        t, x0 = random_tape(rng, max_nodes=200)
        J = forward_gradient(t, x0)
        for i in range(len(t.outputs)):
            r = reverse_gradient(t, x0, i)
            scale = np.maximum(1.0, np.maximum(np.abs(J[i]), np.abs(r)))
            assert np.max(np.abs(J[i] - r) / scale) <= 1e-12


def test_gradients_match_central_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        t, x0 = random_tape(rng, max_nodes=120)
        J = forward_gradient(t, x0)
        fd = finite_difference(lambda v: tape_eval(t, v), x0)
        assert compare_report(J, fd, tol=1e-6).passed


def test_op_count_bounds():
    rng = np.random.default_rng(17)
    for _ in range(30):
        t, _ = random_tape(rng, max_nodes=120, ops=("add", "sub", "mul"))
        s = sum(1 for n in t.nodes if n.op in ("add", "sub", "mul", "div"))
        assert op_count(t, "forward") <= 4 * s
        t2, _ = random_tape(rng, max_nodes=120, ops=("add", "sub", "mul", "div"))
        s2 = sum(1 for n in t2.nodes if n.op in ("add", "sub", "mul", "div"))
        assert op_count(t2, "forward") <= 5 * s2


def test_op_count_empty_tape():
    b = TapeBuilder(1)
    t = b.build([b.input(0)])
    assert op_count(t, "forward") == 0
    assert op_count(t, "reverse") == 0


def test_branch_gradient_is_taken_arm_gradient():
    rng = np.random.default_rng(23)
    for _ in range(20):
        b = TapeBuilder(1)
        x = b.input(0)
        sq = b.mul(x, x)
        sinx = b.apply(SIN, x)
        thr = float(rng.uniform(-1, 1))
        out = b.branch(x, thr, sq, sinx)
        t = b.build([out])
        x0 = float(rng.uniform(-2, 2))
        if abs(x0 - thr) < 1e-3:
            continue
        g = forward_gradient(t, [x0])[0, 0]
        arm = sq if x0 >= thr else sinx
        g_arm = forward_gradient(b.build([arm]), [x0])[0, 0]
        assert g == g_arm


def test_abs_at_zero_raises():
    b = TapeBuilder(1)
    t = b.build([b.apply(ABS, b.input(0))])
    with pytest.raises(NonDifferentiablePoint):
        forward_gradient(t, [0.0])
    with pytest.raises(NonDifferentiablePoint):
        reverse_gradient(t, [0.0], 0)
    assert forward_gradient(t, [2.0])[0, 0] == 1.0
    assert forward_gradient(t, [-2.0])[0, 0] == -1.0


def test_domain_error_carries_node_id():
    b = TapeBuilder(1)
    x = b.input(0)
    from hybridad import LOG
    bad = b.apply(LOG, x)
    t = b.build([bad])
    with pytest.raises(EvalDomainError) as exc:
        tape_eval(t, [-1.0])
    assert exc.value.node_id == bad


def test_dump_golden_and_roundtrip():
    t = worked_example_tape()
    text = dump(t)
    assert text == (
        "0 input(0)\n"
        "1 input(1)\n"
        "2 add 0 1\n"
        "3 mul 2 0\n"
        "4 const(2.0)\n"
        "5 add 3 4\n"
        "6 mul 1 5\n"
        "outputs 6\n"
    )
    t2 = parse_dump(text)
    assert dump(t2) == text
    assert tape_eval(t2, [1.0, 2.0]) == [10.0]


def test_compiled_matches_interpreted_bitwise():
    rng = np.random.default_rng(31)
    for _ in range(20):
        t, x0 = random_tape(rng, max_nodes=150)
        f = compile_tape(t)
        assert f(list(x0)) == tape_eval(t, x0)


def test_jvp_tape_matches_forward():
    rng = np.random.default_rng(37)
    for _ in range(10):
        t, x0 = random_tape(rng, max_nodes=80)
        jt = jvp_tape(t)
        J = forward_gradient(t, x0)
        v = rng.uniform(-1, 1, t.num_inputs)
        out = tape_eval(jt, list(x0) + list(v))
        q = len(t.outputs)
        assert np.allclose(out[:q], tape_eval(t, x0), rtol=1e-15)
        assert np.allclose(out[q:], J @ v, rtol=1e-12, atol=1e-12)


def test_topological_and_input_invariants():
    from hybridad.tape import Node, Tape
    with pytest.raises(ValueError):
        Tape((Node("add", a=0, b=1),), 0, (0,))
    with pytest.raises(ValueError):
        Tape((Node("input", a=0), Node("input", a=0)), 1, (0,))
    with pytest.raises(ValueError):
        Tape((Node("const", value=1.0),), 0, (3,))


# -- boundary audit and Taylor patching --------------------------------------

def test_audit_reports_mismatched_arms():
    t = _half_cos_tape()
    findings = audit_branches(t, [0.0], cond_tol=1e-6)
    assert len(findings) == 1
    assert findings[0].max_mismatch == math.inf or findings[0].max_mismatch > 1e-6


def test_audit_quiet_away_from_threshold():
    t = _half_cos_tape()
    assert audit_branches(t, [0.5], cond_tol=1e-6) == []


def test_audit_quiet_for_smooth_join():
    b = TapeBuilder(1)
    x = b.input(0)
    t = b.build([b.branch(x, 0.0, b.mul(x, x), b.mul(x, x))])
    assert audit_branches(t, [0.0]) == []


def test_taylor_patch_removable_singularity():
    t = _half_cos_tape()
    patched = taylor_patch(t, t.outputs[0], center=0.0, half_width=0.1, order=10)
    # value correctness on both sides of the window
    for x in (-0.5, -0.09, 0.0, 0.05, 0.3):
        want = 0.0 if x == 0 else (1 - math.cos(x)) / x
        got = tape_eval(patched, [x])[0]
        assert got == pytest.approx(want, abs=1e-12)
    # the patched program is differentiable at 0 with the true value 1/2
    g = forward_gradient(patched, [0.0])[0, 0]
    assert g == pytest.approx(0.5, rel=1e-12)
    # third derivative at 0: the Taylor oracle gives -1/4
    out = tape_jet_eval(patched, [jet_var(0.0, 5)])[0]
    assert jet_derivative(out, 3) == pytest.approx(-0.25, rel=1e-12)


def test_taylor_patch_true_pole_rejected():
    b = TapeBuilder(1)
    x = b.input(0)
    absx = b.apply(ABS, x)
    pole = b.div(b.const(1.0), x)
    out = b.branch(absx, 5e-324, pole, b.const(0.0))
    t = b.build([out])
    with pytest.raises(EvalDomainError):
        taylor_patch(t, t.outputs[0], center=0.0)


def test_compiled_falls_back_to_lazy_semantics_in_simulator():
    # compile_tape evaluates eagerly; tape_eval is the lazy reference
    t = _half_cos_tape()
    f = compile_tape(t)
    with pytest.raises(ZeroDivisionError):
        f([0.0])
    assert tape_eval(t, [0.0]) == [0.0]
