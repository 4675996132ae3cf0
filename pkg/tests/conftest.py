import json

import numpy as np
import pytest

from hybridad import TapeBuilder, parse_diagram


def first_order_doc(k=1.0, tau=0.5):
    return {
        "schema": 1,
        "name": "first_order",
        "params": {"k": k, "tau": tau},
        "blocks": [
            {"id": "U", "kind": "Step", "time": 0.0, "level": 1.0},
            {"id": "Gk", "kind": "Gain", "gain": "k"},
            {"id": "E", "kind": "Sum", "signs": "+-"},
            {"id": "Gtau", "kind": "Gain", "gain": "1/tau"},
            {"id": "I", "kind": "Integrator", "initial": 0.0},
        ],
        "links": [
            {"from": "U.out", "to": "Gk.in"},
            {"from": "Gk.out", "to": "E.in1"},
            {"from": "I.out", "to": "E.in2"},
            {"from": "E.out", "to": "Gtau.in"},
            {"from": "Gtau.out", "to": "I.in"},
        ],
        "outputs": [{"name": "y", "from": "I.out"}],
    }


@pytest.fixture
def first_order():
    return parse_diagram(json.dumps(first_order_doc()))


def worked_example_tape():
    """F(x, y) = y*((x+y)*x + 2)."""
    b = TapeBuilder(2)
    x, y = b.input(0), b.input(1)
    a = b.add(x, y)
    v = b.mul(a, x)
    c = b.add(v, b.const(2.0))
    return b.build([b.mul(y, c)])


# ---------------------------------------------------------------------------
# random well-conditioned tapes
# ---------------------------------------------------------------------------

_SAFE_FNS = ("exp", "sin", "cos", "atan", "log", "sqrt", "tan")


def random_tape(rng: np.random.Generator, max_nodes=300, num_inputs=None,
                ops=("add", "sub", "mul", "div", "apply"), x0=None):
    """A random smooth tape together with a safe evaluation point.

    Node values are tracked during construction and candidate operations
    that would be ill-conditioned there (near-zero divisors, huge
    magnitudes, function arguments near domain edges) are rejected, so
    central differences at the returned point are trustworthy.
    """
    from hybridad.ops import ElementaryFn, fn_value

    n_in = int(rng.integers(1, 5)) if num_inputs is None else num_inputs
    if x0 is None:
        x0 = rng.uniform(-2.0, 2.0, n_in)
    b = TapeBuilder(n_in)
    vals = {}
    ids = []
    for j in range(n_in):
        nid = b.input(j)
        ids.append(nid)
        vals[nid] = float(x0[j])
    for _ in range(3):
        c = float(rng.uniform(-2.0, 2.0))
        nid = b.const(c)
        ids.append(nid)
        vals[nid] = c

    target = int(rng.integers(max(8, max_nodes // 4), max_nodes + 1))
    guard = 0
    while len(ids) < target and guard < 20 * target:
        guard += 1
        op = ops[int(rng.integers(0, len(ops)))]
        i = ids[int(rng.integers(0, len(ids)))]
        j = ids[int(rng.integers(0, len(ids)))]
        vi, vj = vals[i], vals[j]
        if op == "add":
            v = vi + vj
            if abs(v) > 1e3:
                continue
            nid = b.add(i, j)
        elif op == "sub":
            v = vi - vj
            if abs(v) > 1e3:
                continue
            nid = b.sub(i, j)
        elif op == "mul":
            v = vi * vj
            if abs(v) > 1e3:
                continue
            nid = b.mul(i, j)
        elif op == "div":
            if abs(vj) < 0.2 or abs(vi / vj) > 1e3:
                continue
            v = vi / vj
            nid = b.div(i, j)
        else:
            name = _SAFE_FNS[int(rng.integers(0, len(_SAFE_FNS)))]
            if name == "exp" and abs(vi) > 4.0:
                continue
            if name in ("log", "sqrt") and vi < 0.2:
                continue
            if name == "tan" and abs(np.cos(vi)) < 0.3:
                continue
            fn = ElementaryFn(name)
            v = fn_value(fn, vi)
            if abs(v) > 1e3:
                continue
            nid = b.apply(fn, i)
        ids.append(nid)
        vals[nid] = v
    n_out = int(rng.integers(1, 4))
    outs = [ids[-1]] + [ids[int(rng.integers(0, len(ids)))] for _ in range(n_out - 1)]
    return b.build(outs), np.asarray(x0, dtype=float)
