"""Straight-line programs ("tapes") and their derivatives.

A tape is a topologically ordered sequence of elementary operations over
a fixed set of inputs.  Conditionals are first-class ``branch`` nodes: the
condition always compares an already-computed node against a constant
threshold with ``>=`` (documented, bit-stable tie-breaking), and
evaluation is demand-driven so only the taken arm of a branch is ever
computed.  Derivatives follow the taken arm and never differentiate the
threshold.

Modes provided here:

* ``tape_eval``          -- plain evaluation
* ``forward_gradient``   -- full Jacobian by tangent-vector propagation
* ``reverse_gradient``   -- one forward sweep + one adjoint sweep
* ``hessian``            -- forward duals pushed through the reverse sweep
* ``tape_jet_eval``      -- order-r Taylor propagation (jet module)
* ``op_count``           -- arithmetic-operation count of a derivative pass
* ``tangent_tape``       -- source transformation emitting derivative nodes

Tapes are immutable after construction; every evaluation allocates its
own workspace, so concurrent evaluations of a shared tape are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvalDomainError, NonDifferentiablePoint
from .jet import Jet, jet_arith, jet_const
from . import jet as jetmod
from .ops import (
    ABS,
    COS,
    SIN,
    TAN,
    ElementaryFn,
    Pow,
    fn_derivative,
    fn_second_derivative,
    fn_value,
    parse_fn,
)

_ARITH_OPS = ("add", "sub", "mul", "div")


@dataclass(frozen=True)
class Node:
    op: str                      # input|const|add|sub|mul|div|apply|branch
    a: int = -1                  # first child; input index for op=input; then-arm for branch
    b: int = -1                  # second child; else-arm for branch
    fn: ElementaryFn | None = None
    value: float = 0.0           # const payload
    cond: int = -1               # branch condition node
    threshold: float = 0.0       # branch threshold (compared with >=)

    def children(self) -> tuple[int, ...]:
        if self.op in ("input", "const"):
            return ()
        if self.op == "apply":
            return (self.a,)
        if self.op == "branch":
            return (self.cond, self.a, self.b)
        return (self.a, self.b)


@dataclass(frozen=True)
class Tape:
    nodes: tuple[Node, ...]
    num_inputs: int
    outputs: tuple[int, ...]

    def __post_init__(self):
        seen_inputs = set()
        for i, n in enumerate(self.nodes):
            for c in n.children():
                if not (0 <= c < i):
                    raise ValueError(f"node {i} references {c}, violating topological order")
            if n.op == "input":
                if not (0 <= n.a < self.num_inputs):
                    raise ValueError(f"node {i}: input index {n.a} out of range")
                if n.a in seen_inputs:
                    raise ValueError(f"input {n.a} referenced by more than one node")
                seen_inputs.add(n.a)
        for o in self.outputs:
            if not (0 <= o < len(self.nodes)):
                raise ValueError(f"output id {o} does not exist")

    def __len__(self) -> int:
        return len(self.nodes)


class TapeBuilder:
    """Incremental tape construction; methods return node ids."""

    def __init__(self, num_inputs: int):
        self.num_inputs = num_inputs
        self._nodes: list[Node] = []
        self._input_nodes: dict[int, int] = {}

    def _push(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def input(self, j: int) -> int:
        if not (0 <= j < self.num_inputs):
            raise ValueError(f"input index {j} out of range")
        if j not in self._input_nodes:
            self._input_nodes[j] = self._push(Node("input", a=j))
        return self._input_nodes[j]

    def const(self, v: float) -> int:
        return self._push(Node("const", value=float(v)))

    def add(self, a: int, b: int) -> int:
        return self._push(Node("add", a=a, b=b))

    def sub(self, a: int, b: int) -> int:
        return self._push(Node("sub", a=a, b=b))

    def mul(self, a: int, b: int) -> int:
        return self._push(Node("mul", a=a, b=b))

    def div(self, a: int, b: int) -> int:
        return self._push(Node("div", a=a, b=b))

    def apply(self, fn: ElementaryFn, a: int) -> int:
        return self._push(Node("apply", a=a, fn=fn))

    def branch(self, cond: int, threshold: float, then_id: int, else_id: int) -> int:
        return self._push(Node("branch", a=then_id, b=else_id, cond=cond,
                               threshold=float(threshold)))

    def neg(self, a: int) -> int:
        return self.sub(self.const(0.0), a)

    def build(self, outputs) -> Tape:
        return Tape(tuple(self._nodes), self.num_inputs, tuple(outputs))


# ---------------------------------------------------------------------------
# demand-driven evaluation engine, parameterized by value semantics
# ---------------------------------------------------------------------------

class _FloatSem:
    FLOAT_PRIMAL = True

    @staticmethod
    def const(v):
        return v

    @staticmethod
    def primal(v):
        return v

    @staticmethod
    def arith(op, x, y, nid):
        if op == "add":
            return x + y
        if op == "sub":
            return x - y
        if op == "mul":
            return x * y
        if y == 0.0:
            raise EvalDomainError(nid, "division by zero")
        return x / y

    @staticmethod
    def apply(fn, x, nid):
        try:
            return fn_value(fn, x)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc


def _use(tangent):
    """Deferred-kink guard: a tangent may carry a NonDifferentiablePoint,
    raised only when the tangent is actually consumed (branch conditions
    read the primal alone, so a kink there is harmless)."""
    if isinstance(tangent, NonDifferentiablePoint):
        raise tangent
    return tangent


class _ForwardSem:
    """(value, tangent-vector) pairs."""

    def __init__(self, width: int):
        self.width = width

    def const(self, v):
        return (v, np.zeros(self.width))

    @staticmethod
    def primal(v):
        return v[0]

    @staticmethod
    def arith(op, x, y, nid):
        (xv, xd), (yv, yd) = x, y
        xd, yd = _use(xd), _use(yd)
        if op == "add":
            return (xv + yv, xd + yd)
        if op == "sub":
            return (xv - yv, xd - yd)
        if op == "mul":
            return (xv * yv, xd * yv + xv * yd)
        if yv == 0.0:
            raise EvalDomainError(nid, "division by zero")
        q = xv / yv
        return (q, (xd - q * yd) / yv)

    @staticmethod
    def apply(fn, x, nid):
        xv, xd = x
        try:
            v = fn_value(fn, xv)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc
        try:
            d = fn_derivative(fn, xv, nid)
        except NonDifferentiablePoint as exc:
            return (v, exc)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc
        return (v, d * _use(xd))


class _JetSem:
    def __init__(self, order: int):
        self.order = order

    def const(self, v):
        return jet_const(v, self.order)

    @staticmethod
    def primal(v: Jet):
        return v.coeffs[0]

    @staticmethod
    def arith(op, x, y, nid):
        try:
            return jet_arith(op, x, y)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc

    @staticmethod
    def apply(fn, x, nid):
        try:
            return jetmod.jet_apply(fn, x)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc


class _D:
    """First-order dual scalar used to push forward mode through reverse."""

    __slots__ = ("v", "d")

    def __init__(self, v: float, d: float = 0.0):
        self.v = v
        self.d = d

    def __add__(self, o):
        return _D(self.v + o.v, _use(self.d) + _use(o.d))

    def __sub__(self, o):
        return _D(self.v - o.v, _use(self.d) - _use(o.d))

    def __mul__(self, o):
        return _D(self.v * o.v, _use(self.d) * o.v + self.v * _use(o.d))

    def __truediv__(self, o):
        q = self.v / o.v
        return _D(q, (_use(self.d) - q * _use(o.d)) / o.v)

    def __neg__(self):
        return _D(-self.v, -_use(self.d))


class _DualSem:
    @staticmethod
    def const(v):
        return _D(v, 0.0)

    @staticmethod
    def primal(v: _D):
        return v.v

    @staticmethod
    def arith(op, x, y, nid):
        _use(x.d), _use(y.d)
        if op == "add":
            return x + y
        if op == "sub":
            return x - y
        if op == "mul":
            return x * y
        if y.v == 0.0:
            raise EvalDomainError(nid, "division by zero")
        return x / y

    @staticmethod
    def apply(fn, x, nid):
        try:
            v = fn_value(fn, x.v)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc
        try:
            d = fn_derivative(fn, x.v, nid)
        except NonDifferentiablePoint as exc:
            return _D(v, exc)
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc
        return _D(v, d * _use(x.d))

    @staticmethod
    def fn_prime(fn, x: _D, nid) -> _D:
        # derivative of the elementary function, itself dual-valued
        d1 = fn_derivative(fn, x.v, nid)
        d2 = fn_second_derivative(fn, x.v, nid)
        return _D(d1, d2 * _use(x.d))


def _run_into(tape: Tape, inputs, want, sem, memo, cond_value):
    """Demand-driven evaluation of ``want`` node ids into ``memo``.

    Branch conditions are resolved through ``cond_value`` so that richer
    semantics (tangents, jets, duals) never propagate derivative or
    series information through a test that only reads the primal.
    """
    nodes = tape.nodes
    stack = [w for w in want]
    while stack:
        nid = stack[-1]
        if nid in memo:
            stack.pop()
            continue
        node = nodes[nid]
        op = node.op
        if op == "input":
            memo[nid] = inputs[node.a]
            stack.pop()
        elif op == "const":
            memo[nid] = sem.const(node.value)
            stack.pop()
        elif op == "branch":
            taken = node.a if cond_value(node.cond) >= node.threshold else node.b
            if taken not in memo:
                stack.append(taken)
                continue
            memo[nid] = memo[taken]
            stack.pop()
        elif op == "apply":
            if node.a not in memo:
                stack.append(node.a)
                continue
            memo[nid] = sem.apply(node.fn, memo[node.a], nid)
            stack.pop()
        else:
            missing = [c for c in (node.a, node.b) if c not in memo]
            if missing:
                stack.extend(missing)
                continue
            memo[nid] = sem.arith(op, memo[node.a], memo[node.b], nid)
            stack.pop()
    return memo


class _Eval:
    """One evaluation context: semantic memo plus a primal-float side memo
    used for branch conditions."""

    def __init__(self, tape: Tape, inputs, sem):
        self.tape = tape
        self.inputs = inputs
        self.sem = sem
        self.memo: dict[int, object] = {}
        if getattr(sem, "FLOAT_PRIMAL", False):
            self.fmemo = self.memo
            self.finputs = inputs
        else:
            self.fmemo: dict[int, float] = {}
            self.finputs = [sem.primal(v) for v in inputs]

    def cond_value(self, cid: int) -> float:
        if cid not in self.fmemo:
            _run_into(self.tape, self.finputs, (cid,), _FloatSem,
                      self.fmemo, self.cond_value)
        return self.fmemo[cid]

    def run(self, want):
        return _run_into(self.tape, self.inputs, want, self.sem,
                         self.memo, self.cond_value)


def _run(tape: Tape, inputs, want, sem):
    ev = _Eval(tape, inputs, sem)
    return ev.run(want), ev.cond_value


def tape_eval(t: Tape, x) -> list[float]:
    """Evaluate all outputs.  Only the taken arm of a branch is computed."""
    if len(x) != t.num_inputs:
        raise ValueError(f"expected {t.num_inputs} inputs, got {len(x)}")
    memo, _ = _run(t, [float(v) for v in x], t.outputs, _FloatSem)
    return [memo[o] for o in t.outputs]


def forward_gradient(t: Tape, x) -> np.ndarray:
    """Full Jacobian (outputs x inputs) by tangent-vector propagation."""
    if len(x) != t.num_inputs:
        raise ValueError(f"expected {t.num_inputs} inputs, got {len(x)}")
    sem = _ForwardSem(t.num_inputs)
    seeds = []
    for j, v in enumerate(x):
        e = np.zeros(t.num_inputs)
        e[j] = 1.0
        seeds.append((float(v), e))
    memo, _ = _run(t, seeds, t.outputs, sem)
    return np.array([_use(memo[o][1]) for o in t.outputs])


def _adjoint_pass(t: Tape, memo, out_node: int, sem, one, cond_value):
    """Reverse sweep over the demanded sub-graph; returns id->adjoint."""
    nodes = t.nodes
    adj: dict[int, object] = {out_node: one}
    for nid in sorted(memo.keys(), reverse=True):
        a_bar = adj.get(nid)
        if a_bar is None:
            continue
        node = nodes[nid]
        op = node.op

        def acc(child, contrib):
            if child in adj:
                adj[child] = adj[child] + contrib
            else:
                adj[child] = contrib

        if op in ("input", "const"):
            continue
        if op == "branch":
            taken = node.a if cond_value(node.cond) >= node.threshold else node.b
            acc(taken, a_bar)
            continue
        if op == "apply":
            acc(node.a, a_bar * sem.fn_prime(node.fn, memo[node.a], nid))
            continue
        if op == "add":
            acc(node.a, a_bar)
            acc(node.b, a_bar)
        elif op == "sub":
            acc(node.a, a_bar)
            acc(node.b, -a_bar)
        elif op == "mul":
            acc(node.a, a_bar * memo[node.b])
            acc(node.b, a_bar * memo[node.a])
        else:  # div: node = a/b, d/da = 1/b, d/db = -q/b
            w = a_bar / memo[node.b]
            acc(node.a, w)
            acc(node.b, -(w * memo[nid]))
    return adj


class _FloatRevSem(_FloatSem):
    @staticmethod
    def fn_prime(fn, x, nid):
        try:
            return fn_derivative(fn, x, nid)
        except NonDifferentiablePoint:
            raise
        except Exception as exc:
            raise EvalDomainError(nid, str(exc)) from exc


def reverse_gradient(t: Tape, x, out: int) -> np.ndarray:
    """Gradient of one output (by position in ``t.outputs``) w.r.t. all inputs.

    Exactly one forward sweep and one reverse sweep.
    """
    if not (0 <= out < len(t.outputs)):
        raise ValueError(f"output index {out} out of range")
    out_node = t.outputs[out]
    memo, cond = _run(t, [float(v) for v in x], (out_node,), _FloatRevSem)
    adj = _adjoint_pass(t, memo, out_node, _FloatRevSem, 1.0, cond)
    grad = np.zeros(t.num_inputs)
    for nid, node in enumerate(t.nodes):
        if node.op == "input" and nid in adj:
            grad[node.a] = adj[nid]
    return grad


def hessian(t: Tape, x, out: int) -> np.ndarray:
    """Hessian of one output: forward duals composed with the reverse sweep.

    The matrix is symmetric by construction (row i is computed for
    columns j >= i and mirrored).
    """
    if not (0 <= out < len(t.outputs)):
        raise ValueError(f"output index {out} out of range")
    out_node = t.outputs[out]
    n = t.num_inputs
    H = np.zeros((n, n))
    for i in range(n):
        seeds = [_D(float(v), 1.0 if j == i else 0.0) for j, v in enumerate(x)]
        memo, cond = _run(t, seeds, (out_node,), _DualSem)
        adj = _adjoint_pass(t, memo, out_node, _DualSem, _D(1.0, 0.0), cond)
        row = np.zeros(n)
        for nid, node in enumerate(t.nodes):
            if node.op == "input" and nid in adj:
                row[node.a] = adj[nid].d
        for j in range(i, n):
            H[i, j] = row[j]
            H[j, i] = row[j]
    return H


def tape_jet_eval(t: Tape, xs: list[Jet]) -> list[Jet]:
    """Propagate jets through the tape; all inputs must share one order."""
    if len(xs) != t.num_inputs:
        raise ValueError(f"expected {t.num_inputs} input jets, got {len(xs)}")
    orders = {j.order for j in xs}
    if len(orders) > 1:
        raise ValueError(f"input jets must share one order, got {sorted(orders)}")
    sem = _JetSem(orders.pop() if orders else 0)
    memo, _ = _run(t, list(xs), t.outputs, sem)
    return [memo[o] for o in t.outputs]


# ---------------------------------------------------------------------------
# operation counting
# ---------------------------------------------------------------------------

_FORWARD_COST = {"add": 2, "sub": 2, "mul": 4, "div": 4, "apply": 3}


def op_count(t: Tape, mode: str) -> int:
    """Arithmetic operations for the program value plus one derivative pass.

    Forward charging (value + tangent): add/sub 1+1, mul 1+3, div 1+3
    (tangent as (da - q*db)/b reusing the quotient), apply 1+2.  Reverse
    charging: 1 per value, 1 multiplication per edge into a mul/div/apply
    parent, and 1 addition per adjoint accumulation after the first touch
    (the first contribution is an assignment).  Branch arms are both
    counted: the static count is an upper bound on any execution.
    """
    if mode not in ("forward", "reverse"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "forward":
        return sum(_FORWARD_COST.get(n.op, 0) for n in t.nodes)
    total = 0
    touched: set[int] = set()
    for nid in range(len(t.nodes) - 1, -1, -1):
        node = t.nodes[nid]
        op = node.op
        if op in ("input", "const", "branch"):
            continue
        total += 1  # value
        if op in ("add", "sub"):
            edges = [(node.a, 0), (node.b, 0)]
        elif op == "mul":
            edges = [(node.a, 1), (node.b, 1)]
        elif op == "div":
            edges = [(node.a, 1), (node.b, 2)]
        else:  # apply: f'(x) then multiply
            edges = [(node.a, 2)]
        for child, mul_cost in edges:
            total += mul_cost
            if child in touched:
                total += 1  # accumulate
            else:
                touched.add(child)
    return total


# ---------------------------------------------------------------------------
# textual dump (golden-test format; stable across releases)
# ---------------------------------------------------------------------------

def _fmt_float(v: float) -> str:
    return repr(v)


def dump(t: Tape) -> str:
    lines = []
    for i, n in enumerate(t.nodes):
        if n.op == "input":
            lines.append(f"{i} input({n.a})")
        elif n.op == "const":
            lines.append(f"{i} const({_fmt_float(n.value)})")
        elif n.op == "apply":
            lines.append(f"{i} apply({n.fn}) {n.a}")
        elif n.op == "branch":
            lines.append(f"{i} branch(>={_fmt_float(n.threshold)}) {n.cond} {n.a} {n.b}")
        else:
            lines.append(f"{i} {n.op} {n.a} {n.b}")
    lines.append("outputs " + " ".join(str(o) for o in t.outputs))
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> Tape:
    """Inverse of ``dump`` (used by golden tests and tooling)."""
    nodes: list[Node] = []
    outputs: tuple[int, ...] = ()
    max_input = -1
    for line in text.strip().splitlines():
        parts = line.split()
        if parts[0] == "outputs":
            outputs = tuple(int(p) for p in parts[1:])
            continue
        head = parts[1]
        if head.startswith("input("):
            j = int(head[6:-1])
            max_input = max(max_input, j)
            nodes.append(Node("input", a=j))
        elif head.startswith("const("):
            nodes.append(Node("const", value=float(head[6:-1])))
        elif head.startswith("apply("):
            nodes.append(Node("apply", a=int(parts[2]), fn=parse_fn(head[6:-1])))
        elif head.startswith("branch(>="):
            thr = float(head[9:-1])
            nodes.append(Node("branch", cond=int(parts[2]), a=int(parts[3]),
                              b=int(parts[4]), threshold=thr))
        else:
            nodes.append(Node(head, a=int(parts[2]), b=int(parts[3])))
    return Tape(tuple(nodes), max_input + 1, outputs)


# ---------------------------------------------------------------------------
# compilation to a plain Python function (hot loops in the simulator)
# ---------------------------------------------------------------------------

def compile_tape(t: Tape):
    """Build a fast eager evaluator ``f(x) -> list[float]``.

    Unlike the interpreted path the compiled function evaluates both
    branch arms, so a tape whose dead arm divides by zero must go through
    ``tape_eval`` instead; the simulator falls back automatically.
    """
    src = ["def _f(x, _m=math):"]
    for i, n in enumerate(t.nodes):
        if n.op == "input":
            src.append(f"    _v{i} = x[{n.a}]")
        elif n.op == "const":
            src.append(f"    _v{i} = {n.value!r}")
        elif n.op == "add":
            src.append(f"    _v{i} = _v{n.a} + _v{n.b}")
        elif n.op == "sub":
            src.append(f"    _v{i} = _v{n.a} - _v{n.b}")
        elif n.op == "mul":
            src.append(f"    _v{i} = _v{n.a} * _v{n.b}")
        elif n.op == "div":
            src.append(f"    _v{i} = _v{n.a} / _v{n.b}")
        elif n.op == "branch":
            src.append(f"    _v{i} = _v{n.a} if _v{n.cond} >= {n.threshold!r} else _v{n.b}")
        else:
            k = n.fn.kind
            if k == "pow":
                src.append(f"    _v{i} = _v{n.a} ** {n.fn.exponent!r}")
            elif k == "abs":
                src.append(f"    _v{i} = abs(_v{n.a})")
            else:
                src.append(f"    _v{i} = _m.{k}(_v{n.a})")
    src.append("    return [" + ", ".join(f"_v{o}" for o in t.outputs) + "]")
    ns: dict = {"math": math}
    exec("\n".join(src), ns)
    return ns["_f"]


# ---------------------------------------------------------------------------
# source transformation: append tangent (directional-derivative) nodes
# ---------------------------------------------------------------------------

def copy_into(b: TapeBuilder, t: Tape, input_nodes: list[int]) -> list[int]:
    """Replay ``t``'s nodes into builder ``b``; returns old-id -> new-id map."""
    if len(input_nodes) != t.num_inputs:
        raise ValueError("need one replacement node per tape input")
    m: list[int] = []
    for n in t.nodes:
        if n.op == "input":
            m.append(input_nodes[n.a])
        elif n.op == "const":
            m.append(b.const(n.value))
        elif n.op == "apply":
            m.append(b.apply(n.fn, m[n.a]))
        elif n.op == "branch":
            m.append(b.branch(m[n.cond], n.threshold, m[n.a], m[n.b]))
        else:
            m.append(b._push(Node(n.op, a=m[n.a], b=m[n.b])))
    return m


def append_tangent(b: TapeBuilder, t: Tape, node_map: list[int],
                   seed_nodes: list[int]) -> list[int]:
    """Emit tangent nodes for every node of ``t`` (chain rule, arm-wise
    on branches with the original conditions).  ``node_map`` are the value
    nodes from ``copy_into``; ``seed_nodes[j]`` is the tangent of input j.
    Returns old-id -> tangent-node-id.
    """
    zero = b.const(0.0)
    tan: list[int] = []
    for nid, n in enumerate(t.nodes):
        if n.op == "input":
            tan.append(seed_nodes[n.a])
        elif n.op == "const":
            tan.append(zero)
        elif n.op == "add":
            tan.append(b.add(tan[n.a], tan[n.b]))
        elif n.op == "sub":
            tan.append(b.sub(tan[n.a], tan[n.b]))
        elif n.op == "mul":
            tan.append(b.add(b.mul(tan[n.a], node_map[n.b]),
                             b.mul(node_map[n.a], tan[n.b])))
        elif n.op == "div":
            num = b.sub(tan[n.a], b.mul(node_map[nid], tan[n.b]))
            tan.append(b.div(num, node_map[n.b]))
        elif n.op == "branch":
            tan.append(b.branch(node_map[n.cond], n.threshold, tan[n.a], tan[n.b]))
        else:
            x = node_map[n.a]
            dx = tan[n.a]
            k = n.fn.kind
            if k == "exp":
                d = node_map[nid]
            elif k == "log":
                tan.append(b.div(dx, x))
                continue
            elif k == "sin":
                d = b.apply(COS, x)
            elif k == "cos":
                d = b.neg(b.apply(SIN, x))
            elif k == "tan":
                y = node_map[nid]
                d = b.add(b.const(1.0), b.mul(y, y))
            elif k == "atan":
                tan.append(b.div(dx, b.add(b.const(1.0), b.mul(x, x))))
                continue
            elif k == "sqrt":
                tan.append(b.div(dx, b.mul(b.const(2.0), node_map[nid])))
                continue
            elif k == "pow":
                p = n.fn.exponent
                if p == 0:
                    tan.append(zero)
                    continue
                d = b.mul(b.const(p), b.apply(Pow(p - 1), x))
            elif k == "abs":
                # sign(x)*dx with the >= tie at zero (same arm selection as branches)
                d = b.branch(x, 0.0, b.const(1.0), b.const(-1.0))
            else:
                raise AssertionError(k)
            tan.append(b.mul(d, dx))
    return tan


def jvp_tape(t: Tape) -> Tape:
    """Tape computing [f(x); J(x) v] from stacked inputs [x; v]."""
    b = TapeBuilder(2 * t.num_inputs)
    xs = [b.input(j) for j in range(t.num_inputs)]
    vs = [b.input(t.num_inputs + j) for j in range(t.num_inputs)]
    m = copy_into(b, t, xs)
    tg = append_tangent(b, t, m, vs)
    return b.build([m[o] for o in t.outputs] + [tg[o] for o in t.outputs])


# ---------------------------------------------------------------------------
# branch-boundary audit and Taylor patching of removable singularities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryFinding:
    branch_id: int
    cond_value: float
    threshold: float
    then_gradient: tuple[float, ...]
    else_gradient: tuple[float, ...]
    max_mismatch: float


def audit_branches(t: Tape, x, cond_tol: float = 1e-9,
                   deriv_tol: float = 1e-9) -> list[BoundaryFinding]:
    """Compare one-sided arm derivatives at branch thresholds.

    For every branch whose condition sits within ``cond_tol`` of its
    threshold at the given input, differentiate each arm alone and report
    a finding when the gradients disagree.  This surfaces conditionals
    whose pieces do not join smoothly; no rewriting is attempted.
    """
    memo, _ = _run(t, [float(v) for v in x], t.outputs, _FloatSem)
    findings = []
    for nid, n in enumerate(t.nodes):
        if n.op != "branch" or nid not in memo:
            continue
        cval = memo[n.cond]
        if abs(cval - n.threshold) > cond_tol * max(1.0, abs(n.threshold)):
            continue
        grads = []
        ok = True
        for arm in (n.a, n.b):
            sub = Tape(t.nodes, t.num_inputs, (arm,))
            try:
                grads.append(forward_gradient(sub, x)[0])
            except (EvalDomainError, NonDifferentiablePoint):
                grads.append(np.full(t.num_inputs, np.nan))
                ok = False
        mism = float(np.max(np.abs(grads[0] - grads[1]))) if ok else math.inf
        if not ok or mism > deriv_tol:
            findings.append(BoundaryFinding(nid, cval, n.threshold,
                                            tuple(grads[0]), tuple(grads[1]), mism))
    return findings


class _Ser:
    """Coefficient list with a valid length; supports 0/0 cancellation."""

    __slots__ = ("c", "valid")

    def __init__(self, c, valid):
        self.c = list(c)
        self.valid = valid  # coefficients 0..valid-1 are trustworthy


def _series_eval_arm(t: Tape, arm: int, center: float, length: int) -> list[float]:
    """Taylor coefficients of a single-input sub-tape around ``center``.

    Division tolerates a common zero valuation of numerator and
    denominator, which is exactly the removable-singularity case; a true
    pole raises EvalDomainError.
    """
    R = length + 16

    def mk(coeffs, valid=None):
        c = list(coeffs)[:R]
        c += [0.0] * (R - len(c))
        return _Ser(c, R if valid is None else valid)

    def conv(x: _Ser, y: _Ser) -> _Ser:
        v = min(x.valid, y.valid)
        out = [0.0] * R
        for k in range(v):
            out[k] = sum(x.c[j] * y.c[k - j] for j in range(k + 1))
        return _Ser(out, v)

    def run(nid: int, memo):
        if nid in memo:
            return memo[nid]
        n = t.nodes[nid]
        if n.op == "input":
            r = mk([center, 1.0])
        elif n.op == "const":
            r = mk([n.value])
        elif n.op == "add":
            x, y = run(n.a, memo), run(n.b, memo)
            v = min(x.valid, y.valid)
            r = _Ser([a + b for a, b in zip(x.c, y.c)], v)
        elif n.op == "sub":
            x, y = run(n.a, memo), run(n.b, memo)
            v = min(x.valid, y.valid)
            r = _Ser([a - b for a, b in zip(x.c, y.c)], v)
        elif n.op == "mul":
            r = conv(run(n.a, memo), run(n.b, memo))
        elif n.op == "div":
            x, y = run(n.a, memo), run(n.b, memo)
            v = min(x.valid, y.valid)
            val = 0
            while val < v and y.c[val] == 0.0:
                val += 1
            if val == v:
                raise EvalDomainError(nid, "division by identically-zero series")
            if any(x.c[k] != 0.0 for k in range(min(val, v))):
                raise EvalDomainError(nid, "true pole: numerator valuation too low")
            xv = x.c[val:v]
            yv = y.c[val:v]
            q = [0.0] * (v - val)
            for k in range(v - val):
                s = xv[k] - sum(q[j] * yv[k - j] for j in range(k))
                q[k] = s / yv[0]
            r = _Ser(q + [0.0] * (R - len(q)), v - val)
        elif n.op == "apply":
            x = run(n.a, memo)
            j = Jet(tuple(x.c[:min(x.valid, jetmod.MAX_ORDER + 1)]))
            try:
                y = jetmod.jet_apply(n.fn, j)
            except Exception as exc:
                raise EvalDomainError(nid, str(exc)) from exc
            r = mk(y.coeffs, valid=min(x.valid, y.order + 1))
        elif n.op == "branch":
            c = run(n.cond, memo)
            taken = n.a if c.c[0] >= n.threshold else n.b
            r = run(taken, memo)
        else:
            raise AssertionError(n.op)
        memo[nid] = r
        return r

    res = run(arm, {})
    if res.valid < length:
        raise EvalDomainError(arm, "series cancellation consumed too many orders")
    return res.c[:length]


def taylor_patch(t: Tape, branch_id: int, center: float = 0.0,
                 half_width: float = 0.1, order: int = 10,
                 arm: str = "then") -> Tape:
    """Rewrite a removable-singularity branch into a polynomial arm.

    The designated arm is Taylor-expanded around ``center`` (0/0
    cancellations handled exactly at the series level) and the branch is
    replaced by ``|x - center| >= half_width ? original-formula :
    polynomial``.  Only single-input tapes are supported; the polynomial
    is emitted in Horner form in (x - center).
    """
    if t.num_inputs != 1:
        raise ValueError("taylor_patch supports single-input tapes only")
    node = t.nodes[branch_id]
    if node.op != "branch":
        raise ValueError(f"node {branch_id} is not a branch")
    if arm not in ("then", "else"):
        raise ValueError("arm must be 'then' or 'else'")
    formula_arm = node.a if arm == "then" else node.b
    coeffs = _series_eval_arm(t, formula_arm, center, order + 1)

    b = TapeBuilder(1)
    m: list[int] = []
    for nid, n in enumerate(t.nodes):
        if nid == branch_id:
            e = b.sub(b.input(0), b.const(center))
            c = b.apply(ABS, e)
            p = b.const(coeffs[order])
            for k in range(order - 1, -1, -1):
                p = b.add(b.const(coeffs[k]), b.mul(e, p))
            m.append(b.branch(c, half_width, m[formula_arm], p))
        elif n.op == "input":
            m.append(b.input(n.a))
        elif n.op == "const":
            m.append(b.const(n.value))
        elif n.op == "apply":
            m.append(b.apply(n.fn, m[n.a]))
        elif n.op == "branch":
            m.append(b.branch(m[n.cond], n.threshold, m[n.a], m[n.b]))
        else:
            m.append(b._push(Node(n.op, a=m[n.a], b=m[n.b])))
    return b.build([m[o] for o in t.outputs])
