"""Hybrid fixed-step simulator with sensitivity co-integration.

Models are flattened state-space systems whose right-hand side, outputs
and delayed quantities live on one tape with input layout::

    [x_0..x_{n-1}, t, theta_0..theta_{s-1}, dval_0.., dslope_0..]

``dval_j``/``dslope_j`` are the value and time-slope of delay slot j's
carried expression at ``t - h_j``, provided by the integrator from the
recorded trajectory (cubic Hermite between accepted nodes, prehistory
expression before the start time).

Event handling is sign-change detection on guard tapes between accepted
steps, bisection localization to the configured tolerance, a two-phase
state update, and a deadtime that suppresses re-triggering right after a
discontinuity.  Impact events apply the energy-balance velocity update of
:func:`impact_update`; sensitivity propagation across any other event
kind is intentionally refused (SensitivityAcrossEvent).

Integrators are deliberately fixed-step (midpoint and classic RK4) so
finite-difference oracles stay deterministic.  Models are immutable and
each ``integrate`` call owns its private workspace: parameter sweeps may
run concurrently.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .agdm import d_output_name
from .errors import (
    DelayUnderflow,
    EventStorm,
    NonTransversal,
    SensitivityAcrossEvent,
    SingularMetric,
    UnknownParameter,
)
from .paramexpr import ParamExpr
from .tape import (
    Tape,
    TapeBuilder,
    append_tangent,
    compile_tape,
    copy_into,
    reverse_gradient,
    tape_eval,
)


def smooth_heaviside(a: float, x: float) -> float:
    """Smooth step 1/2 + atan(a*x)/pi; limits 0 and 1 at -/+ infinity.

    The slope ``a`` trades approximation sharpness against stiffness of
    the resulting dynamics; there is no universally good value, which is
    why SimConfig exposes it.
    """
    if a <= 0.0:
        raise ValueError("slope a must be positive")
    return 0.5 + math.atan(a * x) / math.pi


# ---------------------------------------------------------------------------
# model containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelaySlot:
    delay: ParamExpr                 # h(theta), must stay >= step
    prehistory: ParamExpr | None     # expression of t and theta; None = undefined
    analytic_slope: bool = True      # slope queries allowed on this slot


@dataclass(frozen=True)
class ImpactSurface:
    """Data of the energy-balance impact law.

    The state convention is [q (dim), v (dim)]: positions first, then
    velocities.  ``guard`` is a tape over [q..., t]; the potentials give
    the energy on the f>=0 side and the f<0 side.
    """

    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    potential_pos: Callable[[np.ndarray], float]
    potential_neg: Callable[[np.ndarray], float]
    guard: Tape

    def __post_init__(self):
        if self.guard.num_inputs != self.dim + 1:
            raise ValueError("impact guard must take [q..., t]")


@dataclass(frozen=True)
class EventSpec:
    guard: Tape                       # inputs [x (n), t] -> scalar
    action: object                    # ImpactSurface or callable(x, t) -> x
    deadtime: float | None = None     # None: 2 steps

    def __post_init__(self):
        if self.deadtime is not None and not self.deadtime > 0.0:
            raise ValueError("deadtime must be positive")


@dataclass(frozen=True)
class OdeModel:
    n: int
    tape: Tape
    param_names: tuple[str, ...]
    params: dict[str, float]
    state_names: tuple[str, ...]
    output_names: tuple[str, ...]
    init_exprs: tuple[ParamExpr, ...] | None = None
    init_fn: Callable | None = None              # theta env -> ndarray(n)
    init_time: ParamExpr | None = None
    events: tuple[EventSpec, ...] = ()
    delays: tuple[DelaySlot, ...] = ()
    discrete: bool = False
    sample_time: float | None = None
    has_sensitivity: bool = False
    # exact anti-windup pinning of saturated integrator states, applied
    # after each accepted step (the gated rhs handles the interior)
    state_clamps: tuple[tuple[int, float, float], ...] = ()

    @property
    def n_outputs(self) -> int:
        return len(self.output_names)

    def theta_env(self, overrides=None) -> dict[str, float]:
        env = dict(self.params)
        if overrides:
            unknown = set(overrides) - set(self.param_names)
            if unknown:
                raise KeyError(f"unknown parameters {sorted(unknown)}")
            env.update(overrides)
        return env

    def initial_state(self, env) -> np.ndarray:
        if self.init_exprs is not None:
            return np.array([g.evaluate(env) for g in self.init_exprs])
        return np.asarray(self.init_fn(env), dtype=float)

    def start_time(self, env, default: float) -> float:
        if self.init_time is None:
            return default
        return self.init_time.evaluate(env)


def make_ode_model(n, tape, param_names, params, state_names, output_names,
                   **kw) -> OdeModel:
    return OdeModel(n, tape, tuple(param_names), dict(params),
                    tuple(state_names), tuple(output_names), **kw)


@dataclass(frozen=True)
class SimConfig:
    step: float
    tf: float
    t0: float = 0.0
    method: str = "rk4"               # rk4 | midpoint
    event_tol: float | None = None    # None: step * 1e-6
    heaviside_a: float = 1e3
    max_events_per_step: int = 8

    def __post_init__(self):
        if not self.step > 0.0:
            raise ValueError("step must be positive")
        if self.method not in ("rk4", "midpoint"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.event_tol is not None and not (0.0 < self.event_tol < self.step):
            raise ValueError("event_tol must lie in (0, step)")
        if not self.heaviside_a > 0.0:
            raise ValueError("heaviside_a must be positive")

    @property
    def resolved_event_tol(self) -> float:
        return self.event_tol if self.event_tol is not None else self.step * 1e-6


@dataclass(frozen=True)
class EventRecord:
    time: float
    guard_index: int
    pre_state: np.ndarray
    post_state: np.ndarray
    pre_outputs: np.ndarray | None = None
    post_outputs: np.ndarray | None = None


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray                # (len(times), n)
    outputs: np.ndarray               # (len(times), q)
    events: list[EventRecord]
    state_names: tuple[str, ...]
    output_names: tuple[str, ...]

    def output(self, name: str) -> np.ndarray:
        return self.outputs[:, self.output_names.index(name)]

    def at_time(self, t: float, column: str) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        return float(self.output(column)[i]) if column in self.output_names \
            else float(self.states[i, self.state_names.index(column)])

    def to_csv(self) -> str:
        """One row per accepted step plus one per event (pre and post);
        full double precision."""
        cols = ["t", *self.state_names, *self.output_names]
        rows = [(t, self.states[i], self.outputs[i], 0)
                for i, t in enumerate(self.times)]
        # event rows are interleaved by time, pre before post
        nq = len(self.output_names)
        for ev in self.events:
            pre_y = ev.pre_outputs if ev.pre_outputs is not None else [math.nan] * nq
            post_y = ev.post_outputs if ev.post_outputs is not None else [math.nan] * nq
            rows.append((ev.time, ev.pre_state, pre_y, 1))
            rows.append((ev.time, ev.post_state, post_y, 2))
        rows.sort(key=lambda r: (r[0], r[3]))
        out = [",".join(cols)]
        for t, x, y, _ in rows:
            vals = [t, *x, *y]
            out.append(",".join(f"{v:.17g}" for v in vals))
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# history buffers (delay support)
# ---------------------------------------------------------------------------

class _History:
    """Per-slot record of (time, value, slope) with cubic interpolation."""

    def __init__(self, slot: DelaySlot, env, t_start: float):
        self.slot = slot
        self.t_start = t_start
        self.env = env
        self.times: list[float] = []
        self.values: list[float] = []
        self.slopes: list[float] = []
        if slot.prehistory is not None:
            self._pre = slot.prehistory
            self._dpre = slot.prehistory.diff("t")
        else:
            self._pre = None
            self._dpre = None

    def push(self, t: float, v: float, s: float):
        self.times.append(t)
        self.values.append(v)
        self.slopes.append(s)

    def _pre_value(self, tau: float) -> tuple[float, float]:
        if self._pre is None:
            raise DelayUnderflow(
                f"lookup at t={tau} precedes history and no prehistory is defined")
        env = dict(self.env)
        env["t"] = tau
        return self._pre.evaluate(env), self._dpre.evaluate(env)

    def lookup(self, tau: float, prefer_pre: bool = False) -> tuple[float, float]:
        """Value and time-slope of the carried signal at time tau.

        The carried signal may jump at the start time (prehistory on one
        side, dynamics on the other); ``prefer_pre`` selects the left
        limit when the lookup lands exactly on that boundary, so steps
        on either side of an aligned breakpoint both see a consistent
        one-sided right-hand side.
        """
        tol = 1e-9 * max(1.0, abs(self.t_start))
        if tau < self.t_start - tol or (prefer_pre and tau <= self.t_start + tol):
            return self._pre_value(tau)
        if not self.times:
            return self._pre_value(tau)
        tau = max(tau, self.times[0])
        if tau >= self.times[-1]:
            # clamp to the newest node (reachable only by roundoff)
            return self.values[-1], self.slopes[-1]
        i = bisect.bisect_right(self.times, tau) - 1
        t0, t1 = self.times[i], self.times[i + 1]
        if t1 == t0:
            return self.values[i + 1], self.slopes[i + 1]
        w = (tau - t0) / (t1 - t0)
        h = t1 - t0
        v0, v1 = self.values[i], self.values[i + 1]
        s0, s1 = self.slopes[i], self.slopes[i + 1]
        h00 = (1 + 2 * w) * (1 - w) ** 2
        h10 = w * (1 - w) ** 2
        h01 = w * w * (3 - 2 * w)
        h11 = w * w * (w - 1)
        val = h00 * v0 + h10 * h * s0 + h01 * v1 + h11 * h * s1
        dw = 1.0 / h
        d00 = 6 * w * (w - 1) * dw
        d10 = (3 * w * w - 4 * w + 1)
        d01 = -6 * w * (w - 1) * dw
        d11 = (3 * w * w - 2 * w)
        slope = d00 * v0 + d10 * s0 + d01 * v1 + d11 * s1
        return val, slope


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

class _Runner:
    """Owns the per-call mutable state of one integration."""

    def __init__(self, m: OdeModel, c: SimConfig, env):
        self.m = m
        self.c = c
        self.env = env
        self.theta = [env[p] for p in m.param_names]
        self.J = len(m.delays)
        self.compiled = compile_tape(m.tape)
        self.interpreted = False
        self.h_delays = [slot.delay.evaluate(env) for slot in m.delays]
        for h in self.h_delays:
            if h < c.step:
                raise ValueError(f"delay {h} smaller than the step {c.step}")
        self.histories: list[_History] | None = None
        self.step_anchor = -math.inf     # start time of the step in progress
        # slope tape: time-derivative of the slot expressions
        self.slope_eval = self._build_slope_eval() if self.J else None

    def _build_slope_eval(self):
        # time-derivative of the slot expressions: inputs are the model
        # tape inputs followed by [xdot (n), slope-of-dval (J)]
        m = self.m
        base = m.tape.num_inputs
        n, s, J = m.n, len(m.param_names), self.J
        b = TapeBuilder(base + n + J)
        orig_inputs = [b.input(j) for j in range(base)]
        node_map = copy_into(b, m.tape, orig_inputs)
        zero = b.const(0.0)
        seeds = [b.input(base + i) for i in range(n)]          # x -> xdot
        seeds.append(b.const(1.0))                             # t -> 1
        seeds += [zero] * s                                    # theta fixed
        seeds += [b.input(base + n + j) for j in range(J)]     # dval -> its slope
        seeds += [zero] * J                                    # dslope: curvature dropped
        tg = append_tangent(b, m.tape, node_map, seeds)
        n_rhs_out = n + len(m.output_names)
        slot_outs = [m.tape.outputs[n_rhs_out + j] for j in range(J)]
        t = b.build([tg[o] for o in slot_outs])
        return compile_tape(t)

    def _tape_inputs(self, x, t, delayed_vals, delayed_slopes):
        vals = list(x) + [t] + self.theta
        if self.J:
            vals += delayed_vals + delayed_slopes
        return vals

    def eval_tape(self, x, t):
        """Returns (rhs, outputs, slot values) at one point in time."""
        m = self.m
        dv, ds = self._delayed(t)
        vals = self._tape_inputs(x, t, dv, ds)
        if not self.interpreted:
            try:
                out = self.compiled(vals)
            except (ZeroDivisionError, ValueError, OverflowError):
                # re-run interpreted: either a dead branch arm misfired
                # (fine, keep going) or a real domain error gets a node id
                self.interpreted = True
                out = tape_eval(m.tape, vals)
        else:
            out = tape_eval(m.tape, vals)
        n, q = m.n, len(m.output_names)
        return out[:n], out[n:n + q], out[n + q:]

    def _delayed(self, t):
        if not self.J:
            return [], []
        dv, ds = [], []
        for j, hist in enumerate(self.histories):
            # a step that starts left of the prehistory boundary reads the
            # left limit at the boundary; one starting on it reads the right
            prefer_pre = self.step_anchor - self.h_delays[j] \
                < hist.t_start - 1e-9 * max(1.0, abs(hist.t_start))
            v, s = hist.lookup(t - self.h_delays[j], prefer_pre)
            dv.append(v)
            ds.append(s)
        return dv, ds

    def record(self, t, x, rhs, slots):
        if not self.J:
            return
        # the node being recorded opens the next segment: right-sided lookups
        self.step_anchor = t
        dv, ds = self._delayed(t)
        slope_in = list(x) + [t] + self.theta + dv + ds + list(rhs) + ds
        slopes = self.slope_eval(slope_in)
        for j, hist in enumerate(self.histories):
            hist.push(t, slots[j], slopes[j])

    def rhs(self, x, t):
        return np.asarray(self.eval_tape(x, t)[0])

    def step_from(self, x, t, h):
        self.step_anchor = t
        f = self.rhs
        if self.c.method == "midpoint":
            k1 = f(x, t)
            x_new = x + h * f(x + 0.5 * h * k1, t + 0.5 * h)
        else:
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        for i, lo, hi in self.m.state_clamps:
            x_new[i] = min(hi, max(lo, x_new[i]))
        return x_new


def _guard_value(compiled, x, t) -> float:
    return compiled(list(x) + [t])[0]


def integrate(m: OdeModel, c: SimConfig, theta=None) -> Trajectory:
    """Fixed-step march with event localization and delay buffers."""
    env = m.theta_env(theta)
    if m.has_sensitivity:
        bad = [i for i, ev in enumerate(m.events)
               if not isinstance(ev.action, ImpactSurface)]
        if bad:
            raise SensitivityAcrossEvent(
                f"events {bad} are not impact surfaces; sensitivity "
                "propagation across general events is not supported")
    if m.discrete:
        return _integrate_discrete(m, c, env)

    r = _Runner(m, c, env)
    t = m.start_time(env, c.t0)
    x = m.initial_state(env)
    for i, lo, hi in m.state_clamps:
        x[i] = min(hi, max(lo, x[i]))
    if m.delays:
        r.histories = [_History(slot, env, t) for slot in m.delays]
    r.step_anchor = t

    guards = [compile_tape(ev.guard) for ev in m.events]
    deadtimes = [ev.deadtime if ev.deadtime is not None else 2.0 * c.step
                 for ev in m.events]
    last_fire = [-math.inf] * len(m.events)

    times = [t]
    rhs0, y0, slots0 = r.eval_tape(x, t)
    r.record(t, x, rhs0, slots0)
    states = [x.copy()]
    outputs = [list(y0)]
    events: list[EventRecord] = []

    g_prev = [_guard_value(g, x, t) for g in guards]
    tol = c.resolved_event_tol
    eps = 1e-12 * max(1.0, abs(c.tf))
    anchor_t = t       # stepping is anchored to kill accumulation drift
    k = 0

    while t < c.tf - eps:
        t_next = anchor_t + (k + 1) * c.step
        if t_next > c.tf:
            t_next = c.tf
        h = t_next - t
        events_this_step = 0
        while True:
            x_new = r.step_from(x, t, h)
            fired = None
            for i, g in enumerate(guards):
                if t_next <= last_fire[i] + deadtimes[i]:
                    continue        # whole step inside the deadtime window
                g_new = _guard_value(g, x_new, t_next)
                if (g_prev[i] >= 0.0) != (g_new >= 0.0):
                    fired = i
                    break
            if fired is None:
                break
            events_this_step += 1
            if events_this_step > c.max_events_per_step:
                raise EventStorm(f"more than {c.max_events_per_step} events near t={t}")
            t_star, x_pre = _locate_event(r, guards[fired], x, t, h, tol)
            if t_star < last_fire[fired] + deadtimes[fired]:
                # crossing still inside the deadtime: pass through silently
                rhs_p, y_p, slots_p = r.eval_tape(x_pre, t_star)
                r.record(t_star, x_pre, rhs_p, slots_p)
                x = x_pre
            else:
                x_post = _apply_action(m.events[fired], x_pre, t_star, m.n)
                # record both sides so interpolation never crosses the jump
                rhs_pre, y_pre, slots_pre = r.eval_tape(x_pre, t_star)
                r.record(t_star, x_pre, rhs_pre, slots_pre)
                rhs_post, y_post, slots_post = r.eval_tape(x_post, t_star)
                r.record(t_star, x_post, rhs_post, slots_post)
                events.append(EventRecord(t_star, fired, x_pre.copy(), x_post.copy(),
                                          np.asarray(y_pre), np.asarray(y_post)))
                last_fire[fired] = t_star
                x = x_post
            t = t_star
            anchor_t, k = t, 0
            g_prev = [_guard_value(g, x, t) for g in guards]
            t_next = min(anchor_t + c.step, c.tf)
            h = t_next - t
            if h <= eps:
                break
        if h <= eps:
            break
        t = t_next
        k += 1
        x = x_new
        r.step_anchor = t        # node values are right-continuous at jumps
        rhs_n, y_n, slots_n = r.eval_tape(x, t)
        r.record(t, x, rhs_n, slots_n)
        g_prev = [_guard_value(g, x, t) for g in guards]
        times.append(t)
        states.append(x.copy())
        outputs.append(list(y_n))

    return Trajectory(np.array(times), np.array(states), np.array(outputs),
                      events, m.state_names, m.output_names)


def _locate_event(r: _Runner, guard, x, t, h, tol):
    """Bisection from (t, x) over sub-steps of [t, t+h]."""
    g0 = _guard_value(guard, x, t)
    lo, hi = 0.0, h
    x_hi = r.step_from(x, t, h)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        x_mid = r.step_from(x, t, mid) if mid > 0 else x
        g_mid = _guard_value(guard, x_mid, t + mid)
        if (g0 >= 0.0) != (g_mid >= 0.0):
            hi, x_hi = mid, x_mid
        else:
            lo = mid
        g_hi = _guard_value(guard, x_hi, t + hi)
        if hi - lo <= tol and abs(g_hi) <= 1e-8 * max(1.0, abs(g0)):
            break
        if hi - lo <= 1e-15 * max(1.0, abs(t)):
            break
    return t + hi, x_hi


def _apply_action(ev: EventSpec, x, t, n):
    if isinstance(ev.action, ImpactSurface):
        s = ev.action
        d = s.dim
        q, v = x[:d], x[d:2 * d]
        v_post = impact_update(s, q, v, t)
        out = x.copy()
        out[d:2 * d] = v_post
        return out
    return np.asarray(ev.action(x.copy(), t), dtype=float)


def _integrate_discrete(m: OdeModel, c: SimConfig, env) -> Trajectory:
    if m.events or m.delays:
        raise NotImplementedError("discrete models with events/delays")
    ts = m.sample_time
    theta = [env[p] for p in m.param_names]
    f = compile_tape(m.tape)
    t = m.start_time(env, c.t0)
    x = m.initial_state(env)
    n, q = m.n, len(m.output_names)
    times, states, outputs = [], [], []
    steps = int(math.floor((c.tf - t) / ts + 1e-9))
    for _ in range(steps + 1):
        out = f(list(x) + [t] + theta)
        times.append(t)
        states.append(x.copy())
        outputs.append(out[n:n + q])
        x = np.asarray(out[:n])
        t += ts
    return Trajectory(np.array(times), np.array(states), np.array(outputs),
                      [], m.state_names, m.output_names)


# ---------------------------------------------------------------------------
# impact law
# ---------------------------------------------------------------------------

def impact_update(s: ImpactSurface, q, v_pre, t) -> np.ndarray:
    """Velocity update across a potential-energy switching surface.

    In the frame adapted to the surface (tangent directions, plus the
    normal direction orthogonal to them under the kinetic metric A), the
    tangential velocity is preserved and the normal component balances
    kinetic energy relative to the moving surface against the potential
    jump; when the balance has no real solution the normal component
    reflects instead (rebound).
    """
    q = np.asarray(q, dtype=float)
    v_pre = np.asarray(v_pre, dtype=float)
    d = s.dim
    A = np.asarray(s.metric(q), dtype=float)
    if A.shape != (d, d):
        raise ValueError(f"metric must be {d}x{d}")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("metric must be symmetric")

    grad = reverse_gradient(s.guard, list(q) + [t], 0)
    gq = grad[:d]
    gt = grad[d]
    if np.linalg.norm(gq) == 0.0:
        raise NonTransversal("guard gradient vanishes at the impact point")

    # normal direction: A-orthogonal to the tangent space ker(gq)
    try:
        e_n = np.linalg.solve(A, gq)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc
    gn = float(gq @ e_n)          # = e_n^T A e_n = a_nn * (normal scale)^2
    if abs(gn) < 1e-14 * max(1.0, float(gq @ gq)):
        raise SingularMetric("metric is singular along the guard normal")

    # normal coordinate of the velocity and of the surface speed
    vn_pre = float(gq @ v_pre) / gn
    v_wall = -gt / gn
    a_nn = gn                      # e_n^T A e_n with this normalization

    transversal = float(gq @ v_pre) + gt
    if transversal <= 0.0:
        raise NonTransversal(
            f"guard not increasing along the trajectory (rate {transversal:.3e})")

    e_pos = float(s.potential_pos(q))
    e_neg = float(s.potential_neg(q))
    rel = vn_pre - v_wall
    rhs = a_nn * rel * rel + (e_neg - e_pos)
    if rhs >= 0.0:
        mag = math.sqrt(rhs / a_nn)
        vn_post = v_wall + math.copysign(mag, rel)
    else:
        vn_post = v_wall - rel
    return v_pre + (vn_post - vn_pre) * e_n


def impact_event(surface: ImpactSurface, n: int,
                 deadtime: float | None = None) -> EventSpec:
    """Wrap an impact surface as a full-state event guard."""
    b = TapeBuilder(n + 1)
    qs = [b.input(i) for i in range(surface.dim)]
    tnode = b.input(n)
    node_map = copy_into(b, surface.guard, qs + [tnode])
    guard = b.build([node_map[surface.guard.outputs[0]]])
    return EventSpec(guard, surface, deadtime)


# ---------------------------------------------------------------------------
# sensitivity extension (variational system)
# ---------------------------------------------------------------------------

def sensitivity_extend(m: OdeModel, theta: str) -> OdeModel:
    """Append the sensitivity states d x_i / d theta to a model.

    The added states obey the variational equations (the Jacobian of the
    right-hand side times the sensitivities plus the explicit parameter
    derivative), built once as tape nodes by source transformation;
    initial conditions are dg/dtheta - f(g, h, theta) * dh/dtheta.  For
    delayed models the delayed tangent also carries the
    -x'(t-h) * dh/dtheta correction when the delay itself depends on the
    parameter.
    """
    if theta not in m.param_names:
        raise UnknownParameter(theta, m.param_names)

    n, s, J = m.n, len(m.param_names), len(m.delays)
    q = len(m.output_names)
    base = m.tape.num_inputs
    theta_idx = m.param_names.index(theta)

    b = TapeBuilder(2 * n + 1 + s + 2 * 2 * J)
    xs = [b.input(i) for i in range(n)]
    ss = [b.input(n + i) for i in range(n)]
    tn = b.input(2 * n)
    ths = [b.input(2 * n + 1 + k) for k in range(s)]
    off = 2 * n + 1 + s
    dvals = [b.input(off + j) for j in range(2 * J)]
    dslopes = [b.input(off + 2 * J + j) for j in range(2 * J)]

    orig_inputs = xs + [tn] + ths + dvals[:J] + dslopes[:J]
    node_map = copy_into(b, m.tape, orig_inputs)

    env_nodes = {p: ths[k] for k, p in enumerate(m.param_names)}
    seeds = list(ss)
    seeds.append(b.const(0.0))                                  # t
    for k in range(s):
        seeds.append(b.const(1.0 if k == theta_idx else 0.0))   # theta_k
    for j in range(J):                                          # dval_j
        dh = m.delays[j].delay.diff(theta)
        sd = dvals[J + j]
        if dh.is_zero():
            seeds.append(sd)
        else:
            dh_node = dh.to_tape(b, env_nodes)
            seeds.append(b.sub(sd, b.mul(dslopes[j], dh_node)))
    zero = b.const(0.0)
    for j in range(J):                                          # dslope_j
        seeds.append(zero)
    tg = append_tangent(b, m.tape, node_map, seeds)

    o = m.tape.outputs
    rhs_nodes = [node_map[o[i]] for i in range(n)]
    drhs_nodes = [tg[o[i]] for i in range(n)]
    y_nodes = [node_map[o[n + i]] for i in range(q)]
    dy_nodes = [tg[o[n + i]] for i in range(q)]
    slot_nodes = [node_map[o[n + q + j]] for j in range(J)]
    dslot_nodes = [tg[o[n + q + j]] for j in range(J)]
    tape = b.build(rhs_nodes + drhs_nodes + y_nodes + dy_nodes
                   + slot_nodes + dslot_nodes)

    # initial conditions for the sensitivity states:
    # s(h) = dg/dtheta - f(g, h, theta) * dh/dtheta
    dh_time = m.init_time.diff(theta) if m.init_time is not None else None
    init_exprs = None
    init_fn = None
    if m.init_exprs is not None and (dh_time is None or dh_time.is_zero()):
        init_exprs = tuple(m.init_exprs) + tuple(g.diff(theta) for g in m.init_exprs)
    else:
        def init_fn(env, _m=m, _theta=theta):
            x0 = _m.initial_state(env)
            if _m.init_exprs is not None:
                dg = np.array([g.diff(_theta).evaluate(env) for g in _m.init_exprs])
            else:
                dg = _fd_init(_m, env, _theta)
            if _m.init_time is None:
                return np.concatenate([x0, dg])
            dh0 = _m.init_time.diff(_theta).evaluate(env)
            if dh0 == 0.0:
                return np.concatenate([x0, dg])
            if _m.delays:
                raise NotImplementedError(
                    "parameter-dependent start time with delays")
            h0 = _m.start_time(env, 0.0)
            theta_vals = [env[p] for p in _m.param_names]
            f0 = tape_eval(_m.tape, list(x0) + [h0] + theta_vals)[:_m.n]
            return np.concatenate([x0, dg - np.asarray(f0) * dh0])

    new_delays = tuple(m.delays) + tuple(
        DelaySlot(slot.delay,
                  None if slot.prehistory is None else slot.prehistory.diff(theta),
                  analytic_slope=False)
        for slot in m.delays)

    events = tuple(_widen_event(ev, m.n, 2 * m.n) for ev in m.events)

    return OdeModel(
        2 * n, tape, m.param_names, dict(m.params),
        m.state_names + tuple(d_output_name(nm, theta) for nm in m.state_names),
        m.output_names + tuple(d_output_name(nm, theta) for nm in m.output_names),
        init_exprs=init_exprs, init_fn=init_fn, init_time=m.init_time,
        events=events, delays=new_delays, discrete=m.discrete,
        sample_time=m.sample_time, has_sensitivity=True,
        state_clamps=m.state_clamps)


def _fd_init(m: OdeModel, env, theta: str):
    h = 1e-7 * max(1.0, abs(env[theta]))
    up = dict(env)
    up[theta] = env[theta] + h
    dn = dict(env)
    dn[theta] = env[theta] - h
    return (m.initial_state(up) - m.initial_state(dn)) / (2 * h)


def _widen_event(ev: EventSpec, n_old: int, n_new: int) -> EventSpec:
    b = TapeBuilder(n_new + 1)
    xs = [b.input(i) for i in range(n_old)]
    tn = b.input(n_new)
    node_map = copy_into(b, ev.guard, xs + [tn])
    return EventSpec(b.build([node_map[ev.guard.outputs[0]]]), ev.action, ev.deadtime)


def dde_extend(m: OdeModel, theta: str) -> OdeModel:
    """Sensitivity extension of a delayed model (theta may be the delay)."""
    if not m.delays:
        raise ValueError("model has no delays; use sensitivity_extend")
    return sensitivity_extend(m, theta)
