"""Fixed-step integration, trajectory recording and ergodic averages."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .saddle import SaddlePoint, kkt_residual, lagrangian
from .state import Layout, OutputState, StackedState, as_flat

log = logging.getLogger(__name__)

SCHEMES = ("euler", "rk4")


class IntegrationAborted(FloatingPointError):
    """A step produced non-finite values; ``last_state`` is the last finite state."""

    def __init__(self, message, last_state, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    horizon: float = 50.0
    record_every: int = 100
    scheme: str = "euler"
    divergence_bound: float = 1e9

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if not self.horizon >= self.step:
            raise ValueError("horizon must be at least one step")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if abs(self.n_steps * self.step - self.horizon) > 1e-9 * self.horizon:
            raise ValueError("horizon must be an integer multiple of the step size")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.step))

    def to_dict(self):
        return dict(self.__dict__)


def _evaluate(field_fn, net, s):
    """Call a field and normalize its result to ``(ds, z, evaluation)``."""
    ev = field_fn(net, s)
    if hasattr(ev, "ds"):
        return ev.ds, ev.z, ev
    ds = np.asarray(ev, dtype=float)
    return ds, s, None


def _advance(field_fn, net, s, h, scheme, k1=None):
    if k1 is None:
        k1 = _evaluate(field_fn, net, s)[0]
    if scheme == "euler":
        return s + h * k1
    k2 = _evaluate(field_fn, net, s + 0.5 * h * k1)[0]
    k3 = _evaluate(field_fn, net, s + 0.5 * h * k2)[0]
    k4 = _evaluate(field_fn, net, s + h * k3)[0]
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(net, field_fn, s, h, scheme="euler"):
    """One explicit Euler or classical Runge-Kutta step of ``s' = field(net, s)``.

    Returns the same kind of object it was given (flat array or
    :class:`StackedState`).  Raises :class:`IntegrationAborted` if the new
    state is not finite.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    wrapped = isinstance(s, StackedState)
    data = s.data if wrapped else np.asarray(s, dtype=float)
    if not np.all(np.isfinite(data)):
        raise IntegrationAborted("initial state is not finite", data)
    new = _advance(field_fn, net, data, h, scheme)
    if not np.all(np.isfinite(new)):
        raise IntegrationAborted("step produced non-finite values", data)
    return StackedState(s.layout, new) if wrapped else new


# --------------------------------------------------------------------------
# diagnostics


def lyapunov_v1(net, s, ref: SaddlePoint, x=None, form="bregman") -> float:
    """Bregman-type distance of the state ``s`` to the reference saddle.

    The primal part is ``sum_i phi_i(x*_i) - phi_i(x_i) - (x*_i - x_i).y_i``,
    the conjugate Bregman divergence written without conjugates.  The
    ``mu, omega, nu`` blocks contribute half squared distances.

    For ``gamma`` the default ``form="bregman"`` uses the same construction
    with ``lam = [gamma]^+`` as the mirror map of half the squared norm on
    the orthant, ``0.5|lam*|^2 - 0.5|lam|^2 - (lam* - lam).gamma``.  It
    equals ``0.5 |gamma - gamma*|^2`` whenever both are nonnegative and,
    unlike that expression, never increases along the flow when a
    multiplier sits at a negative ``gamma``.  ``form="squared"`` gives the
    plain half squared distance.
    """
    layout = Layout.of(net)
    Y, G, M, W, V = layout.views(as_flat(s, layout))
    Xs = layout.views(ref.z_star)[0]
    _, Gs, Ms, Ws, Vs = layout.views(ref.s_star)
    if x is None:
        from .dynamics import output_map

        x = output_map(net, s).x
    total = 0.0
    for a, xs, xi, yi in zip(net.agents, Xs, x, Y):
        total += float(a.generator.value(xs) - a.generator.value(xi) - (xs - xi) @ yi)
    if form == "bregman":
        lam, lam_s = np.maximum(G, 0.0), np.maximum(Gs, 0.0)
        total += float(np.sum(0.5 * lam_s**2 - 0.5 * lam**2 - (lam_s - lam) * G))
    elif form == "squared":
        total += 0.5 * float(np.sum((G - Gs) ** 2))
    else:
        raise ValueError(f"unknown form {form!r}")
    for u, v in ((M, Ms), (W, Ws), (V, Vs)):
        total += 0.5 * float(np.sum((u - v) ** 2))
    return total


@dataclass
class ErgodicAverages:
    """Running time averages ``(1/t) int_0^t z`` of the output trajectory."""

    layout: Layout
    t: float
    z_hat: np.ndarray

    @property
    def output(self):
        return OutputState(self.layout, self.z_hat)

    x_hat = property(lambda self: self.output.x)
    lambda_hat = property(lambda self: self.output.lam)
    mu_hat = property(lambda self: self.output.mu)
    omega_hat = property(lambda self: self.output.omega)
    nu_hat = property(lambda self: self.output.nu)


def duality_gap(net, averages: ErgodicAverages, ref: SaddlePoint, t=None) -> float:
    """``L(x^, lam*, mu*, w^, v^) - L(x*, lam^, mu^, w*, v*)`` clamped at zero."""
    if ref is None:
        raise ValueError("a reference saddle point is required")
    t = averages.t if t is None else t
    if not t > 0:
        raise ValueError("the averaging time must be positive")
    layout = Layout.of(net)
    Xh, Lh, Mh, Wh, Vh = layout.views(averages.z_hat)
    Xs, Ls, Ms, Ws, Vs = layout.views(ref.z_star)
    gap = lagrangian(net, layout.pack(Xh, Ls, Ms, Wh, Vh)) - lagrangian(net, layout.pack(Xs, Lh, Mh, Ws, Vs))
    if gap < -1e-9:
        log.warning("duality gap %.3e is negative beyond rounding at t=%g", gap, t)
    return max(gap, 0.0)


def feasibility_residuals(net, x):
    """``(||[sum g_i(x_i)]^+||, ||sum A_i x_i - b_i||)``."""
    ineq = np.maximum(net.ineq_values(x).sum(axis=0), 0.0)
    eq = net.eq_values(x).sum(axis=0)
    return float(np.linalg.norm(ineq)), float(np.linalg.norm(eq))


def _digest(ev):
    if ev is None or not ev.selected_subgradients:
        return ""
    h = hashlib.sha256()
    for k in sorted(ev.selected_subgradients):
        h.update(np.ascontiguousarray(ev.selected_subgradients[k]).tobytes())
    return h.hexdigest()[:16]


@dataclass
class TrajectoryRecord:
    layout: Layout | None
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    averages: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    selection_digests: list = field(default_factory=list)
    status: str = "OK"
    steps_taken: int = 0

    def __len__(self):
        return len(self.times)

    def diag(self, name):
        return np.asarray(self.diagnostics.get(name, []), dtype=float)

    def state_at(self, k):
        return StackedState(self.layout, self.states[k])

    def output_at(self, k):
        return OutputState(self.layout, self.outputs[k])


DIAGNOSTIC_COLUMNS = ("V1", "kkt_residual", "ineq_residual", "eq_residual", "s_norm", "gap", "x_error")


def _record(rec, net, t, s, z, z_hat, ev, reference, with_diagnostics):
    rec.times.append(t)
    rec.states.append(s.copy())
    rec.outputs.append(np.array(z, dtype=float))
    rec.averages.append(z_hat.copy())
    rec.selection_digests.append(_digest(ev))
    d = rec.diagnostics
    d.setdefault("s_norm", []).append(float(np.linalg.norm(s)))
    d.setdefault("z_norm", []).append(float(np.linalg.norm(z)))
    if net is None or not with_diagnostics:
        return
    layout = rec.layout
    X = layout.views(z)[0]
    ineq, eq = feasibility_residuals(net, X)
    d.setdefault("ineq_residual", []).append(ineq)
    d.setdefault("eq_residual", []).append(eq)
    d.setdefault("kkt_residual", []).append(kkt_residual(net, z))
    nan = float("nan")
    if reference is None:
        for k in ("V1", "gap", "x_error"):
            d.setdefault(k, []).append(nan)
        return
    d.setdefault("V1", []).append(lyapunov_v1(net, s, reference, X))
    gap = duality_gap(net, ErgodicAverages(layout, t, z_hat), reference) if t > 0 else nan
    d.setdefault("gap", []).append(gap)
    d.setdefault("x_error", []).append(float(np.linalg.norm(X - reference.x)))


def integrate(net, field_fn, s0, cfg: IntegratorConfig, reference: SaddlePoint | None = None,
              diagnostics=True):
    """Integrate ``s' = field(net, s)`` over ``[0, cfg.horizon]``.

    Snapshots (state, output, running average and diagnostics) are taken
    every ``cfg.record_every`` steps and at the final time.  The running
    average of the output uses the trapezoid rule over every step.  If the
    state norm exceeds ``cfg.divergence_bound`` or turns non-finite, the run
    stops with ``status == "DIVERGED"`` and the last finite state recorded.
    """
    layout = Layout.of(net) if net is not None else None
    s = np.array(as_flat(s0, layout) if layout else s0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(s)):
        raise ValueError("initial state must be finite")
    h = cfg.step
    rec = TrajectoryRecord(layout)
    integral = np.zeros_like(s)
    z_prev = None
    for k in range(cfg.n_steps + 1):
        t = k * h
        ds, z, ev = _evaluate(field_fn, net, s)
        if z_prev is not None:
            integral += 0.5 * h * (z_prev + z)
        z_hat = integral / t if k else np.array(z, dtype=float)
        last = k == cfg.n_steps
        if k % cfg.record_every == 0 or last:
            _record(rec, net, t, s, z, z_hat, ev, reference, diagnostics)
        if last:
            break
        new = _advance(field_fn, net, s, h, cfg.scheme, k1=ds)
        norm = np.linalg.norm(new)
        if not np.isfinite(norm) or norm > cfg.divergence_bound:
            log.warning("trajectory diverged at t=%g (|s|=%.3e)", t + h, norm)
            rec.status = "DIVERGED"
            if rec.times[-1] != t:
                _record(rec, net, t, s, z, z_hat, ev, reference, diagnostics)
            rec.steps_taken = k
            return rec, ErgodicAverages(layout, t, z_hat)
        s, z_prev = new, np.array(z, dtype=float)
    rec.steps_taken = cfg.n_steps
    return rec, ErgodicAverages(layout, cfg.n_steps * h, z_hat)


# --------------------------------------------------------------------------
# CSV export


def _fmt(v):
    return repr(float(v))


def _comment(meta):
    if not meta:
        return None
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items())


def write_trajectory_csv(path, rec: TrajectoryRecord, meta=None, include_states=True):
    """Long-format CSV ``t, agent, block, index, value`` of outputs (and states)."""
    layout = rec.layout
    names_out = ("x", "lambda", "mu", "omega", "nu")
    names_state = ("y", "gamma")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if (c := _comment(meta)) is not None:
            fh.write(c + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent", "block", "index", "value"])
        for t, z, s in zip(rec.times, rec.outputs, rec.states):
            blocks = list(zip(names_out, layout.views(z)))
            if include_states:
                blocks += list(zip(names_state, layout.views(s)[:2]))
            tt = _fmt(t)
            for name, arr in blocks:
                for i, row in enumerate(arr):
                    for j, v in enumerate(row):
                        w.writerow([tt, i, name, j, _fmt(v)])


def write_diagnostics_csv(path, rec: TrajectoryRecord, meta=None):
    cols = ("t",) + DIAGNOSTIC_COLUMNS
    nan = [float("nan")] * len(rec.times)
    series = [rec.times] + [rec.diagnostics.get(c, nan) for c in DIAGNOSTIC_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if (c := _comment(meta)) is not None:
            fh.write(c + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*series):
            w.writerow([_fmt(v) for v in row])
