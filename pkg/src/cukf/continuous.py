"""Continuous-discrete filter: ODE propagation of the estimate and its
covariance between measurement instants, with the noise gain re-evaluated
along the evolving estimate, plus the Euler-refinement consistency check."""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .discrete import (FilterTrace, StateEstimate, _blue_update, _run_loop,
                       symmetrize)
from .errors import LengthMismatchError, NonFiniteStateError, StepTooLargeError
from .models import ContinuousDiscreteModel, DiscreteLinearModel, eval_G


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator settings; scheme is "rk4" or "euler"."""

    step: float
    scheme: str = "rk4"

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def default_config(model: ContinuousDiscreteModel) -> IntegratorConfig:
    """Step = (smallest inter-sample gap)/100, RK4."""
    gaps = np.diff(model.sample_times)
    gap = gaps.min() if gaps.size else 1.0
    return IntegratorConfig(step=gap / 100.0)


def _inner(model) -> DiscreteLinearModel:
    return model.inner if isinstance(model, ContinuousDiscreteModel) else model


class _Propagator:
    """Coupled mean/covariance right-hand side with clamp accounting."""

    def __init__(self, dyn: DiscreteLinearModel):
        self.dyn = dyn
        self.clamps = 0

    def __call__(self, x, S):
        dyn = self.dyn
        G, clamped = eval_G(dyn.gsq, x)
        self.clamps += int(clamped)
        dx = dyn.A0 + dyn.A1 @ x
        dS = dyn.A1 @ S + S @ dyn.A1.T + G @ dyn.Sigma_v @ G
        return dx, dS


def _integrate(dyn, x, S, t0, t1, cfg):
    """Fixed-step integration of (x, S) from t0 to t1.

    Returns (x, S, clamp_count, step_count)."""
    span = t1 - t0
    if span == 0:
        return x.copy(), S.copy(), 0, 0
    if cfg.step > span * (1 + 1e-12):
        raise StepTooLargeError(
            f"step {cfg.step} exceeds interval {span}")
    nsteps = max(1, int(round(span / cfg.step)))
    h = span / nsteps
    rhs = _Propagator(dyn)
    for _ in range(nsteps):
        if cfg.scheme == "euler":
            dx, dS = rhs(x, S)
            x = x + h * dx
            S = S + h * dS
        else:
            k1x, k1S = rhs(x, S)
            k2x, k2S = rhs(x + 0.5 * h * k1x, S + 0.5 * h * k1S)
            k3x, k3S = rhs(x + 0.5 * h * k2x, S + 0.5 * h * k2S)
            k4x, k4S = rhs(x + h * k3x, S + h * k3S)
            x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            S = S + (h / 6.0) * (k1S + 2 * k2S + 2 * k3S + k4S)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(S))):
        raise NonFiniteStateError(f"integration diverged on [{t0}, {t1}]")
    return x, S, rhs.clamps, nsteps


def cd_time_update(post: StateEstimate, model, t0: float, t1: float,
                   cfg: IntegratorConfig) -> StateEstimate:
    """Propagate estimate and covariance from t0 to t1 through the coupled
    ODEs, evaluating the noise gain along the evolving estimate."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    dyn = _inner(model)
    x, S, _, _ = _integrate(dyn, post.xhat.copy(), post.Sigma.copy(), t0, t1, cfg)
    return StateEstimate(xhat=x, Sigma=symmetrize(S), index=t1)


def cd_run(model: ContinuousDiscreteModel, measurements, init: StateEstimate,
           cfg: Optional[IntegratorConfig] = None) -> FilterTrace:
    """Discrete measurement update at each sample time, ODE propagation in
    between.  `init` is the prior at the first sample time."""
    if cfg is None:
        cfg = default_config(model)
    ms = np.atleast_2d(np.asarray(measurements, dtype=float))
    times = model.sample_times
    if ms.shape[0] != times.size:
        raise LengthMismatchError(
            f"{ms.shape[0]} measurements for {times.size} sample times")
    dyn = _inner(model)
    totals = {"clamps": 0, "steps": 0}
    cursor = {"k": 0}

    def step_fn(post):
        k = cursor["k"]
        try:
            x, S, clamps, nst = _integrate(dyn, post.xhat.copy(),
                                           post.Sigma.copy(),
                                           times[k], times[k + 1], cfg)
        except NonFiniteStateError as exc:
            raise NonFiniteStateError(
                f"propagation failed between t={times[k]} and t={times[k + 1]}"
            ) from exc
        cursor["k"] = k + 1
        totals["clamps"] += clamps
        totals["steps"] += nst
        return StateEstimate(x, symmetrize(S), index=times[k + 1]), clamps > 0

    trace = _run_loop(ms, init, step_fn, dyn.C, dyn.Sigma_w)
    trace.times = times.copy()
    trace.indices = np.arange(1, times.size + 1)
    trace.clamp_count = totals["clamps"]
    trace.step_count = totals["steps"]
    return trace


@dataclass(frozen=True)
class LimitCheckRow:
    dt: float
    mean_err: float
    cov_err: float


def euler_limit_check(model, post: StateEstimate, t0: float, t1: float,
                      steps: Sequence[float]) -> List[LimitCheckRow]:
    """Compare the discretized one-step-covariance recursion against the ODE
    propagation for each step size in `steps`.

    The discretization propagates xhat <- A0*dt + (I + dt*A1)*xhat and
    Sigma <- (I + dt*A1) Sigma (I + dt*A1)' + dt * G(xhat) Sigma_v G(xhat),
    i.e. the discrete time update applied to the Euler model whose noise has
    covariance Sigma_v/dt.  Errors must shrink roughly linearly in dt.
    """
    dyn = _inner(model)
    span = t1 - t0
    if span <= 0:
        raise ValueError("need t1 > t0")
    steps = sorted(float(dt) for dt in steps)
    for dt in steps:
        ratio = span / dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"dt={dt} does not divide the interval {span}")
    ref_cfg = IntegratorConfig(step=min(min(steps) / 20.0, span / 200.0))
    ref = cd_time_update(post, dyn, t0, t1, ref_cfg)
    eye = np.eye(dyn.n)
    rows = []
    for dt in steps:
        nsteps = int(round(span / dt))
        x = post.xhat.copy()
        S = post.Sigma.copy()
        Phi = eye + dt * dyn.A1
        for _ in range(nsteps):
            G, _ = eval_G(dyn.gsq, x)
            S = Phi @ S @ Phi.T + dt * (G @ dyn.Sigma_v @ G)
            x = dyn.A0 * dt + Phi @ x
        rows.append(LimitCheckRow(
            dt=dt,
            mean_err=float(np.linalg.norm(x - ref.xhat)),
            cov_err=float(np.linalg.norm(S - ref.Sigma))))
    return rows
