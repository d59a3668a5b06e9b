"""Trajectory-cost oracle: builds the recursive quadratic approximation to
the noise-covariance-weighted least squares cost over the stacked trajectory,
minimizes it with a single Newton step, and extracts the marginal covariance
from the inverse Hessian.  Used as an independent check of the recursive
filters.

The quadratic time-step term is the second-order expansion of
0.5 * r' Sigma_v^{-1} r with r(x_k, x_{k-1}) = G^{-1}(x_{k-1})(x_k - f(x_{k-1}))
around (f(xhat_{k-1}), xhat_{k-1}).  The derivative of G^{-1} with respect to
the previous state multiplies the predicted residual, which vanishes at the
expansion point, so it contributes nothing to the gradient or Hessian there;
its magnitude is still recorded per term for inspection.
"""

import csv
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import IndefiniteHessianError, ModelError, SingularGError
from .models import (DiscreteLinearModel, NonlinearModel, EPS_G, eval_gsq,
                     finite_difference_jacobian)
from .discrete import StateEstimate, symmetrize


@dataclass
class StackedTrajectory:
    """Concatenated trajectory [x_0, x_1, ..., x_k]."""

    z: np.ndarray
    n: int

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).ravel()
        if self.z.size % self.n != 0:
            raise ValueError("stacked length must be a multiple of n")

    @property
    def horizon(self) -> int:
        return self.z.size // self.n - 1

    def blocks(self) -> np.ndarray:
        return self.z.reshape(-1, self.n)

    @classmethod
    def from_blocks(cls, blocks, n):
        return cls(z=np.concatenate([np.asarray(b, float).ravel() for b in blocks]), n=n)


@dataclass
class QuadraticCost:
    """Gradient/Hessian representation of the running quadratic cost.

    The Hessian is block tridiagonal by construction: `D[i]` is the diagonal
    block of variable block i, `L[i]` couples variable blocks i+1 and i.
    The gradient at a stacked point z is H z + b.  When the initial prior
    covariance is exactly zero, x_0 is pinned: it is excluded from the
    variables and `head` holds its fixed value.

    `terms` keeps each cost term in residual form so the quadratic can be
    re-evaluated independently of the assembled (H, b); `tensor_norms`
    records the magnitude of the G^{-1}-derivative coefficient per time term.
    """

    n: int
    head: Optional[np.ndarray] = None
    D: List[np.ndarray] = field(default_factory=list)
    L: List[np.ndarray] = field(default_factory=list)
    b: List[np.ndarray] = field(default_factory=list)
    terms: List[tuple] = field(default_factory=list)
    tensor_norms: List[float] = field(default_factory=list)

    @property
    def pinned(self) -> bool:
        return self.head is not None

    @property
    def n_variable_blocks(self) -> int:
        return len(self.D)

    @property
    def n_blocks(self) -> int:
        return len(self.D) + (1 if self.pinned else 0)

    def copy(self) -> "QuadraticCost":
        return QuadraticCost(
            n=self.n,
            head=None if self.head is None else self.head.copy(),
            D=[d.copy() for d in self.D], L=[l.copy() for l in self.L],
            b=[v.copy() for v in self.b], terms=list(self.terms),
            tensor_norms=list(self.tensor_norms))

    def value(self, traj: StackedTrajectory) -> float:
        """Evaluate the quadratic from its term list (full trajectory,
        pinned head included)."""
        xs = traj.blocks()
        total = 0.0
        for term in self.terms:
            kind = term[0]
            if kind == "prior":
                _, W, center = term
                d = xs[0] - center
                total += 0.5 * d @ W @ d
            elif kind == "time":
                _, Q, A, dvec, j = term
                r = xs[j + 1] - A @ xs[j] - dvec
                total += 0.5 * r @ Q @ r
            else:  # measurement
                _, C, Wm, y, j = term
                r = y - C @ xs[j]
                total += 0.5 * r @ Wm @ r
        return float(total)

    def variable_part(self, traj: StackedTrajectory) -> np.ndarray:
        xs = traj.blocks()
        if self.pinned:
            if not np.allclose(xs[0], self.head):
                raise ValueError("pinned initial block does not match trajectory")
            xs = xs[1:]
        if len(xs) != self.n_variable_blocks:
            raise ValueError("trajectory length does not match cost")
        return xs.reshape(-1)

    def gradient(self, traj: StackedTrajectory) -> np.ndarray:
        """Gradient with respect to the variable blocks."""
        zv = self.variable_part(traj).reshape(-1, self.n)
        nb = self.n_variable_blocks
        g = [self.D[i] @ zv[i] + self.b[i] for i in range(nb)]
        for i, Li in enumerate(self.L):
            g[i + 1] = g[i + 1] + Li @ zv[i]
            g[i] = g[i] + Li.T @ zv[i + 1]
        return np.concatenate(g) if g else np.zeros(0)

    def dense_hessian(self) -> np.ndarray:
        nb = self.n_variable_blocks
        n = self.n
        H = np.zeros((nb * n, nb * n))
        for i, Di in enumerate(self.D):
            H[i * n:(i + 1) * n, i * n:(i + 1) * n] = Di
        for i, Li in enumerate(self.L):
            H[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = Li
            H[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = Li.T
        return H


def initial_cost(init: StateEstimate) -> QuadraticCost:
    """Prior term on x_0.

    A symmetric positive definite prior covariance enters through its
    inverse; an exactly zero covariance pins x_0 at the prior mean.  A
    partially singular prior is rejected.
    """
    n = init.xhat.size
    Sigma = init.Sigma
    if np.all(Sigma == 0.0):
        return QuadraticCost(n=n, head=init.xhat.copy())
    try:
        cho = cho_factor(symmetrize(Sigma), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ModelError(
            "initial prior covariance must be symmetric positive definite "
            "or exactly zero") from exc
    W = cho_solve(cho, np.eye(n))
    W = symmetrize(W)
    cost = QuadraticCost(n=n)
    cost.D.append(W.copy())
    cost.b.append(-W @ init.xhat)
    cost.terms.append(("prior", W, init.xhat.copy()))
    return cost


def _linearize(model, xhat, allow_clamp=True):
    """(prediction, Jacobian, squared gains, d(G^{-1})/dx) at xhat."""
    xhat = np.atleast_1d(np.asarray(xhat, dtype=float))
    if isinstance(model, DiscreteLinearModel):
        pred = model.A0 + model.A1 @ xhat
        A = model.A1
        g2 = eval_gsq(model.gsq, xhat)
        if np.any(g2 <= EPS_G) and not allow_clamp:
            raise SingularGError("squared gain at or below the clamp floor")
        g2c = np.maximum(g2, EPS_G)
        # d(1/g_i)/dx_j = -0.5 * c_ij * (g_i^2)^(-3/2) for affine g^2
        Tmat = -0.5 * model.gsq[:, 1:] * (g2c ** -1.5)[:, None]
    elif isinstance(model, NonlinearModel):
        pred = model.drift(xhat)
        A = model.jacobian(xhat)
        g = np.diag(model.gain(xhat))
        g2 = g ** 2
        if np.any(g2 <= EPS_G) and not allow_clamp:
            raise SingularGError("squared gain at or below the clamp floor")
        g2c = np.maximum(g2, EPS_G)
        Tmat = finite_difference_jacobian(
            lambda x: 1.0 / np.maximum(np.diag(model.gain(x)), np.sqrt(EPS_G)),
            xhat)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    return pred, np.atleast_2d(A), g2c, Tmat


def build_time_cost(prev: QuadraticCost, model, xhat_prev,
                    allow_clamp: bool = True) -> QuadraticCost:
    """Append one time-step term, expanding the weighted residual around the
    running estimate xhat_prev; the Hessian grows by one block row/column."""
    cost = prev.copy()
    n = cost.n
    pred, A, g2, Tmat = _linearize(model, xhat_prev, allow_clamp=allow_clamp)
    sigma_v = np.diag(model.Sigma_v)
    Q = np.diag(1.0 / (g2 * sigma_v))
    j = cost.n_blocks - 1  # full-trajectory index of the previous block
    if j < 0:
        raise ValueError("cost has no blocks to extend from")
    xprev = np.atleast_1d(np.asarray(xhat_prev, dtype=float))
    d = pred - A @ xprev  # residual offset: x_k - A x_{k-1} - d
    if cost.pinned and cost.n_variable_blocks == 0:
        # Previous state is the pinned head: only the new block is free.
        if not np.allclose(xprev, cost.head):
            raise ValueError("expansion point must equal the pinned head")
        cost.D.append(Q.copy())
        cost.b.append(-Q @ pred)
    else:
        i = cost.n_variable_blocks - 1
        cost.D[i] = cost.D[i] + A.T @ Q @ A
        cost.b[i] = cost.b[i] + A.T @ Q @ d
        cost.L.append(-Q @ A)
        cost.D.append(Q.copy())
        cost.b.append(-Q @ d)
    cost.terms.append(("time", Q, A.copy(), d, j))
    cost.tensor_norms.append(float(np.linalg.norm(Tmat)))
    return cost


def build_measurement_cost(cost: QuadraticCost, y, C, Sigma_w) -> QuadraticCost:
    """Add the (already quadratic) measurement term on the last block."""
    out = cost.copy()
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Sigma_w = np.atleast_2d(np.asarray(Sigma_w, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Wm = np.linalg.inv(Sigma_w)
    Wm = symmetrize(Wm)
    j = out.n_blocks - 1
    out.terms.append(("meas", C.copy(), Wm, y.copy(), j))
    if out.n_variable_blocks > 0:
        i = out.n_variable_blocks - 1
        out.D[i] = out.D[i] + C.T @ Wm @ C
        out.b[i] = out.b[i] - C.T @ Wm @ y
    return out


class BlockTridiagFactor:
    """Forward block elimination of a symmetric block-tridiagonal matrix.

    Factors once; solves and the bottom-right block of the inverse reuse the
    Cholesky factors of the Schur complements.
    """

    def __init__(self, D, L):
        self.L = L
        self.chos = []
        S = None
        for i, Di in enumerate(D):
            if i == 0:
                S = Di
            else:
                Li = L[i - 1]
                S = Di - Li @ cho_solve(self.chos[i - 1], Li.T)
            S = symmetrize(S)
            try:
                self.chos.append(cho_factor(S, lower=True))
            except np.linalg.LinAlgError as exc:
                raise IndefiniteHessianError(
                    f"Hessian Schur complement {i} not positive definite") from exc

    def solve(self, r: np.ndarray) -> np.ndarray:
        n = self.chos[0][0].shape[0]
        rb = r.reshape(-1, n)
        nb = len(self.chos)
        y = [None] * nb
        for i in range(nb):
            yi = rb[i].copy()
            if i > 0:
                yi -= self.L[i - 1] @ cho_solve(self.chos[i - 1], y[i - 1])
            y[i] = yi
        x = [None] * nb
        x[nb - 1] = cho_solve(self.chos[nb - 1], y[nb - 1])
        for i in range(nb - 2, -1, -1):
            x[i] = cho_solve(self.chos[i], y[i] - self.L[i].T @ x[i + 1])
        return np.concatenate(x)

    def last_inverse_block(self) -> np.ndarray:
        n = self.chos[0][0].shape[0]
        return symmetrize(cho_solve(self.chos[-1], np.eye(n)))


@dataclass
class OracleSolution:
    """Minimizing trajectory with the covariance of its final block."""

    trajectory: StackedTrajectory
    xhat: np.ndarray
    Sigma: np.ndarray
    grad_norm_before: float
    grad_norm_after: float
    second_step_norm: float
    index: int = 0


def newton_solve(cost: QuadraticCost, z0: StackedTrajectory) -> OracleSolution:
    """One Newton step from z0; verifies internally that the step converged
    (a second step would move by < 1e-10 relative) and extracts the marginal
    covariance of the final block from the inverse Hessian."""
    n = cost.n
    if cost.n_variable_blocks == 0:
        head = cost.head.copy()
        return OracleSolution(
            trajectory=StackedTrajectory(head.copy(), n), xhat=head,
            Sigma=np.zeros((n, n)), grad_norm_before=0.0,
            grad_norm_after=0.0, second_step_norm=0.0)
    g0 = cost.gradient(z0)
    factor = BlockTridiagFactor(cost.D, cost.L)
    zv = cost.variable_part(z0)
    z_star_v = zv - factor.solve(g0)
    blocks = ([cost.head] if cost.pinned else []) + [
        z_star_v.reshape(-1, n)[i] for i in range(cost.n_variable_blocks)]
    z_star = StackedTrajectory.from_blocks(blocks, n)
    g1 = cost.gradient(z_star)
    step2 = factor.solve(g1)
    rel = np.linalg.norm(step2) / (1.0 + np.linalg.norm(z_star_v))
    if rel > 1e-10:
        raise IndefiniteHessianError(
            f"Newton step failed to converge in one iteration (residual {rel:.2e})")
    return OracleSolution(
        trajectory=z_star,
        xhat=z_star.blocks()[-1].copy(),
        Sigma=factor.last_inverse_block(),
        grad_norm_before=float(np.linalg.norm(g0)),
        grad_norm_after=float(np.linalg.norm(g1)),
        second_step_norm=float(np.linalg.norm(step2)))


def oracle_filter(model, measurements, init: StateEstimate,
                  max_horizon: int = 500) -> List[OracleSolution]:
    """Recursive cost construction mirroring the filter: at each step the
    measurement term is added and the cost minimized; the time term appended
    afterwards is expanded at the running posterior estimate and never
    revisited."""
    ms = np.atleast_2d(np.asarray(measurements, dtype=float))
    if ms.shape[0] > max_horizon:
        raise ValueError(
            f"horizon {ms.shape[0]} exceeds cap {max_horizon}; the stacked "
            "solve grows linearly in the horizon")
    if isinstance(model, (DiscreteLinearModel, NonlinearModel)):
        C, Sigma_w = model.C, model.Sigma_w
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    cost = initial_cost(init)
    traj_blocks = [init.xhat.copy()]
    solutions = []
    for k in range(ms.shape[0]):
        cost_m = build_measurement_cost(cost, ms[k], C, Sigma_w)
        z0 = StackedTrajectory.from_blocks(traj_blocks, cost.n)
        sol = newton_solve(cost_m, z0)
        sol.index = k
        solutions.append(sol)
        cost = cost_m
        traj_blocks = [blk.copy() for blk in sol.trajectory.blocks()]
        if k + 1 < ms.shape[0]:
            cost = build_time_cost(cost, model, sol.xhat)
            pred, _, _, _ = _linearize(model, sol.xhat)
            traj_blocks.append(pred)
    return solutions


def dump_diagnostics(solutions: Sequence[OracleSolution], path,
                     deltas: Optional[Sequence[Tuple[float, float]]] = None):
    """Per-step gradient norms (and optional estimate/covariance deltas
    against a filter trace) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["k", "grad_norm_before", "grad_norm_after", "second_step_norm"]
        if deltas is not None:
            header += ["xhat_delta", "Sigma_delta"]
        w.writerow(header)
        for i, sol in enumerate(solutions):
            row = [sol.index, repr(sol.grad_norm_before),
                   repr(sol.grad_norm_after), repr(sol.second_step_norm)]
            if deltas is not None:
                row += [repr(float(deltas[i][0])), repr(float(deltas[i][1]))]
            w.writerow(row)
