"""Sequential convex programming for worst-case gate fidelity.

Each iteration linearises the fidelity at every uncertainty sample, solves
the trust-region linear program for the increment that maximises the worst
linearised fidelity, and accepts the step only if the true sampled worst case
strictly improves.  The trust region grows on acceptance and shrinks on
rejection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convexstep import UNCONSTRAINED, ConstraintSet, solve_subproblem
from .dynamics import ControlField, GateTarget, ShapeGenerator, fidelities, fidelity_and_gradient
from .errors import OptimizationError, ValidationError
from .uncertainty import rng_for

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8


@dataclass
class ScpConfig:
    """Trust-region settings; ``None`` radii are derived from the initial field."""

    rho0: Optional[float] = None
    grow: float = 1.6
    shrink: float = 0.5
    rho_max: Optional[float] = None
    rho_min: float = 1e-7
    max_iter: int = 300
    improvement_tol: float = 1e-13
    stall_steps: int = 10
    cut_pool: int = 60

    def radii(self, theta0: np.ndarray) -> tuple[float, float]:
        rho0 = self.rho0 if self.rho0 is not None else 0.1 * max(1.0, float(np.max(np.abs(theta0))))
        rho_max = self.rho_max if self.rho_max is not None else 10.0 * rho0
        if not 0 < self.shrink < 1 < self.grow:
            raise ValidationError("need 0 < shrink < 1 < grow")
        if not self.rho_min < rho0 <= rho_max:
            raise ValidationError(f"need rho_min < rho0 <= rho_max, got {self.rho_min}, {rho0}, {rho_max}")
        if self.max_iter < 0:
            raise ValidationError("max_iter must be >= 0")
        return rho0, rho_max


@dataclass
class IterationRecord:
    iteration: int
    rho: float
    worst_fidelity: float  # sampled worst case at the trial point
    accepted: bool
    predicted: float = float("nan")  # worst linearised fidelity from the LP
    cuts: int = 0


@dataclass
class ScpState:
    field: ControlField
    rho: float
    worst_fidelity: float
    iteration: int = 0
    history: list = field(default_factory=list)
    stop_reason: str = ""

    def accepted_fidelities(self) -> np.ndarray:
        return np.array([r.worst_fidelity for r in self.history if r.accepted])


def scp_optimize(theta0: ControlField, target: GateTarget, samples,
                 constraints: ConstraintSet | None = None, config: ScpConfig | None = None,
                 gen: ShapeGenerator | None = None) -> tuple[ControlField, ScpState]:
    """Maximise the worst fidelity over ``samples`` (rows ``(wx, wz)``).

    Returns the final field and the run state, whose ``history`` starts with
    the initial point (recorded as accepted) followed by one record per
    iteration.
    """
    cset = constraints or UNCONSTRAINED
    cfg = config or ScpConfig()
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 1 or samples.shape[1] != 2:
        raise ValidationError("samples must be a non-empty (L, 2) array")
    theta = theta0
    h = theta.h
    viol = cset.violation(theta.values, h)
    if viol > FEASIBILITY_TOL:
        raise ValidationError(f"initial field violates the constraint set by {viol:.3g}")
    rho, rho_max = cfg.radii(theta.values)

    F, G = fidelity_and_gradient(theta, samples, target, gen)
    worst = float(F.min())
    state = ScpState(theta, rho, worst)
    state.history.append(IterationRecord(0, rho, worst, True))
    cuts: list = []
    stall = 0
    for it in range(1, cfg.max_iter + 1):
        state.iteration = it
        sol = solve_subproblem(F, G, theta.values, cset, rho, h, cuts)
        cuts = sol.cuts[-cfg.cut_pool:]
        if sol.status != "optimal":
            state.history.append(IterationRecord(it, rho, worst, False, cuts=sol.cuts_added))
            rho *= cfg.shrink
        else:
            cand = theta.with_values(theta.values + sol.increment)
            trial = float(fidelities(cand, samples, target, gen).min())
            accepted = trial > worst
            state.history.append(IterationRecord(it, rho, trial, accepted, sol.f0, sol.cuts_added))
            if accepted:
                stall = stall + 1 if trial - worst < cfg.improvement_tol else 0
                theta, worst = cand, trial
                F, G = fidelity_and_gradient(theta, samples, target, gen)
                rho = min(cfg.grow * rho, rho_max)
            else:
                rho *= cfg.shrink
        state.rho = rho
        if rho < cfg.rho_min:
            state.stop_reason = "trust region below rho_min"
            break
        if stall >= cfg.stall_steps:
            state.stop_reason = "improvement below tolerance"
            break
    else:
        state.stop_reason = "iteration limit"
    state.field, state.worst_fidelity = theta, worst
    log.debug("scp stopped after %d iterations (%s): worst F = %.12f", state.iteration, state.stop_reason, worst)
    return theta, state


def nominal_optimize(target: GateTarget, omega_bar=(1.0, 2.0), init: ControlField | None = None, *,
                     N: int | None = None, T: float | None = None, target_fidelity: float = 0.999,
                     max_iter: int = 5000, seed: int = 0, trace: list | None = None) -> ControlField:
    """Gradient ascent on the nominal fidelity with a halving line search.

    Without ``init`` the start is uniform in ``[-0.5, 0.5]`` (seeded).  At a
    stationary start (vanishing gradient below the target) the field gets a
    seeded random kick of the same size.  Raises
    :class:`OptimizationError` carrying the best field if ``target_fidelity``
    is not reached within ``max_iter`` steps.  ``trace``, when given,
    receives one :class:`IterationRecord` per step (``rho`` holds the step
    length; kicks are recorded as not accepted).
    """
    if not 0 < target_fidelity < 1:
        raise ValidationError("target_fidelity must lie in (0, 1)")
    rng = rng_for(seed, "nominal")
    if init is None:
        if N is None or T is None:
            raise ValidationError("give either an initial field or N and T")
        init = ControlField(rng.uniform(-0.5, 0.5, int(N)), T)
    omega = np.asarray(omega_bar, dtype=float)[None, :]
    theta = init
    F, G = fidelity_and_gradient(theta, omega, target)
    F, g = float(F[0]), G[0]
    record = trace.append if trace is not None else (lambda r: None)
    record(IterationRecord(0, 0.0, F, True))
    for it in range(1, max_iter + 1):
        if F >= target_fidelity:
            return theta
        if np.linalg.norm(g) < 1e-12:
            theta = theta.with_values(theta.values + rng.uniform(-0.5, 0.5, theta.N))
            F, G = fidelity_and_gradient(theta, omega, target)
            F, g = float(F[0]), G[0]
            record(IterationRecord(it, 0.0, F, False))
            continue
        step = 1.0
        while step > 1e-12:
            cand = theta.with_values(theta.values + step * g)
            Fc = float(fidelities(cand, omega, target)[0])
            if Fc > F:
                break
            step *= 0.5
        else:
            # no ascent along the gradient: treat as stationary and kick
            g = np.zeros_like(g)
            continue
        theta = cand
        F, G = fidelity_and_gradient(theta, omega, target)
        F, g = float(F[0]), G[0]
        record(IterationRecord(it, step, F, True))
    if F >= target_fidelity:
        return theta
    raise OptimizationError(f"nominal fidelity {F:.6f} below target {target_fidelity}", F, theta)
