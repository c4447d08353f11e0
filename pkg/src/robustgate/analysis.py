"""Reporting mathematics: grid metrics, fluence, tradeoff sweeps, noise averages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convexstep import UNCONSTRAINED, ConstraintSet
from .dynamics import (IDEAL, ControlField, GateTarget, NLevelModel, ShapeGenerator, fidelities,
                       fidelity, fidelity_gradient, noise_hessian, propagate_nlevel, sample_field,
                       step_propagators, theta_hessian)
from .errors import ValidationError
from .qlinalg import ordered_product
from .scp import ScpConfig, nominal_optimize, scp_optimize
from .uncertainty import BoxUncertainty, NoiseModel, noise_covariance, sample_grid, sample_noise_paths

log = logging.getLogger(__name__)

D_FLOOR = 1e-16


def log10_distance(d):
    """``log10`` of a distance, floored at ``1e-16``."""
    return np.log10(np.maximum(d, D_FLOOR))


def fluence(theta: ControlField, gen: ShapeGenerator | None = None) -> float:
    """Field energy ``||theta||^2 h``, or ``theta^T B theta`` for a shaped field."""
    x = theta.values
    if gen is None or gen.kind == "ideal":
        return float(x @ x * theta.h)
    B = gen.fluence_matrix(theta.N, theta.horizon)
    return float(x @ B @ x)


def area(theta: ControlField) -> float:
    return float(np.sum(np.abs(theta.values)) * theta.h)


@dataclass
class FidelityReport:
    d_wc: float
    d_avg: float
    fluence: float
    max_field: float
    grid: tuple
    argmin: tuple

    @property
    def log10_d_wc(self) -> float:
        return float(log10_distance(self.d_wc))

    @property
    def log10_d_avg(self) -> float:
        return float(log10_distance(self.d_avg))

    def to_dict(self) -> dict:
        return {
            "log10_D_wc": self.log10_d_wc,
            "log10_D_avg": self.log10_d_avg,
            "D_wc": self.d_wc,
            "D_avg": self.d_avg,
            "fluence": self.fluence,
            "max_field": self.max_field,
            "grid": list(self.grid),
            "argmin": list(self.argmin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FidelityReport":
        return cls(d["D_wc"], d["D_avg"], d["fluence"], d["max_field"], tuple(d["grid"]), tuple(d["argmin"]))


def grid_metrics(theta: ControlField, W: GateTarget, box: BoxUncertainty, counts=(21, 21),
                 gen: ShapeGenerator | None = None) -> FidelityReport:
    """Worst-case and uniform-average distance over a Cartesian grid of the box."""
    if min(counts) < 2:
        raise ValidationError(f"evaluation grid needs at least 2 points per axis, got {counts}")
    om = sample_grid(box, counts)
    D = 1.0 - fidelities(theta, om, W, gen)
    i = int(np.argmax(D))
    return FidelityReport(float(D[i]), float(D.mean()), fluence(theta, gen), float(np.max(np.abs(theta.values))),
                          tuple(int(c) for c in counts), (float(om[i, 0]), float(om[i, 1])))


def heatmap_grid(theta: ControlField, W: GateTarget, ranges=((0.99, 1.01), (1.8, 2.2)), resolution=(21, 21),
                 gen: ShapeGenerator | None = None):
    """``log10 D`` on a dense ``(wx, wz)`` grid.

    Returns ``(wx_axis, wz_axis, values)`` with ``values[i, j]`` at
    ``(wx_axis[i], wz_axis[j])``.
    """
    (x0, x1), (z0, z1) = ranges
    rx, rz = (int(r) for r in resolution)
    if rx < 2 or rz < 2:
        raise ValidationError("heatmap resolution must be at least 2 per axis")
    wx = np.linspace(x0, x1, rx)
    wz = np.linspace(z0, z1, rz)
    gx, gz = np.meshgrid(wx, wz, indexing="ij")
    D = 1.0 - fidelities(theta, np.column_stack([gx.ravel(), gz.ravel()]), W, gen)
    return wx, wz, log10_distance(D).reshape(rx, rz)


def taylor_lower_bound(theta: ControlField, omega_x_bar: float, eps: float, omega_z: float, W: GateTarget) -> float:
    """Second-order lower estimate of ``F`` over ``|wx - omega_x_bar| <= eps``.

    A change of ``wx`` by a factor ``1 + e`` is the same as scaling the field
    by ``1 + e``, so the expansion runs along ``theta`` with ``e = eps / omega_x_bar``.
    """
    if eps < 0:
        raise ValidationError("eps must be >= 0")
    F = float(fidelities(theta, [(omega_x_bar, omega_z)], W)[0])
    if eps == 0:
        return F
    e = eps / omega_x_bar
    x = theta.values
    g = fidelity_gradient(theta, omega_x_bar, omega_z, W)
    H = theta_hessian(theta, omega_x_bar, omega_z, W)
    return F - e * abs(x @ g) - 0.5 * e * e * abs(x @ H @ x)


# --------------------------------------------------------------------------
# fluence tradeoff


@dataclass
class TradeoffPoint:
    gamma: float
    fluence: float
    log10_d_wc: float
    field: ControlField


@dataclass
class TradeoffConfig:
    scp: ScpConfig = field(default_factory=lambda: ScpConfig(max_iter=20000))
    stage_scp: ScpConfig = field(default_factory=ScpConfig)
    train_counts: tuple = (5, 5)
    eval_counts: tuple = (21, 21)
    factor: float = 0.95
    stop_fidelity: float = 0.9
    max_stages: int = 200
    nominal_target: float = 0.999
    seed: int = 0
    constraints: ConstraintSet = UNCONSTRAINED

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValidationError("factor must lie in (0, 1)")
        if not 0 < self.stop_fidelity < 1:
            raise ValidationError("stop_fidelity must lie in (0, 1)")
        if self.max_stages < 1:
            raise ValidationError("max_stages must be >= 1")


def fluence_tradeoff_sweep(W: GateTarget, T: float, N: int, box: BoxUncertainty,
                           cfg: TradeoffConfig | None = None, init: ControlField | None = None,
                           robust_start: ControlField | None = None, histories: list | None = None) -> list:
    """Robust solutions under a shrinking fluence bound.

    The first point is the unconstrained robust solution (``gamma = inf``).
    Each later stage bounds the fluence by ``factor`` times the previous
    achieved fluence and warm-starts from the previous field scaled onto the
    new bound.  The sweep stops after the first point whose worst-case
    fidelity on the evaluation grid falls below ``stop_fidelity``; that point
    is included.

    ``init`` replaces the nominal initializer; ``robust_start`` skips the
    unconstrained solve altogether.  ``histories`` collects the
    ``(label, ScpState)`` of every SCP run.
    """
    cfg = cfg or TradeoffConfig()
    train = sample_grid(box, cfg.train_counts)
    evalg = sample_grid(box, cfg.eval_counts)
    runs = histories if histories is not None else []
    if robust_start is not None:
        theta = robust_start
    else:
        if init is None:
            init = nominal_optimize(W, box.center, N=N, T=T, target_fidelity=cfg.nominal_target, seed=cfg.seed)
        theta, st = scp_optimize(init, W, train, cfg.constraints, cfg.scp)
        runs.append(("unconstrained", st))

    def point(gamma, th):
        d = 1.0 - float(fidelities(th, evalg, W).min())
        return TradeoffPoint(gamma, fluence(th), float(log10_distance(d)), th), 1.0 - d

    pt, fwc = point(np.inf, theta)
    points = [pt]
    for stage in range(cfg.max_stages):
        if fwc < cfg.stop_fidelity:
            break
        phi = pt.fluence
        gamma = cfg.factor * phi
        warm = theta.with_values(theta.values * np.sqrt(gamma / phi) * (1 - 1e-12))
        theta, st = scp_optimize(warm, W, train, cfg.constraints.with_fluence(gamma), cfg.stage_scp)
        runs.append((f"stage{stage + 1}", st))
        pt, fwc = point(gamma, theta)
        points.append(pt)
        log.info("stage %d: gamma %.4f fluence %.4f log10 D_wc %.3f", stage + 1, gamma, pt.fluence, pt.log10_d_wc)
    return points


# --------------------------------------------------------------------------
# noise averages


def _fine_field(theta: ControlField, M: int) -> np.ndarray:
    if M % theta.N:
        raise ValidationError(f"noise grid M={M} is not a multiple of N={theta.N}")
    return sample_field(theta, IDEAL, M)


def _check_horizon(theta: ControlField, model: NoiseModel):
    if not np.isclose(theta.horizon, model.T, rtol=1e-12, atol=0):
        raise ValidationError(f"field horizon {theta.horizon} differs from noise horizon {model.T}")


def mc_average_fidelity(theta: ControlField, model: NoiseModel, W: GateTarget, L: int = 2000,
                        seed: int = 0, chunk: int = 256):
    """Monte Carlo average distance over ``L`` noise paths.

    Returns ``(D_avg, standard_error)`` where ``D_avg`` is the sample mean of
    ``1 - F`` over the paths.
    """
    if L < 2:
        raise ValidationError("need at least 2 noise paths")
    _check_horizon(theta, model)
    c = _fine_field(theta, model.M)
    paths = sample_noise_paths(model, L, seed)
    D = np.empty(L)
    for s in range(0, L, chunk):
        wz = paths[s:s + chunk]
        U = ordered_product(step_propagators(c[None, :], model.step, model.omega_x, wz))
        D[s:s + chunk] = 1.0 - fidelity(W, U)
    return float(D.mean()), float(D.std(ddof=1) / np.sqrt(L))


def noise_curvature(theta: ControlField, model: NoiseModel, W: GateTarget) -> np.ndarray:
    """``R_ww = -d^2 F / dw^2`` at the mean noise path."""
    _check_horizon(theta, model)
    c = _fine_field(theta, model.M)
    return -noise_hessian(c, np.full(model.M, model.mean_z), NLevelModel.qubit(model.omega_x), model.T, W)


def wna_average_general(c, w_bar, C, nlevel: NLevelModel, T: float, W: GateTarget,
                        R: np.ndarray | None = None) -> float:
    """Weak-noise average distance ``1 - F(c, w_bar) + Tr(C R_ww) / 2`` for a general model."""
    c = np.asarray(c, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (c.size, c.size) or not np.allclose(C, C.T):
        raise ValidationError("covariance must be symmetric with one row per noise step")
    F0 = fidelity(W, propagate_nlevel(c, w_bar, nlevel, T))
    if R is None:
        R = -noise_hessian(c, w_bar, nlevel, T, W)
    return float(1.0 - F0 + 0.5 * np.sum(C * R))


def wna_average_fidelity(theta: ControlField, model: NoiseModel, W: GateTarget,
                         R: Optional[np.ndarray] = None) -> float:
    """Weak-noise average distance for filtered noise on ``wz``.

    ``R`` may carry a precomputed :func:`noise_curvature` for the same field
    and grid, which is all that changes between ``(sigma, tau)`` points.
    """
    _check_horizon(theta, model)
    c = _fine_field(theta, model.M)
    if R is None:
        R = noise_curvature(theta, model, W)
    return wna_average_general(c, np.full(model.M, model.mean_z), noise_covariance(model),
                               NLevelModel.qubit(model.omega_x), model.T, W, R)


def noise_grid_size(N: int, T: float, tau: float, base: int = 80, cap: int = 1024) -> int:
    """Fine-grid size for a noise study: ``h <= tau / 4`` where possible.

    The result is a multiple of ``N``, at least ``base`` (rounded up to a
    multiple of ``N``) and at most the largest multiple of ``N`` not above ``cap``.
    """
    need = max(base, int(np.ceil(4 * T / tau)))
    M = int(np.ceil(need / N)) * N
    top = (cap // N) * N
    if top < N:
        raise ValidationError(f"cap {cap} is below N={N}")
    return min(M, top)
