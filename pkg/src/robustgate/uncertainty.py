"""Uncertainty sets, parameter sampling and filtered-noise realisations."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def rng_for(seed: int, stream: str = "") -> np.random.Generator:
    """Independent generator for a named stream derived from ``seed``.

    Streams with different names never share state, so adding a new
    consumer does not perturb the draws of existing ones.
    """
    key = (zlib.crc32(stream.encode()),) if stream else ()
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass(frozen=True)
class BoxUncertainty:
    """``|wx - cx| <= hx`` and ``|wz - cz| <= hz``."""

    center: tuple[float, float] = (1.0, 2.0)
    half_widths: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if len(self.center) != 2 or len(self.half_widths) != 2:
            raise ValidationError("box center and half_widths must be pairs")
        if min(self.half_widths) < 0 or not np.all(np.isfinite([*self.half_widths, *self.center])):
            raise ValidationError(f"invalid half widths {self.half_widths}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_widths", tuple(float(v) for v in self.half_widths))

    @property
    def bounds(self):
        (cx, cz), (hx, hz) = self.center, self.half_widths
        return (cx - hx, cx + hx), (cz - hz, cz + hz)


# Uncertainty box used for the gate-synthesis runs
DELTA_XZ = BoxUncertainty((1.0, 2.0), (0.01, 0.20))
# The five boxes of the fluence tradeoff study (DELTA_5 equals DELTA_XZ)
DELTA_1 = BoxUncertainty((1.0, 2.0), (0.001, 0.02))
DELTA_2 = BoxUncertainty((1.0, 2.0), (0.010, 0.02))
DELTA_3 = BoxUncertainty((1.0, 2.0), (0.001, 0.10))
DELTA_4 = BoxUncertainty((1.0, 2.0), (0.010, 0.10))
DELTA_5 = BoxUncertainty((1.0, 2.0), (0.010, 0.20))
TRADEOFF_BOXES = {"D1": DELTA_1, "D2": DELTA_2, "D3": DELTA_3, "D4": DELTA_4, "D5": DELTA_5}


@dataclass(frozen=True, eq=False)
class EllipsoidUncertainty:
    """``||Omega^{-1} (w - center)||_p <= 1`` for ``p`` in ``{2, inf}``."""

    center: tuple[float, float]
    weight: np.ndarray
    p: float = 2

    def __post_init__(self):
        Om = np.asarray(self.weight, dtype=float)
        if Om.shape != (2, 2):
            raise ValidationError("ellipsoid weight must be 2x2")
        if not np.allclose(Om, Om.T) or np.min(np.linalg.eigvalsh(Om)) <= 0:
            raise ValidationError("ellipsoid weight must be symmetric positive definite")
        if self.p not in (2, np.inf):
            raise ValidationError("p must be 2 or inf")
        object.__setattr__(self, "weight", Om)

    def contains(self, omega, tol: float = 1e-12) -> bool:
        u = np.linalg.solve(self.weight, np.asarray(omega, dtype=float) - np.asarray(self.center))
        return bool(np.linalg.norm(u, self.p) <= 1 + tol)


@dataclass(frozen=True, eq=False)
class ProbabilisticUncertainty:
    """Gaussian ``w ~ N(mean, covariance)``."""

    mean: tuple[float, float]
    covariance: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.covariance, dtype=float)
        if C.shape != (2, 2) or not np.allclose(C, C.T):
            raise ValidationError("covariance must be a symmetric 2x2 matrix")
        lam = np.linalg.eigvalsh(C)
        if lam[0] < -1e-12 * max(1.0, lam[-1]):
            raise ValidationError("covariance is not positive semidefinite")
        object.__setattr__(self, "covariance", C)


@dataclass(frozen=True)
class NoiseModel:
    """``wz(t) = mean_z + noise`` with noise = first-order filtered white noise.

    ``sigma`` is the white-noise intensity, ``tau`` the filter time constant,
    and the noise is represented by ``M`` piecewise-constant values over the
    horizon ``T``.  ``omega_x`` stays fixed.
    """

    mean_z: float = 2.0
    sigma: float = 0.001
    tau: float = 1.0
    M: int = 80
    T: float = 2.0
    omega_x: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        if int(self.M) < 1 or not self.T > 0:
            raise ValidationError("need M >= 1 and T > 0")

    @property
    def step(self) -> float:
        return self.T / self.M

    @property
    def alpha(self) -> float:
        return float(np.exp(-self.step / self.tau))

    @property
    def sigma_tilde_sq(self) -> float:
        return self.sigma**2 / self.step

    @property
    def marginal_variance(self) -> float:
        a = self.alpha
        return self.sigma_tilde_sq * (1 - a) / (1 + a)


def sample_grid(box: BoxUncertainty, counts=(5, 5)) -> np.ndarray:
    """Uniform Cartesian grid over the box, endpoints included.

    Rows are ``(wx, wz)`` in row-major order with ``wx`` varying slowest; a
    count of 1 on an axis gives the box center on that axis.
    """
    nx, nz = (int(c) for c in counts)
    if nx < 1 or nz < 1:
        raise ValidationError(f"grid counts must be >= 1, got {counts}")
    axes = []
    for c, hw, n in zip(box.center, box.half_widths, (nx, nz)):
        axes.append(np.array([c]) if n == 1 else np.linspace(c - hw, c + hw, n))
    gx, gz = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([gx.ravel(), gz.ravel()])


def sample_ellipsoid(ell: EllipsoidUncertainty, rings: int = 3, angles: int = 8) -> np.ndarray:
    """Center plus uniform angular rings (``p=2``) or a square grid (``p=inf``), mapped by Omega."""
    if ell.p == 2:
        r = np.linspace(0, 1, rings + 1)[1:]
        phi = 2 * np.pi * np.arange(angles) / angles
        u = np.concatenate([[[0.0, 0.0]], (r[:, None, None] * np.stack([np.cos(phi), np.sin(phi)], -1)).reshape(-1, 2)])
    else:
        g = np.linspace(-1, 1, 2 * rings + 1)
        u = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    return np.asarray(ell.center) + u @ ell.weight.T


def sample_gaussian(prob: ProbabilisticUncertainty, count: int, seed: int = 0) -> np.ndarray:
    if count < 1:
        raise ValidationError("count must be >= 1")
    lam, V = np.linalg.eigh(prob.covariance)
    factor = V * np.sqrt(np.clip(lam, 0.0, None))
    z = rng_for(seed, "gaussian").standard_normal((int(count), 2))
    return np.asarray(prob.mean) + z @ factor.T


def noise_covariance(model: NoiseModel) -> np.ndarray:
    """Stationary covariance ``var * alpha^|m - m'|`` of the discretised noise."""
    m = np.arange(model.M)
    lag = np.abs(m[:, None] - m[None, :])
    return model.marginal_variance * model.alpha**lag


def sample_noise_paths(model: NoiseModel, count: int, seed: int = 0) -> np.ndarray:
    """``count`` realisations of the ``wz`` path, shape ``(count, M)``.

    The noise is an AR(1) sequence started in its stationary law; the
    innovation variance ``var (1 - alpha^2)`` keeps the marginal variance
    constant, so the path covariance is exactly :func:`noise_covariance`.
    """
    M = int(model.M)
    a = model.alpha
    var = model.marginal_variance
    z = rng_for(seed, "noise").standard_normal((int(count), M))
    out = np.empty_like(z)
    out[:, 0] = np.sqrt(var) * z[:, 0]
    innov = np.sqrt(var * (1 - a * a))
    for m in range(1, M):
        out[:, m] = a * out[:, m - 1] + innov * z[:, m]
    return model.mean_z + out


def sample_noise_path(model: NoiseModel, seed: int = 0) -> np.ndarray:
    return sample_noise_paths(model, 1, seed)[0]
