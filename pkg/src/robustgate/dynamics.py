"""Control fields, propagators, gate fidelity and its derivatives.

The one-qubit model is ``H(t) = c(t) wx X + wz Z`` with a piecewise-constant
field ``c``.  Fields built by a signal generator (first-order lag, pulse
shaper) are linear in their commands, ``c = S theta``, and are simulated on a
finer grid; derivatives with respect to ``theta`` then follow from the
fine-grid derivatives by the chain rule ``S^T grad_c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .qlinalg import X, Z, _check_hermitian, dagger, expm_frechet, expm_hermitian, su2_exp, ordered_product

HESSIAN_REL_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class ControlField:
    """``N`` piecewise-constant field values over ``[0, horizon]``."""

    values: np.ndarray
    horizon: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size < 1:
            raise ValidationError("a control field needs N >= 1 values")
        if not np.all(np.isfinite(values)):
            raise ValidationError("control values must be finite")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return self.horizon / self.N

    def with_values(self, values) -> "ControlField":
        return ControlField(values, self.horizon)

    @classmethod
    def zeros(cls, N: int, horizon: float) -> "ControlField":
        return cls(np.zeros(N), horizon)

    @classmethod
    def random(cls, N: int, horizon: float, seed=0, scale: float = 0.5) -> "ControlField":
        """Entries uniform in ``[-scale, scale]`` from a seeded generator."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-scale, scale, N), horizon)


@dataclass(frozen=True, eq=False)
class ShapeGenerator:
    """Linear signal generator mapping commands to a field shape.

    ``kind`` is one of

    * ``"ideal"``: the field equals the command on each interval;
    * ``"lag"``: first-order device ``dc/dt = rate (cbar - c)``, ``c(0) = 0``;
    * ``"pulse_shaper"``: ``A0(t) sum_i a_i sin(freq_i t + phi_i)`` with the
      commands stored as ``(a_i cos phi_i, a_i sin phi_i)`` pairs.

    ``envelope`` holds samples of ``A0`` on a uniform grid spanning the
    horizon (``None`` means ``A0 = 1``).  ``substeps`` is the number of
    propagation sub-steps per command interval.
    """

    kind: str = "ideal"
    rate: float | None = None
    envelope: tuple | None = None
    frequencies: tuple = ()
    substeps: int = 16

    def __post_init__(self):
        if self.kind not in ("ideal", "lag", "pulse_shaper"):
            raise ValidationError(f"unknown generator kind {self.kind!r}")
        if self.kind == "lag" and not (self.rate is not None and self.rate > 0):
            raise ValidationError("first-order lag needs rate > 0")
        if self.kind == "pulse_shaper" and len(self.frequencies) < 1:
            raise ValidationError("pulse shaper needs at least one frequency")
        if int(self.substeps) < 1:
            raise ValidationError("substeps must be >= 1")

    def n_commands(self, N: int) -> int:
        if self.kind == "pulse_shaper":
            return 2 * len(self.frequencies)
        return N

    def _envelope(self, t, horizon):
        if self.envelope is None:
            return np.ones_like(t)
        env = np.asarray(self.envelope, dtype=float)
        return np.interp(t, np.linspace(0.0, horizon, env.size), env)

    def shape_values(self, N: int, horizon: float, t, interval=None) -> np.ndarray:
        """Matrix ``s_j(t_i)`` of shape ``(len(t), n_commands)``.

        ``interval`` (0-based) says which command interval each time belongs
        to; it disambiguates interval endpoints for the discontinuous ideal
        shape and defaults to ``floor(t / h)``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        h = horizon / N
        if self.kind == "pulse_shaper":
            w = np.asarray(self.frequencies, dtype=float)
            env = self._envelope(t, horizon)[:, None]
            out = np.empty((t.size, 2 * w.size))
            out[:, 0::2] = env * np.sin(np.outer(t, w))
            out[:, 1::2] = env * np.cos(np.outer(t, w))
            return out
        if interval is None:
            interval = np.clip(np.floor(t / h).astype(int), 0, N - 1)
        k = np.broadcast_to(np.asarray(interval), t.shape)[:, None]
        j = np.arange(N)[None, :]
        if self.kind == "ideal":
            return (j == k).astype(float)
        nu = self.rate
        local = t[:, None] - j * h  # time since the start of interval j
        out = np.zeros((t.size, N))
        cur = j == k
        out = np.where(cur, -np.expm1(-nu * np.where(cur, local, 0.0)), out)
        past = j < k
        decay = np.exp(-nu * np.where(past, local - h, 0.0))
        out = np.where(past, -np.expm1(-nu * h) * decay, out)
        return out

    def matrix(self, N: int, horizon: float, M: int) -> np.ndarray:
        """Sampling matrix ``S`` with ``c_m = (S theta)_m`` at fine midpoints."""
        M = int(M)
        if M < 1 or M < N or (self.kind == "ideal" and M % N):
            raise ValidationError(f"invalid fine-grid size M={M} for N={N} ({self.kind})")
        ht = horizon / M
        t = (np.arange(M) + 0.5) * ht
        return self.shape_values(N, horizon, t)

    def fluence_matrix(self, N: int, horizon: float, points: int = 32) -> np.ndarray:
        """``B = int_0^T s(t) s(t)^T dt`` by composite Simpson per interval."""
        q = points + points % 2
        h = horizon / N
        nc = self.n_commands(N)
        B = np.zeros((nc, nc))
        u = np.linspace(0.0, h, q + 1)
        wts = np.ones(q + 1)
        wts[1:-1:2] = 4.0
        wts[2:-1:2] = 2.0
        wts *= h / (3 * q)
        for k in range(N):
            s = self.shape_values(N, horizon, k * h + u, interval=k)
            B += s.T @ (wts[:, None] * s)
        return B


IDEAL = ShapeGenerator()


def sample_field(field: ControlField, gen: ShapeGenerator, M: int) -> np.ndarray:
    """Field values at the midpoints of ``M`` uniform fine intervals."""
    return gen.matrix(field.N, field.horizon, M) @ field.values


@dataclass(frozen=True, eq=False)
class GateTarget:
    name: str
    matrix: np.ndarray

    def __post_init__(self):
        W = np.array(self.matrix, dtype=complex)
        n = W.shape[0]
        if W.shape != (n, n) or np.max(np.abs(dagger(W) @ W - np.eye(n))) > 1e-12:
            raise ValidationError(f"target {self.name!r} is not unitary")
        W.setflags(write=False)
        object.__setattr__(self, "matrix", W)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


GATES = {
    "identity": GateTarget("identity", np.eye(2)),
    "hadamard": GateTarget("hadamard", np.array([[1, 1], [1, -1]]) / np.sqrt(2)),
    "phase": GateTarget("phase", np.diag([1, np.exp(1j * np.pi / 4)])),
}


def gate(name: str) -> GateTarget:
    try:
        return GATES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown gate {name!r}; choose from {sorted(GATES)}") from None


@dataclass(frozen=True, eq=False)
class NLevelModel:
    """``H(t) = c(t) Hc + w(t) Hw`` on an ``n``-level system."""

    Hc: np.ndarray
    Hw: np.ndarray

    def __post_init__(self):
        Hc = _check_hermitian(self.Hc, "Hc")
        Hw = _check_hermitian(self.Hw, "Hw")
        if Hc.shape != Hw.shape or Hc.ndim != 2:
            raise ValidationError("Hc and Hw must be square matrices of equal size")
        object.__setattr__(self, "Hc", Hc)
        object.__setattr__(self, "Hw", Hw)

    @property
    def n(self) -> int:
        return self.Hc.shape[0]

    @classmethod
    def qubit(cls, omega_x: float = 1.0) -> "NLevelModel":
        """The one-qubit model with ``w`` playing the role of ``wz``."""
        return cls(omega_x * X, Z)


def _as_omegas(omegas) -> np.ndarray:
    om = np.asarray(omegas, dtype=float)
    if om.ndim == 1:
        om = om[None, :]
    if om.shape[-1] != 2:
        raise ValidationError("omegas must have shape (L, 2)")
    return om


# --------------------------------------------------------------------------
# propagation


def step_propagators(theta, h, omega_x, omega_z) -> np.ndarray:
    """Per-step propagators ``exp(-i h (theta_k wx X + wz Z))``.

    ``omega_x``/``omega_z`` broadcast against ``theta``; pass column vectors
    to get one row of steps per parameter sample.
    """
    theta = np.asarray(theta, dtype=float)
    return su2_exp(theta * omega_x, 0.0, omega_z, 0.0, h)


def propagate(field: ControlField, omega_x: float, omega_z: float) -> np.ndarray:
    """Final-time propagator of the piecewise-constant one-qubit model."""
    return ordered_product(step_propagators(field.values, field.h, omega_x, omega_z))


def propagate_shaped(field: ControlField, gen: ShapeGenerator, omega_x: float, omega_z: float) -> np.ndarray:
    """Propagator for a generator-shaped field, ``gen.substeps`` per interval."""
    M = gen.substeps * field.N
    c = sample_field(field, gen, M)
    return ordered_product(step_propagators(c, field.horizon / M, omega_x, omega_z))


def propagate_nlevel(c, w, model: NLevelModel, T: float) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if c.shape != w.shape:
        raise ValidationError(f"length mismatch: len(c)={c.size}, len(w)={w.size}")
    H = c[:, None, None] * model.Hc + w[:, None, None] * model.Hw
    return ordered_product(expm_hermitian(H, T / c.size))


def propagate_many(field: ControlField, omegas, gen: ShapeGenerator | None = None) -> np.ndarray:
    """Final propagators for each row ``(wx, wz)`` of ``omegas``; shape ``(L, 2, 2)``."""
    om = _as_omegas(omegas)
    theta, h = _fine_values(field, gen)
    return ordered_product(step_propagators(theta[None, :], h, om[:, :1], om[:, 1:]))


def _fine_values(field: ControlField, gen: ShapeGenerator | None):
    if gen is None or gen.kind == "ideal":
        return field.values, field.h
    M = gen.substeps * field.N
    return sample_field(field, gen, M), field.horizon / M


# --------------------------------------------------------------------------
# fidelity


def fidelity(W, U, n: int | None = None) -> float | np.ndarray:
    """``|Tr(W^dagger U)|^2 / n^2``; ``U`` may be a stack of unitaries."""
    Wm = W.matrix if isinstance(W, GateTarget) else np.asarray(W, dtype=complex)
    U = np.asarray(U, dtype=complex)
    n = Wm.shape[0] if n is None else n
    if Wm.shape != (n, n) or U.shape[-2:] != (n, n):
        raise ValidationError(f"dimension mismatch: W {Wm.shape}, U {U.shape}, n={n}")
    tr = np.einsum("ij,...ij->...", np.conj(Wm), U)
    F = np.abs(tr) ** 2 / n**2
    return float(F) if F.ndim == 0 else F


def distance(W, U, n: int | None = None):
    return 1.0 - fidelity(W, U, n)


def fidelities(field: ControlField, omegas, W: GateTarget, gen: ShapeGenerator | None = None) -> np.ndarray:
    """Fidelity at every parameter sample in ``omegas``."""
    return np.atleast_1d(fidelity(W, propagate_many(field, omegas, gen)))


def _trace_and_gradient(U: np.ndarray, dU: np.ndarray, Wd: np.ndarray):
    """Trace ``Tr(W^dagger U_T)`` and its derivatives along per-step directions.

    ``U`` and ``dU`` have shape ``(B, M, n, n)``: step propagators and the
    derivative of each step with respect to its own scalar variable.
    Returns ``tau`` of shape ``(B,)`` and ``dtau`` of shape ``(B, M)`` with
    ``dtau[b, m] = Tr(W^dagger S_m dU_m P_{m-1})`` where ``P`` and ``S`` are
    the products of the steps before and after ``m``.
    """
    B, M, n, _ = U.shape
    eye = np.broadcast_to(np.eye(n, dtype=complex), (B, n, n))
    before = np.empty_like(U)
    acc = eye
    for m in range(M):
        before[:, m] = acc
        acc = U[:, m] @ acc
    total = acc
    after = np.empty_like(U)
    acc = eye
    for m in range(M - 1, -1, -1):
        after[:, m] = acc
        acc = acc @ U[:, m]
    Q = before @ Wd @ after
    dtau = np.einsum("bmij,bmji->bm", Q, dU)
    tau = np.einsum("ij,bji->b", Wd, total)
    return tau, dtau


def _fidelity_from_trace(tau, dtau, n):
    F = np.abs(tau) ** 2 / n**2
    G = 2.0 * np.real(np.conj(tau)[:, None] * dtau) / n**2
    return F, G


def fidelity_and_gradient(field: ControlField, omegas, W: GateTarget, gen: ShapeGenerator | None = None):
    """Fidelities ``(L,)`` and exact gradients ``(L, N)`` at each sample.

    Each step derivative is the Fréchet derivative of the step exponential
    along ``wx X``; generator-shaped fields are differentiated on the fine
    grid and mapped back through the sampling matrix.
    """
    om = _as_omegas(omegas)
    values, h = _fine_values(field, gen)
    wx = om[:, 0][:, None, None, None]
    wz = om[:, 1][:, None, None, None]
    H = values[None, :, None, None] * wx * X + wz * Z
    U, dU = expm_frechet(H, np.broadcast_to(wx * X, H.shape), h)
    tau, dtau = _trace_and_gradient(U, dU, dagger(W.matrix))
    F, G = _fidelity_from_trace(tau, dtau, W.dim)
    if gen is not None and gen.kind != "ideal":
        S = gen.matrix(field.N, field.horizon, gen.substeps * field.N)
        G = G @ S
    return F, G


def fidelity_gradient(field: ControlField, omega_x: float, omega_z: float, W: GateTarget,
                      gen: ShapeGenerator | None = None) -> np.ndarray:
    return fidelity_and_gradient(field, [(omega_x, omega_z)], W, gen)[1][0]


def noise_gradient(c, w, model: NLevelModel, T: float, W: GateTarget):
    """Fidelity and its gradient with respect to the fine-grid noise vector ``w``."""
    c = np.asarray(c, dtype=float)
    w = np.asarray(w, dtype=float)
    if c.shape != w.shape:
        raise ValidationError("length mismatch between c and w")
    H = c[:, None, None] * model.Hc + w[:, None, None] * model.Hw
    U, dU = expm_frechet(H, model.Hw, T / c.size)
    tau, dtau = _trace_and_gradient(U[None], dU[None], dagger(W.matrix))
    F, G = _fidelity_from_trace(tau, dtau, W.dim)
    return float(F[0]), G[0]


def _fd_steps(x):
    return HESSIAN_REL_STEP * np.maximum(1.0, np.abs(x))


def _finish_hessian(Hm, symmetrize):
    return 0.5 * (Hm + Hm.T) if symmetrize else Hm


def theta_hessian(field: ControlField, omega_x: float, omega_z: float, W: GateTarget,
                  symmetrize: bool = True, gen: ShapeGenerator | None = None) -> np.ndarray:
    """``d^2 F / d theta^2`` by central differences of the exact gradient."""
    x = field.values
    d = _fd_steps(x)
    Hm = np.empty((x.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = d[j]
        gp = fidelity_gradient(field.with_values(x + e), omega_x, omega_z, W, gen)
        gm = fidelity_gradient(field.with_values(x - e), omega_x, omega_z, W, gen)
        Hm[j] = (gp - gm) / (2 * d[j])
    return _finish_hessian(Hm, symmetrize)


def noise_hessian(c, w, model: NLevelModel, T: float, W: GateTarget,
                  symmetrize: bool = True, chunk: int = 64) -> np.ndarray:
    """``d^2 F / dw^2`` over the fine-grid noise vector, by differences of gradients.

    A perturbation of ``w_j`` changes only step ``j``, so the perturbed step
    exponentials are computed once and spliced into copies of the nominal
    step sequence, ``chunk`` perturbations at a time.
    """
    c = np.asarray(c, dtype=float)
    w = np.asarray(w, dtype=float)
    M = c.size
    ht = T / M
    Hw = model.Hw
    base = c[:, None, None] * model.Hc + w[:, None, None] * Hw
    U, dU = expm_frechet(base, Hw, ht)
    d = _fd_steps(w)
    Up, dUp = expm_frechet(base + d[:, None, None] * Hw, Hw, ht)
    Um, dUm = expm_frechet(base - d[:, None, None] * Hw, Hw, ht)
    Wd = dagger(W.matrix)
    n = W.dim
    Hm = np.empty((M, M))
    for start in range(0, M, chunk):
        js = np.arange(start, min(M, start + chunk))
        k = js.size
        Ub = np.repeat(U[None], 2 * k, axis=0)
        dUb = np.repeat(dU[None], 2 * k, axis=0)
        rows = np.arange(k)
        Ub[rows, js], dUb[rows, js] = Up[js], dUp[js]
        Ub[k + rows, js], dUb[k + rows, js] = Um[js], dUm[js]
        tau, dtau = _trace_and_gradient(Ub, dUb, Wd)
        _, G = _fidelity_from_trace(tau, dtau, n)
        Hm[js] = (G[:k] - G[k:]) / (2 * d[js])[:, None]
    return _finish_hessian(Hm, symmetrize)


def fidelity_hessian(field: ControlField, variables: str, W: GateTarget, omega=(1.0, 2.0),
                     M: int | None = None, symmetrize: bool = True) -> np.ndarray:
    """Hessian of the fidelity in ``theta`` or in the fine-grid ``wz`` vector.

    For ``variables="omega_z_vector"`` the field is replicated onto ``M``
    fine steps and ``wz`` is treated as an independent value per step.
    """
    wx, wz = omega
    if variables == "theta":
        return theta_hessian(field, wx, wz, W, symmetrize)
    if variables == "omega_z_vector":
        if M is None:
            raise ValidationError("omega_z_vector Hessian needs a fine-grid size M")
        c = sample_field(field, IDEAL, M)
        return noise_hessian(c, np.full(M, float(wz)), NLevelModel.qubit(wx), field.horizon, W, symmetrize)
    raise ValidationError(f"unknown Hessian variables {variables!r}")
