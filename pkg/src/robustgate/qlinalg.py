"""Small dense complex-matrix kernel.

Pauli algebra, exact exponentials of Hermitian generators and the Fréchet
derivative of the exponential.  Every function accepts stacked inputs of
shape ``(..., n, n)`` so whole batches of step propagators can be built with
a single call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class Hermitian2:
    """The 2x2 Hermitian matrix ``ax*X + ay*Y + az*Z + a0*I``."""

    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0
    a0: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.ax, self.ay, self.az, self.a0])):
            raise ValidationError("Hermitian2 coefficients must be finite")

    def matrix(self) -> np.ndarray:
        return self.ax * X + self.ay * Y + self.az * Z + self.a0 * I2


def su2_exp(ax, ay, az, a0, t):
    """Vectorised ``exp(-i t (a0 I + a.sigma))`` in closed form.

    All coefficient arguments broadcast against each other; the result has
    shape ``broadcast_shape + (2, 2)``.
    """
    ax, ay, az, a0, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (ax, ay, az, a0, t)))
    r = np.sqrt(ax * ax + ay * ay + az * az)
    cos = np.cos(t * r)
    # sin(t r) / r without the 0/0 at r = 0
    s = t * np.sinc(t * r / np.pi)
    out = np.empty(ax.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = cos - 1j * s * az
    out[..., 1, 1] = cos + 1j * s * az
    out[..., 0, 1] = -1j * s * (ax - 1j * ay)
    out[..., 1, 0] = -1j * s * (ax + 1j * ay)
    return out * np.exp(-1j * t * a0)[..., None, None]


def expm_su2(H: Hermitian2, t: float) -> np.ndarray:
    """``exp(-i t H)`` for a 2x2 Hermitian given by its Pauli coefficients."""
    if not np.isfinite(t):
        raise ValidationError("t must be finite")
    return su2_exp(H.ax, H.ay, H.az, H.a0, t)


def _check_hermitian(H: np.ndarray, name: str = "H") -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise ValidationError(f"{name} must be square, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValidationError(f"{name} has non-finite entries")
    dev = np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2)))) if H.size else 0.0
    if dev > HERMITIAN_TOL * max(1.0, np.max(np.abs(H))):
        raise ValidationError(f"{name} is not Hermitian (deviation {dev:.3g})")
    return H


def expm_hermitian(H, t: float) -> np.ndarray:
    """``exp(-i t H)`` for Hermitian ``H`` via eigendecomposition.

    The eigenvector matrix is unitary, so the result is unitary to rounding
    regardless of ``t`` or the spectral radius of ``H``.
    """
    H = _check_hermitian(H)
    lam, V = np.linalg.eigh(H)
    phase = np.exp(-1j * t * lam)
    return (V * phase[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def expm_frechet(H, E, t: float):
    """Exponential ``U = exp(-i t H)`` and its derivative along ``E``.

    Returns ``(U, dU)`` with ``dU = d/ds exp(-i t (H + s E))`` at ``s = 0``.
    Both come out of one exponential of the block matrix
    ``[[A, B], [0, A]]`` with ``A = -i t H`` and ``B = -i t E``: the diagonal
    blocks hold ``exp(A)`` and the upper-right block the Fréchet derivative.
    Stacked inputs are exponentiated in a single batched call.
    """
    H = np.asarray(H, dtype=complex)
    E = np.asarray(E, dtype=complex)
    if H.shape[-2:] != E.shape[-2:] or H.shape[-1] != H.shape[-2]:
        raise ValidationError(f"dimension mismatch: H {H.shape}, E {E.shape}")
    H, E = np.broadcast_arrays(H, E)
    n = H.shape[-1]
    A = -1j * t * H
    block = np.zeros(H.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    block[..., :n, :n] = A
    block[..., n:, n:] = A
    block[..., :n, n:] = -1j * t * E
    big = scipy.linalg.expm(block)
    return big[..., :n, :n], big[..., :n, n:]


def dagger(U: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(U, -1, -2))


def unitarity_error(U: np.ndarray) -> float:
    """Max-entry deviation of ``U^dagger U`` from the identity."""
    U = np.asarray(U)
    n = U.shape[-1]
    return float(np.max(np.abs(dagger(U) @ U - np.eye(n))))


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """``steps[..., M-1, :, :] @ ... @ steps[..., 0, :, :]`` (time ordered)."""
    steps = np.asarray(steps)
    out = steps[..., 0, :, :]
    for m in range(1, steps.shape[-3]):
        out = steps[..., m, :, :] @ out
    return out
