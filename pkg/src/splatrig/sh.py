"""Real spherical harmonics color evaluation and its gradients."""

from __future__ import annotations

import numpy as np

# Real SH basis constants, bands 0 and 1.
C0 = 0.28209479177387814
C1 = 0.4886025119029199


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(view_dir: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for unit direction(s); shape (..., (L+1)^2)."""
    d = np.asarray(view_dir, dtype=np.float64)
    out = np.empty(d.shape[:-1] + (num_coeffs(degree),))
    out[..., 0] = C0
    if degree >= 1:
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        out[..., 1] = -C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = -C1 * x
    if degree >= 2:
        raise NotImplementedError("SH degree > 1 not supported")
    return out


def eval_sh(sh: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """Color from SH coefficients: clamp(0.5 + sum_k c_k Y_k(dir), 0, 1).

    ``sh`` has shape (..., 3, (L+1)^2); ``view_dir`` unit vectors (..., 3).
    """
    basis = sh_basis(view_dir, degree)
    raw = 0.5 + np.einsum("...ck,...k->...c", np.asarray(sh, dtype=np.float64), basis)
    return np.clip(raw, 0.0, 1.0)


def eval_sh_with_grad(sh, view_dir, degree):
    """Returns (color, unclamped color, basis) for backward passes.

    d color / d sh_ck = basis_k where the clamp is inactive, else 0.
    d color / d dir comes from the degree-1 bands only.
    """
    basis = sh_basis(view_dir, degree)
    raw = 0.5 + np.einsum("...ck,...k->...c", np.asarray(sh, dtype=np.float64), basis)
    return np.clip(raw, 0.0, 1.0), raw, basis


def sh_dir_gradient(sh, raw_color, degree):
    """d(clamped color)/d(view_dir): shape (..., 3 channels, 3 dir comps)."""
    sh = np.asarray(sh, dtype=np.float64)
    active = ((raw_color > 0.0) & (raw_color < 1.0)).astype(np.float64)
    grad = np.zeros(sh.shape[:-1] + (3,))
    if degree >= 1:
        # band order: (-y, z, -x) scaled by C1
        grad[..., 0] = -C1 * sh[..., 3]  # d/dx
        grad[..., 1] = -C1 * sh[..., 1]  # d/dy
        grad[..., 2] = C1 * sh[..., 2]  # d/dz
    return grad * active[..., None]
