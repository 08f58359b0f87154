"""Koopman expert bank: stable operator assembly, latent linear
velocities, and residual velocity decoding."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericError, ShapeError
from .numcore import mlp_apply


def assemble_operator(s: np.ndarray, r: np.ndarray, delta: float) -> np.ndarray:
    """Build the dissipative latent generator from unconstrained parameters:

        A = (S - S^T) - R^T R - delta*I

    The symmetric part of A is -(R^T R) - delta*I, so its eigenvalues are
    at most -delta for any S, R.
    """
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"S must be square, got {s.shape}")
    if r.shape != s.shape:
        raise ShapeError(f"R shape {r.shape} != S shape {s.shape}")
    d = s.shape[0]
    return (s - s.T) - r.T @ r - delta * np.eye(d)


def operator_grads(s: np.ndarray, r: np.ndarray, da: np.ndarray):
    """Chain dL/dA back to the raw parameters of assemble_operator.

    dS = G - G^T,  dR = -R (G + G^T)  for G = dL/dA.
    """
    ds = da - da.T
    dr = -r @ (da + da.T)
    return ds, dr


def latent_velocity(bank, k: int, z: np.ndarray) -> np.ndarray:
    """Linear latent velocity A^k z for expert k."""
    if not 0 <= k < bank.n_experts:
        raise ContractViolation(f"expert index {k} out of range [0, {bank.n_experts})")
    z = np.asarray(z, dtype=np.float64)
    return z @ bank.operator(k).T


def operator_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Full complex spectrum, sorted by real part then imaginary part."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"operator must be square, got {a.shape}")
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigen-solver failed: {exc}") from exc
    order = np.lexsort((eig.imag, eig.real))
    return eig[order]


def decode_expert_velocity(model, k: int, h: np.ndarray):
    """Residual data-space velocity of expert k from trunk features h.

    Projects h into the latent space, applies the expert generator, and
    decodes concat(z, A^k z) back to a (B, S*D) residual field.
    Returns (residual, z, az, proj_tape, dec_tape) so callers can run the
    backward pass.
    """
    z, proj_tape = mlp_apply(model.projector, h)
    az = latent_velocity(model, k, z)
    resid, dec_tape = mlp_apply(model.decoder, np.concatenate([z, az], axis=-1))
    if not np.all(np.isfinite(resid)):
        raise NumericError(f"expert {k} produced non-finite residual velocity")
    return resid, z, az, proj_tape, dec_tape
