"""Dense complex matrix arithmetic and Hermitian spectral operations.

Matrices are plain ``numpy`` arrays of dtype complex128. The eigensolver is a
cyclic Jacobi iteration with complex rotations, implemented batch-first: a
single rotation schedule is applied simultaneously to a stack of Hermitian
matrices, which amortizes numpy call overhead across the batch. Accuracy is
excellent for the dimensions this package works at (D <= 32).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConvergenceError, NotPsdError, ShapeError

MAX_KRON_DIM = 1024

_JACOBI_MAX_SWEEPS = 100
_JACOBI_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D complex128 array without copying when already one."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def _check_finite(a: np.ndarray, what: str = "matrix"):
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ValueError(f"{what} contains NaN or Inf entries")


def dagger(a) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(np.swapaxes(np.asarray(a, dtype=np.complex128), -1, -2))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _check_finite(a)
    _check_finite(b)
    return a @ b


def kron(a, b, max_dim: int = MAX_KRON_DIM) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] * b.shape[0] > max_dim or a.shape[1] * b.shape[1] > max_dim:
        raise CapacityError(
            f"kron result {a.shape[0] * b.shape[0]}x{a.shape[1] * b.shape[1]} "
            f"exceeds the configured cap of {max_dim}"
        )
    _check_finite(a)
    _check_finite(b)
    return np.kron(a, b)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.complex128)
    return float(np.sqrt(np.sum(a.real * a.real + a.imag * a.imag)))


def trace(a) -> complex:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace needs a square matrix, got {a.shape}")
    return complex(np.trace(a))


@dataclass(frozen=True)
class HermitianEigen:
    """Spectral decomposition A = V diag(w) V^dag with w ascending.

    ``eigenvalues`` is a real 1-D array sorted ascending; the columns of
    ``eigenvectors`` are the matching orthonormal eigenvectors.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _offdiag_norms(a: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    mask = ~np.eye(d, dtype=bool)
    off = a[:, mask]
    return np.sqrt(np.sum(off.real**2 + off.imag**2, axis=1))


def _tournament_rounds(d: int):
    """Round-robin schedule covering every index pair once per sweep.

    Each round is a pair of integer arrays (ps, qs) with all indices distinct,
    so the rotations of one round act on disjoint 2x2 blocks and commute; this
    lets a whole round be applied with vectorized arithmetic.
    """
    players = list(range(d if d % 2 == 0 else d + 1))  # pad with a bye slot if odd
    n = len(players)
    rounds = []
    for _ in range(n - 1):
        ps, qs = [], []
        for i in range(n // 2):
            x, y = players[i], players[n - 1 - i]
            if x < d and y < d:
                ps.append(min(x, y))
                qs.append(max(x, y))
        rounds.append((np.array(ps), np.array(qs)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def eigh_batch(mats, max_sweeps: int = _JACOBI_MAX_SWEEPS, tol: float = _JACOBI_TOL):
    """Eigendecomposition of a stack of Hermitian matrices by cyclic Jacobi.

    Args:
        mats: array-like of shape (B, D, D); each matrix is symmetrized as
            (A + A^dag)/2 before iterating, so mild non-Hermitian round-off in
            the input is tolerated.
        max_sweeps: hard cap on full cyclic sweeps.
        tol: convergence threshold on the off-diagonal Frobenius norm,
            relative to each matrix's Frobenius norm.

    Returns:
        (eigenvalues, eigenvectors): shapes (B, D) ascending and (B, D, D)
        with eigenvectors in columns.
    """
    a = np.asarray(mats, dtype=np.complex128)
    # Large stacks are processed in cache-sized chunks; per-chunk working set
    # around 1 MB keeps the sweep loop out of main memory.
    if a.ndim == 3 and a.shape[0] > 1:
        chunk = max(64, (1 << 20) // (a.shape[1] * a.shape[1] * 16))
        if a.shape[0] > chunk:
            parts = [
                _eigh_chunk(a[i : i + chunk], max_sweeps, tol)
                for i in range(0, a.shape[0], chunk)
            ]
            return (
                np.concatenate([p[0] for p in parts], axis=0),
                np.concatenate([p[1] for p in parts], axis=0),
            )
    return _eigh_chunk(a, max_sweeps, tol)


def _eigh_chunk(mats, max_sweeps: int, tol: float):
    a = np.array(mats, dtype=np.complex128)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ShapeError(f"expected a (B, D, D) stack, got {a.shape}")
    _check_finite(a)
    nb, d, _ = a.shape
    a = 0.5 * (a + dagger(a))
    v = np.tile(np.eye(d, dtype=np.complex128), (nb, 1, 1))
    if d == 1:
        return a[:, :, 0].real.copy(), v

    norms = np.sqrt(np.sum(a.real**2 + a.imag**2, axis=(1, 2)))
    thresh = tol * np.maximum(norms, 1e-300)
    rounds = _tournament_rounds(d)

    converged = False
    for _ in range(max_sweeps):
        if np.all(_offdiag_norms(a) <= thresh):
            converged = True
            break
        for ps, qs in rounds:
            apq = a[:, ps, qs]  # (B, k)
            abs_apq = np.abs(apq)
            active = abs_apq > 1e-300
            safe_abs = np.where(active, abs_apq, 1.0)
            tau = (a[:, qs, qs].real - a[:, ps, ps].real) / (2.0 * safe_abs)
            # clip keeps tau*tau finite; for |tau| ~ 1e150 the rotation angle
            # is ~0 anyway
            tau = np.clip(tau, -1e150, 1e150)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            sp = (t * c) * np.where(active, apq / safe_abs, 1.0)  # s * phase

            # A <- U^dag A U with per-pair unitary [[c, sp], [-conj(sp), c]];
            # the angle choice zeroes A[p, q]. Disjoint pairs commute, so one
            # round is applied with plain vector arithmetic.
            cb = c[:, None, :]
            spb = sp[:, None, :]
            colp = a[:, :, ps]
            colq = a[:, :, qs]
            a[:, :, ps] = cb * colp - np.conj(spb) * colq
            a[:, :, qs] = spb * colp + cb * colq
            cb = c[:, :, None]
            spb = sp[:, :, None]
            rowp = a[:, ps, :]
            rowq = a[:, qs, :]
            a[:, ps, :] = cb * rowp - spb * rowq
            a[:, qs, :] = np.conj(spb) * rowp + cb * rowq

            # eliminated entries are zero by construction; keep the diagonal real
            zeroed = np.where(active, 0.0 + 0.0j, a[:, ps, qs])
            a[:, ps, qs] = zeroed
            a[:, qs, ps] = np.conj(zeroed)
            a[:, ps, ps] = a[:, ps, ps].real
            a[:, qs, qs] = a[:, qs, qs].real

            cb = c[:, None, :]
            spb = sp[:, None, :]
            vcolp = v[:, :, ps]
            vcolq = v[:, :, qs]
            v[:, :, ps] = cb * vcolp - np.conj(spb) * vcolq
            v[:, :, qs] = spb * vcolp + cb * vcolq

    if not converged and not np.all(_offdiag_norms(a) <= thresh):
        worst = float(np.max(_offdiag_norms(a) / np.maximum(norms, 1e-300)))
        raise ConvergenceError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
            f"(worst relative off-diagonal residual {worst:.3e})"
        )

    evals = np.einsum("bii->bi", a).real.copy()
    order = np.argsort(evals, axis=1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return evals, v


def eigvalsh_batch(mats, **kw) -> np.ndarray:
    """Ascending eigenvalues only, shape (B, D)."""
    evals, _ = eigh_batch(mats, **kw)
    return evals


def hermitian_eig(a, herm_tol: float = 1e-8) -> HermitianEigen:
    """Full spectral decomposition of a single Hermitian matrix.

    The input is symmetrized internally; a Hermiticity deviation
    ||a - a^dag||_F beyond ``herm_tol`` (relative for large matrices) is
    rejected because the spectrum of such a matrix is no longer meaningful.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigendecomposition needs a square matrix, got {a.shape}")
    dev = frobenius_norm(a - dagger(a))
    if dev > herm_tol * max(1.0, frobenius_norm(a)):
        raise ValueError(f"matrix is not Hermitian: ||a - a^dag||_F = {dev:.3e}")
    evals, vecs = eigh_batch(a[None])
    return HermitianEigen(eigenvalues=evals[0], eigenvectors=vecs[0])


def matrix_sqrt_psd(a, neg_tol: float = 1e-6) -> np.ndarray:
    """Hermitian PSD square root B with B @ B ~= a.

    Eigenvalues in [-neg_tol, 0) are treated as round-off and clamped to zero;
    anything below -neg_tol raises ``NotPsdError``.
    """
    eig = hermitian_eig(a)
    if eig.eigenvalues[0] < -neg_tol:
        raise NotPsdError(
            f"matrix has eigenvalue {eig.eigenvalues[0]:.3e} below -{neg_tol:g}"
        )
    w = np.sqrt(np.clip(eig.eigenvalues, 0.0, None))
    v = eig.eigenvectors
    b = (v * w[None, :]) @ dagger(v)
    return 0.5 * (b + dagger(b))


def matrix_sqrt_psd_batch(mats, neg_tol: float = 1e-6) -> np.ndarray:
    """Batched PSD square root; see ``matrix_sqrt_psd``."""
    evals, vecs = eigh_batch(mats)
    if np.min(evals) < -neg_tol:
        raise NotPsdError(f"batch has eigenvalue {np.min(evals):.3e} below -{neg_tol:g}")
    w = np.sqrt(np.clip(evals, 0.0, None))
    b = (vecs * w[:, None, :]) @ dagger(vecs)
    return 0.5 * (b + dagger(b))
