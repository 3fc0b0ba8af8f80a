"""Quantum state construction, the Cholesky parameterization, and state metrics.

Density matrices are complex128 arrays of shape (D, D) satisfying, up to
tolerance: Hermiticity, unit trace, and positive semidefiniteness. Cholesky
factors are lower-triangular complex128 arrays with real nonnegative diagonal;
the map rho = L L^dag / Tr(L L^dag) produces a valid state from any nonzero
factor, which is what makes the parameterization useful as a network output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import CapacityError, DegenerateFactorError, NotPsdError, ShapeError

MAX_QUBITS = 10

#: tolerances for density-matrix validity checks
HERM_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True)
class StateSpec:
    """Recipe for one generated state: family, size, and randomness."""

    kind: str  # "ghz" | "w" | "random_pure" | "random_mixed"
    dim: int
    mix_components: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ghz", "w", "random_pure", "random_mixed"):
            raise ValueError(f"unknown state kind {self.kind!r}")
        if self.mix_components < 1:
            raise ValueError("mix_components must be >= 1")


def density_matrix_checks(rho) -> dict:
    """Measured deviations from the three density-matrix invariants."""
    rho = linalg.as_matrix(rho)
    herm = linalg.frobenius_norm(rho - linalg.dagger(rho))
    tr = abs(linalg.trace(rho) - 1.0)
    lam_min = float(linalg.eigvalsh_batch(0.5 * (rho + linalg.dagger(rho)))[0, 0])
    return {"hermiticity": herm, "trace": tr, "min_eigenvalue": lam_min}


def is_density_matrix(rho, tol: float = 1e-9) -> bool:
    c = density_matrix_checks(rho)
    return c["hermiticity"] <= tol and c["trace"] <= tol and c["min_eigenvalue"] >= -tol


def check_density_matrix(rho, tol: float = 1e-9):
    c = density_matrix_checks(rho)
    if c["hermiticity"] > tol:
        raise ValueError(f"not Hermitian: deviation {c['hermiticity']:.3e}")
    if c["trace"] > tol:
        raise ValueError(f"trace is off by {c['trace']:.3e}")
    if c["min_eigenvalue"] < -tol:
        raise NotPsdError(f"negative eigenvalue {c['min_eigenvalue']:.3e}")


def purity(rho) -> float:
    rho = linalg.as_matrix(rho)
    return float(np.sum(rho * rho.T).real)


# ---------------------------------------------------------------------------
# state families
# ---------------------------------------------------------------------------


def make_ghz(n: int) -> np.ndarray:
    """Projector onto (|0...0> + |1...1>)/sqrt(2)."""
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"GHZ qubit count must be in [1, {MAX_QUBITS}], got {n}")
    d = 2**n
    psi = np.zeros(d, dtype=np.complex128)
    psi[0] = psi[d - 1] = 1.0 / np.sqrt(2.0)
    return np.outer(psi, psi.conj())


def make_w(n: int) -> np.ndarray:
    """Projector onto the single-excitation symmetric state of n qubits."""
    if n < 2:
        raise ValueError(f"W state needs at least 2 qubits, got {n}")
    if n > MAX_QUBITS:
        raise CapacityError(f"W qubit count must be <= {MAX_QUBITS}, got {n}")
    d = 2**n
    psi = np.zeros(d, dtype=np.complex128)
    for k in range(n):
        psi[1 << k] = 1.0 / np.sqrt(n)
    return np.outer(psi, psi.conj())


def random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform pure state: normalized standard complex Gaussian vector."""
    if dim < 2:
        raise ValueError(f"dimension must be >= 2, got {dim}")
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_mixed(dim: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Convex mixture of k Haar-random pure states with flat Dirichlet weights."""
    if k < 1:
        raise ValueError(f"component count must be >= 1, got {k}")
    weights = rng.dirichlet(np.ones(k))
    rho = np.zeros((dim, dim), dtype=np.complex128)
    for i in range(k):
        rho += weights[i] * random_pure(dim, rng)
    return 0.5 * (rho + rho.conj().T)


def make_state(spec: StateSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "ghz":
        return make_ghz(int(np.log2(spec.dim)))
    if spec.kind == "w":
        return make_w(int(np.log2(spec.dim)))
    if spec.kind == "random_pure":
        return random_pure(spec.dim, rng)
    return random_mixed(spec.dim, spec.mix_components, rng)


# ---------------------------------------------------------------------------
# Cholesky parameterization
# ---------------------------------------------------------------------------


def check_cholesky_factor(lower) -> np.ndarray:
    l = linalg.as_matrix(lower)
    if l.shape[0] != l.shape[1]:
        raise ShapeError(f"factor must be square, got {l.shape}")
    if np.any(np.triu(l, k=1) != 0):
        raise ValueError("entries above the diagonal must be exactly zero")
    diag = np.diag(l)
    if np.any(diag.imag != 0) or np.any(diag.real < 0):
        raise ValueError("diagonal entries must be real and nonnegative")
    return l


def cholesky_to_rho(lower) -> np.ndarray:
    """rho = L L^dag / Tr(L L^dag); valid by construction for any nonzero L."""
    l = check_cholesky_factor(lower)
    if linalg.frobenius_norm(l) < 1e-12:
        raise DegenerateFactorError("factor is numerically zero")
    rho = l @ l.conj().T
    rho /= np.trace(rho).real
    return 0.5 * (rho + rho.conj().T)


def rho_to_cholesky(rho, eps: float = 1e-12) -> np.ndarray:
    """Canonical lower-triangular factor of a density matrix.

    Rank-deficient states (every pure state) are handled by regularizing with
    eps*I before factoring; the canonical factor has nonnegative real diagonal,
    which makes training targets well defined. Round-trip error through
    ``cholesky_to_rho`` stays below ~sqrt(D)*eps/min-diag, far inside 1e-8.
    """
    rho = linalg.as_matrix(rho)
    d = rho.shape[0]
    if rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"density matrix must be square, got {rho.shape}")
    lam_min = float(linalg.eigvalsh_batch(0.5 * (rho + linalg.dagger(rho)))[0, 0])
    if lam_min < -1e-6:
        raise NotPsdError(f"not a state: eigenvalue {lam_min:.3e}")
    a = 0.5 * (rho + rho.conj().T) + eps * np.eye(d)
    l = np.zeros((d, d), dtype=np.complex128)
    for i in range(d):
        for j in range(i):
            s = a[i, j] - l[i, :j] @ l[j, :j].conj()
            l[i, j] = s / l[j, j] if l[j, j].real > 0 else 0.0
        diag_sq = a[i, i].real - float(np.sum(np.abs(l[i, :i]) ** 2))
        l[i, i] = np.sqrt(max(diag_sq, 0.0))
    # renormalize so the round trip hits unit trace exactly
    l /= np.sqrt(np.sum(np.abs(l) ** 2))
    return l


def cholesky_param_count(dim: int) -> int:
    return dim * dim


def flatten_cholesky(lower) -> np.ndarray:
    """Fixed flattening of a factor into D^2 reals.

    Order: the D diagonal entries first (each one real), then the strictly
    lower entries row-major as (real, imag) pairs. Datasets and model heads
    both rely on this layout.
    """
    l = check_cholesky_factor(lower)
    d = l.shape[0]
    out = np.empty(d * d, dtype=np.float64)
    out[:d] = np.diag(l).real
    pos = d
    for i in range(1, d):
        for j in range(i):
            out[pos] = l[i, j].real
            out[pos + 1] = l[i, j].imag
            pos += 2
    return out


def unflatten_cholesky(params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    d = int(round(np.sqrt(params.size)))
    if d * d != params.size:
        raise ShapeError(f"parameter count {params.size} is not a perfect square")
    l = np.zeros((d, d), dtype=np.complex128)
    np.fill_diagonal(l, np.maximum(params[:d], 0.0))
    pos = d
    for i in range(1, d):
        for j in range(i):
            l[i, j] = params[pos] + 1j * params[pos + 1]
            pos += 2
    return l


#: diagonal factor entries below this are clamped before inverse-softplus;
#: the induced state error is O(floor^2) per entry, far below metric noise
DIAG_FLOOR = 1e-4


def _inv_softplus(z: np.ndarray) -> np.ndarray:
    # log(e^z - 1), stable for small z
    return z + np.log1p(-np.exp(-z))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def encode_factor_params(lower, floor: float = DIAG_FLOOR) -> np.ndarray:
    """Flatten a factor into the network's output space.

    The network enforces diagonal nonnegativity through softplus, so targets
    store inverse-softplus of the (floored) diagonal; then a perfect
    parameter fit reconstructs the state exactly up to the floor.
    """
    flat = flatten_cholesky(lower)
    d = int(round(np.sqrt(flat.size)))
    flat[:d] = _inv_softplus(np.maximum(flat[:d], floor))
    return flat


def decode_factor_params(params) -> np.ndarray:
    """Inverse of ``encode_factor_params``: parameters back to a factor."""
    params = np.asarray(params, dtype=np.float64)
    d = int(round(np.sqrt(params.size)))
    if d * d != params.size:
        raise ShapeError(f"parameter count {params.size} is not a perfect square")
    adjusted = params.copy()
    adjusted[:d] = _softplus(params[:d])
    return unflatten_cholesky(adjusted)


def decode_rho_batch(param_stack) -> tuple:
    """Vectorized decode of (B, p) parameters to density matrices.

    Returns (rho, raw) where raw = L L^dag before trace normalization; both
    are (B, D, D) complex stacks.
    """
    y = np.asarray(param_stack, dtype=np.float64)
    if y.ndim == 1:
        y = y[None]
    b, p = y.shape
    d = int(round(np.sqrt(p)))
    diag_idx, re_idx, im_idx, rows, cols = lower_triangle_index_maps(d)
    l = np.zeros((b, d, d), dtype=np.complex128)
    diag = _softplus(y[:, diag_idx])
    l[:, np.arange(d), np.arange(d)] = diag
    if rows.size:
        l[:, rows, cols] = y[:, re_idx] + 1j * y[:, im_idx]
    raw = l @ np.conj(np.swapaxes(l, -1, -2))
    tr = np.einsum("bii->b", raw).real
    rho = raw / tr[:, None, None]
    return rho, raw


def lower_triangle_index_maps(d: int):
    """Index maps from the flat parameter layout into (D, D) real/imag parts.

    Returns (diag_idx, sub_idx_re, sub_idx_im, sub_rows, sub_cols) where
    diag_idx are the flat positions of diagonal entries and the sub_* arrays
    describe the strictly-lower entries. Used by the differentiable
    reconstruction to unflatten without Python loops.
    """
    diag_idx = np.arange(d)
    rows, cols, re_idx, im_idx = [], [], [], []
    pos = d
    for i in range(1, d):
        for j in range(i):
            rows.append(i)
            cols.append(j)
            re_idx.append(pos)
            im_idx.append(pos + 1)
            pos += 2
    return (
        diag_idx,
        np.array(re_idx, dtype=np.intp),
        np.array(im_idx, dtype=np.intp),
        np.array(rows, dtype=np.intp),
        np.array(cols, dtype=np.intp),
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def fidelity(a, b) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2, clamped to [0, 1]."""
    a = linalg.as_matrix(a)
    b = linalg.as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(fidelity_batch(a[None], b[None])[0])


def fidelity_batch(a_stack, b_stack) -> np.ndarray:
    """Uhlmann fidelity per matched pair of a (B, D, D) stack."""
    a = np.asarray(a_stack, dtype=np.complex128)
    b = np.asarray(b_stack, dtype=np.complex128)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sqrt_a = linalg.matrix_sqrt_psd_batch(a)
    inner = sqrt_a @ b @ sqrt_a
    evals = linalg.eigvalsh_batch(inner)
    f = np.sum(np.sqrt(np.clip(evals, 0.0, None)), axis=1) ** 2
    return np.clip(f, 0.0, 1.0)


def constraint_violation(rho_raw) -> float:
    """(C_herm + C_trace + C_pos) / sqrt(D) for an arbitrary square matrix."""
    return float(constraint_violation_batch(np.asarray(rho_raw)[None])[0])


def constraint_violation_batch(stack) -> np.ndarray:
    a = np.asarray(stack, dtype=np.complex128)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ShapeError(f"expected a (B, D, D) stack, got {a.shape}")
    d = a.shape[1]
    adag = linalg.dagger(a)
    herm = np.sum(np.abs(a - adag) ** 2, axis=(1, 2))
    tr = np.einsum("bii->b", a)
    trace_term = np.abs(tr - 1.0) ** 2
    lam_min = linalg.eigvalsh_batch(0.5 * (a + adag))[:, 0]
    pos = np.maximum(0.0, -lam_min) ** 2
    return (herm + trace_term + pos) / np.sqrt(d)
