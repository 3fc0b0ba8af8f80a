"""Classical baseline reconstructors: linear inversion and R-rho-R MLE.

Both consume a :class:`~qtomo.measure.MeasurementRecord`. The likelihood model
treats each setting as a two-outcome measurement with effects
Pi_+- = (I +- P) / 2 and empirical frequencies f_+- = (1 +- estimate) / 2,
which is the faithful model for binomially sampled expectations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, measure
from .errors import ShapeError


@dataclass(frozen=True)
class MleConfig:
    max_iters: int = 500
    convergence_eps: float = 1e-10  # Frobenius change per iteration
    dilution: float = 0.0  # 0 = undiluted fixed-point iteration

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 <= self.dilution < 1.0:
            raise ValueError(f"dilution must be in [0, 1), got {self.dilution}")


def project_to_state(rho_raw) -> np.ndarray:
    """Nearest-state projection: clamp eigenvalues at zero, renormalize trace."""
    eig = linalg.hermitian_eig(0.5 * (rho_raw + linalg.dagger(rho_raw)))
    w = np.clip(eig.eigenvalues, 0.0, None)
    total = float(np.sum(w))
    if total <= 0.0:
        d = rho_raw.shape[0]
        return np.eye(d, dtype=np.complex128) / d
    w /= total
    v = eig.eigenvectors
    rho = (v * w[None, :]) @ linalg.dagger(v)
    return 0.5 * (rho + linalg.dagger(rho))


def least_squares_reconstruct(record: measure.MeasurementRecord) -> np.ndarray:
    """Linear inversion over the measured settings, projected to a valid state.

    rho_raw = I/D + sum_i est_i * P_i / Tr(P_i^2); unmeasured directions
    contribute nothing, so missing information degrades toward I/D.
    """
    if len(record.settings) == 0:
        raise ValueError("record has no measurement settings")
    p = record.target_cholesky.shape[0]
    dim = int(round(np.sqrt(p)))
    ops = measure.setting_operators(record.settings, dim)
    norms = np.einsum("sij,sji->s", ops, ops).real  # Tr(P_i^2)
    rho_raw = np.eye(dim, dtype=np.complex128) / dim
    rho_raw += np.einsum("s,sij->ij", record.estimates / norms, ops)
    return project_to_state(rho_raw)


def _povm_frequencies(record: measure.MeasurementRecord):
    f_plus = 0.5 * (1.0 + record.estimates)
    return np.clip(f_plus, 0.0, 1.0)


def log_likelihood(rho, ops: np.ndarray, f_plus: np.ndarray) -> float:
    """sum_i [f+ log Tr(rho Pi+) + f- log Tr(rho Pi-)], effects (I +- P)/2."""
    ev = np.einsum("sij,ji->s", ops, rho).real
    p_plus = np.clip(0.5 * (1.0 + ev), 1e-300, 1.0)
    p_minus = np.clip(0.5 * (1.0 - ev), 1e-300, 1.0)
    return float(np.sum(f_plus * np.log(p_plus) + (1.0 - f_plus) * np.log(p_minus)))


def mle_rhor_reconstruct(
    record: measure.MeasurementRecord,
    cfg: MleConfig = MleConfig(),
    return_history: bool = False,
):
    """Maximum-likelihood state via the R-rho-R fixed-point iteration.

    Iterates rho <- N[R(rho) rho R(rho)] with
    R(rho) = sum_i sum_+- (f_i+- / Tr(rho Pi_i+-)) Pi_i+- starting from I/D.
    The log-likelihood of each accepted iterate is non-decreasing; when a raw
    step would decrease it, the step is diluted toward the previous iterate
    until it does not.
    """
    if len(record.settings) == 0:
        raise ValueError("record has no measurement settings")
    p = record.target_cholesky.shape[0]
    dim = int(round(np.sqrt(p)))
    ops = measure.setting_operators(record.settings, dim)
    f_plus = _povm_frequencies(record)
    eye = np.eye(dim, dtype=np.complex128)

    rho = eye / dim
    ll = log_likelihood(rho, ops, f_plus)
    history = [ll]

    for _ in range(cfg.max_iters):
        ev = np.einsum("sij,ji->s", ops, rho).real
        p_plus = 0.5 * (1.0 + ev)
        p_minus = 0.5 * (1.0 - ev)
        if np.any((p_plus < 1e-14) & (f_plus > 0)) or np.any(
            (p_minus < 1e-14) & (f_plus < 1.0)
        ):
            # an effect with observed counts has vanishing predicted
            # probability; nudge toward the maximally mixed state
            rho = (rho + 1e-12 * eye) / (1.0 + dim * 1e-12)
            ev = np.einsum("sij,ji->s", ops, rho).real
            p_plus = 0.5 * (1.0 + ev)
            p_minus = 0.5 * (1.0 - ev)

        # R = sum_i [(f+/p+ + f-/p-)/2 I + (f+/p+ - f-/p-)/2 P_i]
        wp = f_plus / np.clip(p_plus, 1e-300, None)
        wm = (1.0 - f_plus) / np.clip(p_minus, 1e-300, None)
        r = 0.5 * float(np.sum(wp + wm)) * eye
        r += np.einsum("s,sij->ij", 0.5 * (wp - wm), ops)

        candidate = r @ rho @ r
        candidate = 0.5 * (candidate + candidate.conj().T)
        candidate /= np.trace(candidate).real
        if cfg.dilution > 0.0:
            candidate = (1.0 - cfg.dilution) * candidate + cfg.dilution * rho

        ll_new = log_likelihood(candidate, ops, f_plus)
        if ll_new < ll - 1e-12:
            # dilute toward the current iterate until likelihood stops dropping
            accepted = False
            mix = 0.5
            for _ in range(30):
                diluted = (1.0 - mix) * candidate + mix * rho
                ll_try = log_likelihood(diluted, ops, f_plus)
                if ll_try >= ll - 1e-12:
                    candidate, ll_new, accepted = diluted, ll_try, True
                    break
                mix = 0.5 * (1.0 + mix)
            if not accepted:
                break  # numerical fixed point; no improving step exists

        delta = linalg.frobenius_norm(candidate - rho)
        rho = candidate
        ll = ll_new
        history.append(ll)
        if delta <= cfg.convergence_eps:
            break

    if return_history:
        return rho, history
    return rho
