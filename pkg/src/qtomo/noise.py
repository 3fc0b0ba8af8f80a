"""Noise channels applied to density matrices.

Four channels with a scalar severity knob each:

* amplitude damping, Kraus pair ``K0 = [[1, 0], [0, sqrt(1-g)]]``,
  ``K1 = [[0, sqrt(g)], [0, 0]]`` (energy relaxation toward |0>)
* phase damping, Kraus pair ``K0 = diag(1, sqrt(1-lam))``,
  ``K1 = diag(0, sqrt(lam))`` (coherence decay, populations untouched)
* correlated Z dephasing, the collective unitary ``U = exp(i alpha Z x...x Z)``
* crosstalk, convex mixing with a random state of strength eps

An experiment-level noise level nu in [0, NU_MAX] maps linearly onto
per-channel strengths (gamma = lam = eps = nu, alpha = nu*pi/4); the mapping
is a documented convention, configurable through :class:`NoiseSpec` lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, states

NU_MAX = 0.19

AMPLITUDE_DAMPING = "amplitude_damping"
PHASE_DAMPING = "phase_damping"
CORRELATED_Z = "correlated_z"
CROSSTALK = "crosstalk"
ALL_KINDS = (AMPLITUDE_DAMPING, PHASE_DAMPING, CORRELATED_Z, CROSSTALK)


@dataclass(frozen=True)
class NoiseSpec:
    """One channel application: which channel, how strong, which qubits."""

    kind: str
    strength: float = 0.0  # gamma / lambda / eps depending on kind
    alpha: float = 0.0  # rotation angle, correlated_z only
    target: str = "all_qubits"  # "all_qubits" or "collective"

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind != CORRELATED_Z and not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must be in [0, 1], got {self.strength}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "strength": self.strength,
            "alpha": self.alpha,
            "target": self.target,
        }

    @staticmethod
    def from_dict(d: dict) -> "NoiseSpec":
        return NoiseSpec(
            kind=d["kind"],
            strength=float(d.get("strength", 0.0)),
            alpha=float(d.get("alpha", 0.0)),
            target=d.get("target", "all_qubits"),
        )


def amplitude_damping_kraus(gamma: float):
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - gamma)]], dtype=np.complex128)
    k1 = np.array([[0.0, np.sqrt(gamma)], [0.0, 0.0]], dtype=np.complex128)
    return [k0, k1]


def phase_damping_kraus(lam: float):
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - lam)]], dtype=np.complex128)
    k1 = np.array([[0.0, 0.0], [0.0, np.sqrt(lam)]], dtype=np.complex128)
    return [k0, k1]


def _qubit_count(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two; qubit channel undefined")
    return n


def _embed_single_qubit(k: np.ndarray, qubit: int, n: int) -> np.ndarray:
    op = np.eye(1, dtype=np.complex128)
    for q in range(n):
        op = linalg.kron(op, k if q == qubit else np.eye(2, dtype=np.complex128))
    return op


def _apply_kraus_single_qubit(rho: np.ndarray, kraus, qubit: int) -> np.ndarray:
    n = _qubit_count(rho.shape[0])
    if not 0 <= qubit < n:
        raise ValueError(f"qubit index {qubit} out of range for {n} qubits")
    out = np.zeros_like(rho)
    for k in kraus:
        full = _embed_single_qubit(k, qubit, n)
        out += full @ rho @ full.conj().T
    return 0.5 * (out + out.conj().T)


def apply_amplitude_damping(rho, gamma: float, qubit: int = 0) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    return _apply_kraus_single_qubit(
        linalg.as_matrix(rho), amplitude_damping_kraus(gamma), qubit
    )


def apply_phase_damping(rho, lam: float, qubit: int = 0) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return _apply_kraus_single_qubit(
        linalg.as_matrix(rho), phase_damping_kraus(lam), qubit
    )


def apply_correlated_z(rho, alpha: float) -> np.ndarray:
    """Collective dephasing rho -> U rho U^dag with U = exp(i alpha Z x ... x Z).

    Z x ... x Z is diagonal with entries +-1 (parity of the basis index), so U
    is diagonal and the conjugation reduces to elementwise phase factors.
    """
    rho = linalg.as_matrix(rho)
    n = _qubit_count(rho.shape[0])
    idx = np.arange(rho.shape[0])
    parity = (-1.0) ** np.array([bin(i).count("1") for i in idx])
    phases = np.exp(1j * alpha * parity)
    return rho * np.outer(phases, phases.conj())


def apply_crosstalk(rho, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Convex mix with a random full-rank state: rho -> (1-eps) rho + eps sigma."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must be in [0, 1], got {eps}")
    rho = linalg.as_matrix(rho)
    sigma = states.random_mixed(rho.shape[0], rho.shape[0], rng)
    return (1.0 - eps) * rho + eps * sigma


def apply_noise_stack(rho, specs, rng: np.random.Generator) -> np.ndarray:
    """Apply channels in listed order; per-qubit channels hit every qubit."""
    out = linalg.as_matrix(rho).copy()
    for spec in specs:
        if spec.kind == AMPLITUDE_DAMPING:
            for q in _target_qubits(out, spec):
                out = apply_amplitude_damping(out, spec.strength, q)
        elif spec.kind == PHASE_DAMPING:
            for q in _target_qubits(out, spec):
                out = apply_phase_damping(out, spec.strength, q)
        elif spec.kind == CORRELATED_Z:
            out = apply_correlated_z(out, spec.alpha)
        elif spec.kind == CROSSTALK:
            out = apply_crosstalk(out, spec.strength, rng)
    return out


def _target_qubits(rho, spec: NoiseSpec):
    n = _qubit_count(rho.shape[0])
    return range(n) if spec.target == "all_qubits" else range(1)


def stack_for_level(nu: float, kinds=ALL_KINDS) -> list:
    """Channel stack for a scalar noise level nu in [0, NU_MAX].

    Linear severity map: gamma = lambda = eps = nu and alpha = nu * pi / 4.
    """
    if nu < 0.0:
        raise ValueError(f"noise level must be >= 0, got {nu}")
    specs = []
    for kind in kinds:
        if kind == CORRELATED_Z:
            specs.append(NoiseSpec(kind=kind, alpha=nu * np.pi / 4.0))
        else:
            specs.append(NoiseSpec(kind=kind, strength=nu))
    return specs


def severity_label(nu: float, nu_max: float = NU_MAX) -> float:
    """Noise level normalized to [0, 1]; the auxiliary-head training target."""
    if nu_max <= 0:
        return 0.0
    return min(max(nu / nu_max, 0.0), 1.0)
