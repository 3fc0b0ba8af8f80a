"""Measurement simulation: Pauli expectations, shot noise, records, datasets.

A measurement setting is a label: for qubit systems a string over {I, X, Y, Z}
of length n with at least one non-identity axis ("XZ", "YIY", ...); for
arbitrary dimensions a generalized Gell-Mann label ("GM003"). Every labeled
observable is Hermitian with spectrum inside [-1, 1], so a setting can be
measured as a two-outcome experiment and its expectation estimated from
binomial counts.

Datasets are a JSON manifest (geometry, settings, noise grid, seeds, counts)
plus one little-endian binary payload per split; round-trips are bit-exact.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import linalg, noise, states

DATASET_FORMAT_VERSION = 1

PAULI = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


# ---------------------------------------------------------------------------
# settings and observables
# ---------------------------------------------------------------------------


def full_pauli_labels(n: int) -> list:
    """All 4^n - 1 non-identity Pauli strings in lexicographic I<X<Y<Z order."""
    labels = ["".join(t) for t in itertools.product("IXYZ", repeat=n)]
    return [lab for lab in labels if set(lab) != {"I"}]


def is_pauli_label(label: str) -> bool:
    return all(c in "IXYZ" for c in label) and not label.startswith("GM")


def _pauli_operator(label: str) -> np.ndarray:
    op = np.eye(1, dtype=np.complex128)
    for c in label:
        op = np.kron(op, PAULI[c])
    return op


@lru_cache(maxsize=64)
def gell_mann_basis(dim: int):
    """Generalized Gell-Mann matrices of su(dim), rescaled to unit spectral radius.

    Order: symmetric pairs, antisymmetric pairs (both row-major over j < k),
    then the diagonal family. dim**2 - 1 operators in total.
    """
    mats = []
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=np.complex128)
            m[j, k] = m[k, j] = 1.0
            mats.append(m)
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=np.complex128)
            m[j, k] = -1j
            m[k, j] = 1j
            mats.append(m)
    for l in range(1, dim):
        m = np.zeros((dim, dim), dtype=np.complex128)
        for j in range(l):
            m[j, j] = 1.0
        m[l, l] = -l
        m *= np.sqrt(2.0 / (l * (l + 1)))
        mats.append(m)
    out = []
    for m in mats:
        radius = float(np.max(np.abs(linalg.eigvalsh_batch(m[None])[0])))
        out.append(m / radius)
    return tuple(out)


def setting_operator(label: str, dim: int) -> np.ndarray:
    if is_pauli_label(label):
        n = int(round(np.log2(dim)))
        if 2**n != dim:
            raise ValueError(f"Pauli setting {label!r} needs a power-of-two dim, got {dim}")
        if len(label) != n:
            raise ValueError(f"setting {label!r} has length {len(label)}, expected {n}")
        return _pauli_operator(label)
    if label.startswith("GM"):
        idx = int(label[2:])
        basis = gell_mann_basis(dim)
        if not 0 <= idx < len(basis):
            raise ValueError(f"Gell-Mann index {idx} out of range for dim {dim}")
        return basis[idx]
    raise ValueError(f"unrecognized setting label {label!r}")


@lru_cache(maxsize=256)
def setting_operators(labels: tuple, dim: int) -> np.ndarray:
    """Stack of observables for a tuple of labels, shape (d, dim, dim)."""
    return np.stack([setting_operator(lab, dim) for lab in labels])


def choose_settings(n: int, d, rng: np.random.Generator, mode: str = "full") -> tuple:
    """Distinct measurement settings for an n-qubit system.

    mode "full" returns the complete informationally complete set (d must be
    4^n - 1 or None); mode "random" draws d distinct settings without
    replacement, clamping to the 4^n - 1 available with a warning.
    """
    alphabet = full_pauli_labels(n)
    if mode == "full":
        if d is not None and d != len(alphabet):
            raise ValueError(f"full mode has exactly {len(alphabet)} settings, asked for {d}")
        return tuple(alphabet)
    if mode == "random":
        if d is None or d < 1:
            raise ValueError("random mode needs a positive setting count")
        if d > len(alphabet):
            warnings.warn(
                f"requested {d} settings but only {len(alphabet)} exist for n={n}; clamping",
                stacklevel=2,
            )
            d = len(alphabet)
        picks = rng.permutation(len(alphabet))[:d]
        return tuple(alphabet[i] for i in picks)
    raise ValueError(f"unknown settings mode {mode!r}")


def choose_gell_mann_settings(dim: int, d, rng: np.random.Generator, mode: str = "full") -> tuple:
    """Generalized-basis settings for arbitrary dimension (qualitative mode)."""
    total = dim * dim - 1
    if mode == "full":
        if d is not None and d != total:
            raise ValueError(f"full mode has exactly {total} settings, asked for {d}")
        return tuple(f"GM{i:03d}" for i in range(total))
    if d is None or d < 1:
        raise ValueError("random mode needs a positive setting count")
    if d > total:
        warnings.warn(f"requested {d} settings but only {total} exist; clamping", stacklevel=2)
        d = total
    picks = rng.permutation(total)[:d]
    return tuple(f"GM{i:03d}" for i in picks)


# ---------------------------------------------------------------------------
# expectations and sampling
# ---------------------------------------------------------------------------


def pauli_expectation(rho, setting: str) -> float:
    """<P> = Tr(rho P), real and clamped to [-1, 1]."""
    rho = linalg.as_matrix(rho)
    op = setting_operator(setting, rho.shape[0])
    val = complex(np.sum(rho.T * op))
    if abs(val.imag) > 1e-8:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}; state not Hermitian?")
    return float(np.clip(val.real, -1.0, 1.0))


def expectations(rho, ops: np.ndarray) -> np.ndarray:
    """Tr(rho P_i) for a stack of observables, clamped to [-1, 1]."""
    rho = linalg.as_matrix(rho)
    vals = np.einsum("sij,ji->s", ops, rho)
    return np.clip(vals.real, -1.0, 1.0)


def sample_estimate(p_true: float, shots: int, rng: np.random.Generator) -> float:
    """Binomial shot-noise estimate of an expectation in [-1, 1]."""
    if shots < 1:
        raise ValueError(f"shot count must be >= 1, got {shots}")
    p_plus = 0.5 * (1.0 + np.clip(p_true, -1.0, 1.0))
    k = rng.binomial(shots, p_plus)
    return 2.0 * k / shots - 1.0


def _sample_estimates(p_true: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    p_plus = 0.5 * (1.0 + np.clip(p_true, -1.0, 1.0))
    k = rng.binomial(shots, p_plus)
    return 2.0 * k / shots - 1.0


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass
class MeasurementRecord:
    """One simulated sample: what was measured and what the answer should be."""

    settings: tuple
    estimates: np.ndarray  # (d,) float64 in [-1, 1]
    shots: int
    noise_level: float
    noise_kinds: tuple
    target_cholesky: np.ndarray  # (p,) float64, flattened canonical factor
    true_severity: float

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=np.float64)
        self.target_cholesky = np.asarray(self.target_cholesky, dtype=np.float64)
        if self.estimates.shape[0] != len(self.settings):
            raise ValueError("estimate count does not match setting count")
        if np.any(np.abs(self.estimates) > 1.0 + 1e-12):
            raise ValueError("estimates must lie in [-1, 1]")


def make_record(
    rho_noisy,
    rho_clean_target,
    settings: tuple,
    shots: int,
    gauss_sigma: float,
    nu: float,
    rng: np.random.Generator,
    noise_kinds: tuple = noise.ALL_KINDS,
    exact: bool = False,
    nu_max: float = noise.NU_MAX,
) -> MeasurementRecord:
    """Simulate the measurement of one noisy state.

    Estimates are binomial shot-noise draws of the exact expectations plus
    Gaussian systematic noise of scale gauss_sigma*(1 + nu), clamped to
    [-1, 1]. With ``exact=True`` the estimates are the exact expectations
    (infinite-shot, zero-sigma limit).

    Targets are the canonical factor of the clean state encoded into the
    network's output space (see ``states.encode_factor_params``), so a model
    that predicts the target exactly also reconstructs the clean state.
    """
    if len(settings) == 0:
        raise ValueError("at least one measurement setting is required")
    rho_noisy = linalg.as_matrix(rho_noisy)
    ops = setting_operators(tuple(settings), rho_noisy.shape[0])
    exact_vals = expectations(rho_noisy, ops)
    if exact:
        ests = exact_vals
    else:
        ests = _sample_estimates(exact_vals, shots, rng)
        sigma_eff = gauss_sigma * (1.0 + nu)
        if sigma_eff > 0:
            ests = ests + rng.normal(0.0, sigma_eff, size=ests.shape)
        ests = np.clip(ests, -1.0, 1.0)
    target = states.encode_factor_params(states.rho_to_cholesky(rho_clean_target))
    return MeasurementRecord(
        settings=tuple(settings),
        estimates=ests,
        shots=shots,
        noise_level=nu,
        noise_kinds=tuple(noise_kinds),
        target_cholesky=target,
        true_severity=noise.severity_label(nu, nu_max),
    )


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------


def _noise_mask(kinds) -> int:
    mask = 0
    for k in kinds:
        mask |= 1 << noise.ALL_KINDS.index(k)
    return mask


def _mask_to_kinds(mask: int) -> tuple:
    return tuple(k for i, k in enumerate(noise.ALL_KINDS) if mask & (1 << i))


def record_dtype(d: int, p: int) -> np.dtype:
    return np.dtype(
        [
            ("estimates", "<f8", (d,)),
            ("target", "<f8", (p,)),
            ("severity", "<f8"),
            ("noise_level", "<f8"),
            ("shots", "<u4"),
            ("noise_mask", "<u1"),
        ]
    )


def records_to_array(records) -> np.ndarray:
    d = len(records[0].settings)
    p = records[0].target_cholesky.shape[0]
    arr = np.zeros(len(records), dtype=record_dtype(d, p))
    for i, r in enumerate(records):
        arr[i]["estimates"] = r.estimates
        arr[i]["target"] = r.target_cholesky
        arr[i]["severity"] = r.true_severity
        arr[i]["noise_level"] = r.noise_level
        arr[i]["shots"] = r.shots
        arr[i]["noise_mask"] = _noise_mask(r.noise_kinds)
    return arr


def array_to_records(arr: np.ndarray, settings: tuple) -> list:
    out = []
    for row in arr:
        out.append(
            MeasurementRecord(
                settings=settings,
                estimates=row["estimates"].copy(),
                shots=int(row["shots"]),
                noise_level=float(row["noise_level"]),
                noise_kinds=_mask_to_kinds(int(row["noise_mask"])),
                target_cholesky=row["target"].copy(),
                true_severity=float(row["severity"]),
            )
        )
    return out


@dataclass
class Dataset:
    """Records plus the manifest that makes them interpretable."""

    manifest: dict
    splits: dict = field(default_factory=dict)  # split name -> structured array

    @property
    def settings(self) -> tuple:
        return tuple(self.manifest["settings"])

    @property
    def dim(self) -> int:
        return int(self.manifest["dim"])

    def records(self, split: str) -> list:
        return array_to_records(self.splits[split], self.settings)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest)
    manifest["format_version"] = DATASET_FORMAT_VERSION
    manifest["split_counts"] = {k: int(v.shape[0]) for k, v in dataset.splits.items()}
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n")
    for name, arr in dataset.splits.items():
        (out / f"{name}.bin").write_bytes(arr.tobytes())


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format: {manifest.get('format_version')}")
    d = len(manifest["settings"])
    p = int(manifest["dim"]) ** 2
    dt = record_dtype(d, p)
    splits = {}
    for name, count in manifest["split_counts"].items():
        raw = (src / f"{name}.bin").read_bytes()
        arr = np.frombuffer(raw, dtype=dt)
        if arr.shape[0] != count:
            raise ValueError(f"split {name!r}: expected {count} records, found {arr.shape[0]}")
        splits[name] = arr.copy()
    manifest.pop("split_counts", None)
    manifest.pop("format_version", None)
    return Dataset(manifest=manifest, splits=splits)
