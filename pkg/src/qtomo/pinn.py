"""The physics-informed reconstruction model and its training loop.

The network maps measurement vectors to Cholesky parameters plus a severity
score. Reconstruction is differentiable end to end: parameters are unflattened
into a lower-triangular factor (softplus on the diagonal), rho = L L^dag is
formed and trace-normalized, and the constraint loss

    C(rho) = (||rho - rho^dag||_F^2 + |Tr(rho) - 1|^2 + max(0, -lam_min)^2) / sqrt(D)

is weighted per sample by lambda(m) = lambda0 * max(0.5, 1 - alpha * s(m)),
where s(m) is the severity head output. By default C is evaluated on the raw
product L L^dag (the trace term is the active one there); the normalized
output satisfies the constraints by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import states
from .errors import DegenerateFactorError, TrainingDiverged
from .layers import MlpSpec, Network, default_hidden_widths
from .optim import AdamW, AdamWConfig, ScheduleConfig, lr_schedule
from .rng import make_rng, derive_seed

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AdaptiveWeightConfig:
    lambda0: float = 0.15
    alpha: float = 0.5

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.0015
    aux_loss_weight: float = 0.1
    seed: int = 0
    eval_every: int = 1
    warmup_epochs: int = 5
    eta_min: float = 0.0
    weight_decay: float = 1e-4
    clip_norm: float = 3.0
    lambda0: float = 0.15  # 0 disables the physics term (traditional-NN baseline)
    alpha: float = 0.5
    fixed_lambda: float | None = None  # ablation: constant weight, severity ignored
    physics_on_raw: bool = True
    lambda_flow_through: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class ReconstructOut:
    """Tape tensors from the differentiable Cholesky reconstruction."""

    rho_re: ad.Tensor
    rho_im: ad.Tensor
    raw_re: ad.Tensor
    raw_im: ad.Tensor
    trace: ad.Tensor


def reconstruct_differentiable(y: ad.Tensor, dim: int) -> ReconstructOut:
    """Map (B, D^2) parameters to density matrices on the tape.

    The diagonal passes through softplus, off-diagonal (real, imag) pairs fill
    the strict lower triangle, rho = L L^dag / Tr(L L^dag). Output satisfies
    all density-matrix constraints by construction.
    """
    if y.data.ndim != 2 or y.data.shape[1] != dim * dim:
        raise ValueError(f"expected (B, {dim * dim}) parameters, got {y.data.shape}")
    diag_idx, re_idx, im_idx, rows, cols = states.lower_triangle_index_maps(dim)
    diag = ad.softplus(ad.gather_cols(y, diag_idx))
    eye_pos = np.arange(dim)
    l_re = ad.scatter_matrix(diag, eye_pos, eye_pos, dim)
    if rows.size:
        l_re = ad.add(l_re, ad.scatter_matrix(ad.gather_cols(y, re_idx), rows, cols, dim))
        l_im = ad.scatter_matrix(ad.gather_cols(y, im_idx), rows, cols, dim)
    else:
        l_im = ad.scatter_matrix(ad.scale(diag, 0.0), eye_pos, eye_pos, dim)
    l_re_t = ad.transpose_last2(l_re)
    l_im_t = ad.transpose_last2(l_im)
    raw_re = ad.add(ad.matmul(l_re, l_re_t), ad.matmul(l_im, l_im_t))
    raw_im = ad.sub(ad.matmul(l_im, l_re_t), ad.matmul(l_re, l_im_t))
    tr = ad.trace_last2(raw_re)
    if np.any(tr.data < 1e-12):
        raise DegenerateFactorError("reconstructed factor has vanishing trace")
    tr_b = ad.reshape(tr, (y.data.shape[0], 1, 1))
    return ReconstructOut(
        rho_re=ad.div(raw_re, tr_b),
        rho_im=ad.div(raw_im, tr_b),
        raw_re=raw_re,
        raw_im=raw_im,
        trace=tr,
    )


def physics_loss(re: ad.Tensor, im: ad.Tensor) -> ad.Tensor:
    """Per-sample constraint loss (C_herm + C_trace + C_pos) / sqrt(D).

    Differentiable everywhere; the positivity term's gradient is the outer
    product of the minimal eigenvector (averaged over a degenerate eigenspace)
    and vanishes when the spectrum is nonnegative.
    """
    d = re.data.shape[-1]
    dre = ad.sub(re, ad.transpose_last2(re))
    dim_ = ad.add(im, ad.transpose_last2(im))
    c_herm = ad.reduce_sum(ad.add(ad.mul(dre, dre), ad.mul(dim_, dim_)), axis=(1, 2))
    tr_re = ad.add_const(ad.trace_last2(re), -1.0)
    tr_im = ad.trace_last2(im)
    c_trace = ad.add(ad.mul(tr_re, tr_re), ad.mul(tr_im, tr_im))
    neg_min = ad.relu(ad.neg(ad.min_eig_herm(re, im)))
    c_pos = ad.mul(neg_min, neg_min)
    return ad.scale(ad.add(ad.add(c_herm, c_trace), c_pos), 1.0 / np.sqrt(d))


def adaptive_lambda(
    s: ad.Tensor, cfg: AdaptiveWeightConfig, flow_through: bool = False
) -> ad.Tensor:
    """Per-sample weight lambda0 * max(0.5, 1 - alpha * s).

    Gradients through the severity are blocked by default so the model cannot
    suppress its own constraint; ``flow_through=True`` keeps them.
    """
    s_eff = s if flow_through else ad.detach(s)
    return ad.scale(ad.clip_min(ad.add_const(ad.scale(s_eff, -cfg.alpha), 1.0), 0.5), cfg.lambda0)


class PinnModel:
    """Network plus the dimension it reconstructs."""

    def __init__(self, dim: int, spec: MlpSpec, seed: int = 0):
        if spec.output_dim != dim * dim:
            raise ValueError(f"output_dim must be {dim * dim} for dim {dim}")
        self.dim = dim
        self.spec = spec
        self.init_seed = seed
        self.network = Network(spec, make_rng(derive_seed(seed, 0xA11)))

    @staticmethod
    def for_qubits(n_qubits: int, input_dim: int, seed: int = 0, **spec_overrides) -> "PinnModel":
        dim = 2**n_qubits
        spec = MlpSpec(
            input_dim=input_dim,
            hidden_widths=default_hidden_widths(n_qubits),
            output_dim=dim * dim,
            **spec_overrides,
        )
        return PinnModel(dim, spec, seed)

    def predict(self, x: np.ndarray, chunk: int = 512):
        """Evaluation-mode forward pass: (params, severity) as numpy arrays."""
        x = np.asarray(x, dtype=np.float64)
        ys, ss = [], []
        sink = make_rng(0)  # dropout disabled in eval; generator never drawn from
        for i in range(0, x.shape[0], chunk):
            y, s = self.network.forward(ad.constant(x[i : i + chunk]), sink, training=False)
            ys.append(y.data)
            ss.append(s.data if s is not None else np.zeros(y.data.shape[0]))
        return np.concatenate(ys), np.concatenate(ss)

    def reconstruct(self, x: np.ndarray):
        """Measurements -> (rho, raw, severity) without touching the tape."""
        y, s = self.predict(x)
        rho, raw = states.decode_rho_batch(y)
        return rho, raw, s


def total_loss(
    model: PinnModel,
    x: np.ndarray,
    targets: np.ndarray,
    severities: np.ndarray,
    cfg: TrainConfig,
    dropout_rng: np.random.Generator,
    training: bool = True,
):
    """Assemble the batch loss on the active tape.

    Returns (loss tensor, parts dict). Parts hold plain floats: data MSE,
    physics term, auxiliary term, and the mean adaptive weight.
    """
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    y_pred, s_pred = model.network.forward(ad.constant(x), dropout_rng, training)
    diff = ad.sub(y_pred, ad.constant(targets))
    data_term = ad.mean(ad.reduce_sum(ad.mul(diff, diff), axis=1))

    loss = data_term
    parts = {"data": float(data_term.data), "physics": 0.0, "aux": 0.0, "mean_lambda": 0.0}

    if cfg.lambda0 > 0.0 or cfg.fixed_lambda is not None:
        rec = reconstruct_differentiable(y_pred, model.dim)
        if cfg.physics_on_raw:
            c = physics_loss(rec.raw_re, rec.raw_im)
        else:
            c = physics_loss(rec.rho_re, rec.rho_im)
        if cfg.fixed_lambda is not None:
            weighted = ad.scale(c, cfg.fixed_lambda)
            parts["mean_lambda"] = cfg.fixed_lambda
        else:
            if s_pred is None:
                raise ValueError("adaptive weighting needs the severity head")
            lam = adaptive_lambda(
                s_pred,
                AdaptiveWeightConfig(lambda0=cfg.lambda0, alpha=cfg.alpha),
                flow_through=cfg.lambda_flow_through,
            )
            weighted = ad.mul(lam, c)
            parts["mean_lambda"] = float(np.mean(lam.data))
        phys_term = ad.mean(weighted)
        loss = ad.add(loss, phys_term)
        parts["physics"] = float(phys_term.data)

    if model.spec.aux_output and cfg.aux_loss_weight > 0.0:
        sdiff = ad.sub(s_pred, ad.constant(severities))
        aux_term = ad.scale(ad.mean(ad.mul(sdiff, sdiff)), cfg.aux_loss_weight)
        loss = ad.add(loss, aux_term)
        parts["aux"] = float(aux_term.data)

    return loss, parts


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "fidelity", "violation", "lr", "mean_lambda")


def _split_arrays(arr: np.ndarray):
    x = np.ascontiguousarray(arr["estimates"], dtype=np.float64)
    y = np.ascontiguousarray(arr["target"], dtype=np.float64)
    s = np.ascontiguousarray(arr["severity"], dtype=np.float64)
    nu = np.ascontiguousarray(arr["noise_level"], dtype=np.float64)
    return x, y, s, nu


class Trainer:
    """Owns the optimizer and RNG streams so training can restart exactly."""

    def __init__(self, model: PinnModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.optimizer = AdamW(
            model.network.parameters(),
            AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm),
        )
        self.shuffle_rng = make_rng(derive_seed(cfg.seed, 0x5C0))
        self.dropout_rng = make_rng(derive_seed(cfg.seed, 0xD20))
        self.epoch = 0
        self.history: list[dict] = []

    def run(self, train_arr: np.ndarray, val_arr: np.ndarray, epochs: int | None = None):
        """Train for the configured number of epochs; returns the history.

        A non-finite loss aborts with :class:`TrainingDiverged` carrying the
        parameter snapshot from the end of the previous epoch.
        """
        cfg = self.cfg
        target_epoch = cfg.epochs if epochs is None else self.epoch + epochs
        x_tr, y_tr, s_tr, _ = _split_arrays(train_arr)
        n = x_tr.shape[0]
        sched = ScheduleConfig(
            total_epochs=cfg.epochs,
            eta_max=cfg.lr,
            eta_min=cfg.eta_min,
            warmup_epochs=min(cfg.warmup_epochs, cfg.epochs),
        )
        last_good = self.model.network.state_arrays()
        last_good = {k: v.copy() for k, v in last_good.items()}
        last_eval = {"val_loss": np.nan, "fidelity": np.nan, "violation": np.nan}

        while self.epoch < target_epoch:
            lr = lr_schedule(self.epoch, sched)
            order = self.shuffle_rng.permutation(n)
            epoch_loss = 0.0
            lam_sum = 0.0
            batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                tape = ad.Tape()
                with tape:
                    loss, parts = total_loss(
                        self.model, x_tr[idx], y_tr[idx], s_tr[idx], cfg, self.dropout_rng
                    )
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {self.epoch}",
                        last_good=last_good,
                        diagnostics={"epoch": self.epoch, "parts": parts},
                    )
                self.optimizer.zero_grad()
                ad.backward(tape, loss)
                self.optimizer.step(lr=lr)
                epoch_loss += float(loss.data) * len(idx)
                lam_sum += parts["mean_lambda"] * len(idx)
                batches += 1
            epoch_loss /= n
            mean_lambda = lam_sum / n

            is_eval = (self.epoch % cfg.eval_every == 0) or (self.epoch == target_epoch - 1)
            if is_eval:
                metrics = evaluate(self.model, val_arr, cfg=cfg)
                last_eval = {
                    "val_loss": metrics["loss"],
                    "fidelity": metrics["fidelity_mean"],
                    "violation": metrics["violation_mean"],
                }
            self.history.append(
                {
                    "epoch": self.epoch,
                    "train_loss": float(epoch_loss),
                    "val_loss": float(last_eval["val_loss"]),
                    "fidelity": float(last_eval["fidelity"]),
                    "violation": float(last_eval["violation"]),
                    "lr": float(lr),
                    "mean_lambda": float(mean_lambda),
                }
            )
            last_good = {k: v.copy() for k, v in self.model.network.state_arrays().items()}
            self.epoch += 1
        return self.history

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path):
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "dim": self.model.dim,
            "mlp_spec": self.model.spec.to_dict(),
            "train_config": asdict(self.cfg),
            "epoch": self.epoch,
            "init_seed": self.model.init_seed,
            "shuffle_rng": _rng_state_to_json(self.shuffle_rng),
            "dropout_rng": _rng_state_to_json(self.dropout_rng),
            "history": self.history,
        }
        arrays = dict(self.model.network.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @staticmethod
    def from_checkpoint(path) -> "Trainer":
        with np.load(path) as payload:
            meta = json.loads(bytes(payload["meta"].tobytes()).decode())
            if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
            cfg_dict = dict(meta["train_config"])
            cfg = TrainConfig(**cfg_dict)
            spec = MlpSpec.from_dict(meta["mlp_spec"])
            model = PinnModel(int(meta["dim"]), spec, seed=int(meta["init_seed"]))
            trainer = Trainer(model, cfg)
            arrays = {k: payload[k] for k in payload.files if k != "meta"}
        model.network.load_state_arrays(arrays)
        trainer.optimizer.load_state_arrays(arrays)
        _rng_state_from_json(trainer.shuffle_rng, meta["shuffle_rng"])
        _rng_state_from_json(trainer.dropout_rng, meta["dropout_rng"])
        trainer.epoch = int(meta["epoch"])
        trainer.history = list(meta["history"])
        return trainer


def _rng_state_to_json(gen: np.random.Generator) -> dict:
    state = gen.bit_generator.state
    return json.loads(json.dumps(state, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else int(o)))


def _rng_state_from_json(gen: np.random.Generator, state: dict):
    restored = dict(state)
    inner = dict(restored["state"])
    for key, val in inner.items():
        if isinstance(val, list):
            inner[key] = np.array(val, dtype=np.uint64)
    restored["state"] = inner
    if "buffer" in restored and isinstance(restored["buffer"], list):
        restored["buffer"] = np.array(restored["buffer"], dtype=np.uint64)
    gen.bit_generator.state = restored


def train(model: PinnModel, train_arr: np.ndarray, val_arr: np.ndarray, cfg: TrainConfig):
    """Convenience wrapper: build a Trainer, run it, return (trainer, history)."""
    trainer = Trainer(model, cfg)
    history = trainer.run(train_arr, val_arr)
    return trainer, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: PinnModel, arr: np.ndarray, cfg: TrainConfig | None = None) -> dict:
    """Metrics over a dataset split: fidelity, violations, MSE, per-level rows.

    Fidelity is computed against the state decoded from each record's target
    parameters (the clean state up to the encoding floor). Violations are
    reported both for the normalized output and for the raw L L^dag product.
    """
    if arr.shape[0] == 0:
        raise ValueError("evaluation split is empty")
    cfg = cfg or TrainConfig()
    x, y_t, s_t, nu = _split_arrays(arr)
    y_p, s_p = model.predict(x)
    rho_p, raw_p = states.decode_rho_batch(y_p)
    rho_t, _ = states.decode_rho_batch(y_t)

    fid = states.fidelity_batch(rho_t, rho_p)
    viol = states.constraint_violation_batch(rho_p)
    viol_raw = states.constraint_violation_batch(raw_p)
    mse = np.mean(np.sum((y_p - y_t) ** 2, axis=1))
    sev_mse = float(np.mean((s_p - s_t) ** 2))
    lam = cfg.lambda0 * np.maximum(0.5, 1.0 - cfg.alpha * s_p)

    data_loss = float(mse)
    phys = 0.0
    if cfg.lambda0 > 0 or cfg.fixed_lambda is not None:
        c = states.constraint_violation_batch(raw_p if cfg.physics_on_raw else rho_p)
        w = cfg.fixed_lambda if cfg.fixed_lambda is not None else lam
        phys = float(np.mean(w * c))
    aux = cfg.aux_loss_weight * sev_mse if model.spec.aux_output else 0.0

    by_level = {}
    for level in sorted(set(np.round(nu, 12))):
        mask = np.isclose(nu, level)
        by_level[float(level)] = {
            "fidelity_mean": float(np.mean(fid[mask])),
            "fidelity_std": float(np.std(fid[mask])),
            "violation_mean": float(np.mean(viol[mask])),
            "mean_lambda": float(np.mean(lam[mask])),
            "count": int(np.sum(mask)),
        }

    return {
        "count": int(arr.shape[0]),
        "fidelity_mean": float(np.mean(fid)),
        "fidelity_std": float(np.std(fid)),
        "violation_mean": float(np.mean(viol)),
        "violation_raw_mean": float(np.mean(viol_raw)),
        "mse": float(mse),
        "severity_mse": sev_mse,
        "mean_lambda": float(np.mean(lam)),
        "mean_severity": float(np.mean(s_p)),
        "loss": data_loss + phys + aux,
        "by_level": by_level,
    }
