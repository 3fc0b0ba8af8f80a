"""AdamW with global-norm gradient clipping, plus the warmup+cosine schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import TrainingDiverged


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 3.0


class AdamW:
    """Decoupled weight decay Adam over a fixed parameter list."""

    def __init__(self, params, cfg: AdamWConfig = AdamWConfig()):
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def clip_gradients(self) -> float:
        """Scale all gradients so the global L2 norm is at most clip_norm."""
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise TrainingDiverged(
                f"gradient norm is {norm}; training diverged",
                diagnostics={"step": self.step_count},
            )
        if self.cfg.clip_norm > 0 and norm > self.cfg.clip_norm:
            factor = self.cfg.clip_norm / norm
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * factor
        return norm

    def step(self, lr: float | None = None) -> float:
        """One update: clip, decoupled weight decay, Adam with bias correction.

        Returns the pre-clip gradient norm (useful for monitoring).
        """
        lr = self.cfg.lr if lr is None else lr
        norm = self.clip_gradients()
        self.step_count += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if self.cfg.weight_decay > 0:
                p.data -= lr * self.cfg.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * (p.grad * p.grad)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.cfg.eps)
        return norm

    def state_arrays(self) -> dict:
        out = {"opt_step": np.array(self.step_count)}
        for i in range(len(self.params)):
            out[f"opt_m_{i:04d}"] = self.m[i]
            out[f"opt_v_{i:04d}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict):
        self.step_count = int(arrays["opt_step"])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"opt_m_{i:04d}"], dtype=np.float64)
            self.v[i] = np.array(arrays[f"opt_v_{i:04d}"], dtype=np.float64)


@dataclass(frozen=True)
class ScheduleConfig:
    total_epochs: int
    eta_max: float
    eta_min: float = 0.0
    warmup_epochs: int = 5


def lr_schedule(epoch: int, cfg: ScheduleConfig) -> float:
    """Linear warmup to eta_max, then cosine decay to eta_min.

    During warmup the rate ramps linearly from zero, reaching eta_max on the
    last warmup epoch; after that eta follows
    eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2 on the post-warmup
    clock t with horizon T = total_epochs - warmup_epochs.
    """
    if epoch < 0 or epoch > cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if epoch < cfg.warmup_epochs:
        return cfg.eta_max * (epoch + 1) / cfg.warmup_epochs
    t = epoch - cfg.warmup_epochs
    horizon = max(cfg.total_epochs - cfg.warmup_epochs, 1)
    return cfg.eta_min + (cfg.eta_max - cfg.eta_min) * 0.5 * (1.0 + np.cos(np.pi * t / horizon))
