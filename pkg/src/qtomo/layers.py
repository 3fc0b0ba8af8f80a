"""Network building blocks assembled from autodiff ops.

The architecture is a fully connected trunk with residual connections inside
each hidden block, an optional multiplicative attention gate, and a multi-task
output: a main head emitting Cholesky parameters and an auxiliary head
emitting a noise-severity score in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu, "silu": ad.silu}

#: trunk widths sized to roughly match the reported parameter budgets
DEFAULT_HIDDEN_WIDTHS = {
    2: (256, 256, 128),
    3: (512, 512, 256),
    4: (1024, 1024, 512),
    5: (1024, 1024, 512),
}


def default_hidden_widths(n_qubits: int) -> tuple:
    if n_qubits in DEFAULT_HIDDEN_WIDTHS:
        return DEFAULT_HIDDEN_WIDTHS[n_qubits]
    return DEFAULT_HIDDEN_WIDTHS[5] if n_qubits > 5 else DEFAULT_HIDDEN_WIDTHS[2]


def dropout_rate_for_width(width: int) -> float:
    return 0.1 if width >= 256 else 0.05


@dataclass(frozen=True)
class MlpSpec:
    """Structural description of the network; serialized into checkpoints."""

    input_dim: int
    hidden_widths: tuple
    output_dim: int
    aux_output: bool = True
    activation: str = "gelu"
    residual: bool = True
    attention: bool = True
    attention_per_block: bool = False
    dropout: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("all layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "aux_output": self.aux_output,
            "activation": self.activation,
            "residual": self.residual,
            "attention": self.attention,
            "attention_per_block": self.attention_per_block,
            "dropout": self.dropout,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            output_dim=int(d["output_dim"]),
            aux_output=bool(d["aux_output"]),
            activation=d["activation"],
            residual=bool(d["residual"]),
            attention=bool(d["attention"]),
            attention_per_block=bool(d["attention_per_block"]),
            dropout=bool(d.get("dropout", True)),
        )


def _kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.w = ad.parameter(_kaiming_uniform(rng, in_dim, (in_dim, out_dim)))
        self.b = ad.parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        y = ad.matmul(x, self.w)
        return ad.add(y, self.b) if self.b is not None else y

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])


def forward_linear(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """y = x @ w + b, recorded on the active tape."""
    return ad.add(ad.matmul(x, w), b)


class ResidualBlock:
    """sigma(W h + b) + Proj(h); Proj is the identity when widths match."""

    def __init__(self, in_dim, out_dim, activation, drop_rate, residual, rng):
        self.lin = Linear(in_dim, out_dim, rng)
        self.activation = ACTIVATIONS[activation]
        self.drop_rate = drop_rate
        self.residual = residual
        self.proj = None
        if residual and in_dim != out_dim:
            self.proj = Linear(in_dim, out_dim, rng, bias=False)

    def __call__(self, h, rng, training):
        z = self.activation(self.lin(h))
        z = ad.dropout(z, self.drop_rate, rng, training)
        if self.residual:
            z = ad.add(z, self.proj(h) if self.proj is not None else h)
        return z

    def parameters(self):
        out = self.lin.parameters()
        if self.proj is not None:
            out += self.proj.parameters()
        return out


def residual_block(h, w, b, proj_w=None, activation: str = "gelu"):
    """Functional residual step used directly in tests: sigma(hW + b) + Proj(h)."""
    z = ACTIVATIONS[activation](forward_linear(h, w, b))
    skip = ad.matmul(h, proj_w) if proj_w is not None else h
    return ad.add(z, skip)


class AttentionGate:
    """h * Sigmoid(W2 ReLU(W1 h)); the bottleneck is width // 4 (min 8)."""

    def __init__(self, width: int, rng: np.random.Generator):
        k = max(8, width // 4)
        self.w1 = ad.parameter(_kaiming_uniform(rng, width, (width, k)))
        self.w2 = ad.parameter(_kaiming_uniform(rng, k, (k, width)))

    def __call__(self, h: ad.Tensor) -> ad.Tensor:
        return attention_gate(h, self.w1, self.w2)

    def parameters(self):
        return [self.w1, self.w2]


def attention_gate(h: ad.Tensor, w1: ad.Tensor, w2: ad.Tensor) -> ad.Tensor:
    gate = ad.sigmoid(ad.matmul(ad.relu(ad.matmul(h, w1)), w2))
    return ad.mul(h, gate)


class Network:
    """Trunk + attention + multi-task heads, built from an MlpSpec."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.blocks = []
        in_dim = spec.input_dim
        for width in spec.hidden_widths:
            rate = dropout_rate_for_width(width) if spec.dropout else 0.0
            self.blocks.append(
                ResidualBlock(in_dim, width, spec.activation, rate, spec.residual, rng)
            )
            in_dim = width
        self.gates = []
        if spec.attention:
            if spec.attention_per_block:
                self.gates = [AttentionGate(w, rng) for w in spec.hidden_widths]
            else:
                self.gates = [AttentionGate(in_dim, rng)]
        self.main_head = Linear(in_dim, spec.output_dim, rng)
        self.aux_head = Linear(in_dim, 1, rng) if spec.aux_output else None

    def forward(self, x: ad.Tensor, rng: np.random.Generator, training: bool):
        """Returns (main output, severity in (0, 1) or None)."""
        h = x
        for i, block in enumerate(self.blocks):
            h = block(h, rng, training)
            if self.spec.attention and self.spec.attention_per_block:
                h = self.gates[i](h)
        if self.spec.attention and not self.spec.attention_per_block:
            h = self.gates[0](h)
        y = self.main_head(h)
        s = None
        if self.aux_head is not None:
            s = ad.reshape(ad.sigmoid(self.aux_head(h)), (x.shape[0],))
        return y, s

    def parameters(self):
        out = []
        for block in self.blocks:
            out += block.parameters()
        for gate in self.gates:
            out += gate.parameters()
        out += self.main_head.parameters()
        if self.aux_head is not None:
            out += self.aux_head.parameters()
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_arrays(self) -> dict:
        return {f"param_{i:04d}": p.data for i, p in enumerate(self.parameters())}

    def load_state_arrays(self, arrays: dict):
        for i, p in enumerate(self.parameters()):
            src = arrays[f"param_{i:04d}"]
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {i} shape mismatch: {src.shape} vs {p.data.shape}")
            p.data = np.array(src, dtype=np.float64)
