"""Gated recurrent unit over autodiff tensors.

Standard Cho-style cell: update gate z, reset gate r, candidate state
blended by interpolation

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c

Used twice in the tagger: once to fold sentence context into the word
embeddings and once to smooth per-token composition vectors into
attention features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, constant, init_uniform, matmul, sigmoid, tanh, zeros

GRU_FIELDS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    """Nine learnable tensors of one cell.

    W_* are (hidden, input), U_* are (hidden, hidden), b_* are (hidden,).
    """

    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng, scale: float = 0.2):
        """Uniform(-scale, scale) weights, zero biases."""
        gen = np.random.default_rng(rng) if isinstance(rng, int) else rng

        def w(rows, cols):
            return init_uniform((rows, cols), -scale, scale, gen)

        return cls(
            W_z=w(hidden_dim, input_dim),
            W_r=w(hidden_dim, input_dim),
            W_h=w(hidden_dim, input_dim),
            U_z=w(hidden_dim, hidden_dim),
            U_r=w(hidden_dim, hidden_dim),
            U_h=w(hidden_dim, hidden_dim),
            b_z=zeros(hidden_dim, requires_grad=True),
            b_r=zeros(hidden_dim, requires_grad=True),
            b_h=zeros(hidden_dim, requires_grad=True),
        )

    @property
    def input_dim(self) -> int:
        return self.W_z.data.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.data.shape[0]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in GRU_FIELDS}

    def check_shapes(self):
        h, d = self.hidden_dim, self.input_dim
        expected = {
            "W_z": (h, d), "W_r": (h, d), "W_h": (h, d),
            "U_z": (h, h), "U_r": (h, h), "U_h": (h, h),
            "b_z": (h,), "b_r": (h,), "b_h": (h,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).data.shape
            if got != shape:
                raise ValueError(f"GRU param {name} has shape {got}, expected {shape}")


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One recurrence step; returns the next hidden state."""
    if x.data.shape != (p.input_dim,):
        raise ValueError(f"input has shape {x.data.shape}, expected ({p.input_dim},)")
    if h_prev.data.shape != (p.hidden_dim,):
        raise ValueError(
            f"hidden state has shape {h_prev.data.shape}, expected ({p.hidden_dim},)"
        )
    z = sigmoid(matmul(p.W_z, x) + matmul(p.U_z, h_prev) + p.b_z)
    r = sigmoid(matmul(p.W_r, x) + matmul(p.U_r, h_prev) + p.b_r)
    cand = tanh(matmul(p.W_h, x) + matmul(p.U_h, r * h_prev) + p.b_h)
    ones = constant(np.ones(p.hidden_dim))
    return (ones - z) * h_prev + z * cand


def gru_run(xs, p: GruParams, h0: Tensor | None = None) -> list:
    """Run the cell over a sequence; output t depends only on inputs <= t."""
    xs = list(xs)
    if not xs:
        raise ValueError("gru_run needs a nonempty sequence")
    h = h0 if h0 is not None else constant(np.zeros(p.hidden_dim))
    out = []
    for x in xs:
        h = gru_step(x, h, p)
        out.append(h)
    return out
