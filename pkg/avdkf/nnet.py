"""
Minimal differentiable-network kernel on top of torch (float64, CPU).

Layers initialize weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and biases to 0, drawing
from an explicit `torch.Generator` so that a seed fully determines a model.
"""

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from typing import Literal

import torch
from torch import nn
from torch.nn import functional as F

from .util import DTYPE

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "identity", "softplus", "sigmoid", "relu"]

ACTIVATIONS: dict[Activation, Callable[[torch.Tensor], torch.Tensor]] = {
    "tanh": torch.tanh,
    "identity": lambda x: x,
    "softplus": F.softplus,
    "sigmoid": torch.sigmoid,
    "relu": torch.relu,
}


class NonFiniteError(ValueError):
    """Raised when a gradient or objective stops being finite."""


def _uniform_(tensor: torch.Tensor, bound: float, generator: torch.Generator | None):
    with torch.no_grad():
        sample = torch.rand(tensor.shape, generator=generator, dtype=tensor.dtype)
        tensor.copy_((2 * sample - 1) * bound)


class Dense(nn.Module):
    """activation(W x + b)"""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: Activation = "identity",
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{activation}'")
        self.activation = activation
        self.linear = nn.Linear(in_dim, out_dim, dtype=DTYPE)
        self.reset_parameters(generator)

    @property
    def in_dim(self) -> int:
        return self.linear.in_features

    @property
    def out_dim(self) -> int:
        return self.linear.out_features

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        _uniform_(self.linear.weight, 1 / math.sqrt(self.in_dim), generator)
        nn.init.zeros_(self.linear.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(
                f"Dense layer expects {self.in_dim} input features, got {x.shape[-1]}"
            )
        return ACTIVATIONS[self.activation](self.linear(x))


def dense(layer: Dense, x: torch.Tensor, activation: Activation | None = None):
    """Functional form of a Dense layer, optionally overriding its activation."""
    if activation is None:
        return layer(x)
    return ACTIVATIONS[activation](layer.linear(x))


class MLP(nn.Sequential):
    """Stack of Dense layers with a shared hidden activation and a separate output one."""

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        out_dim: int | None = None,
        activation: Activation = "tanh",
        out_activation: Activation = "identity",
        generator: torch.Generator | None = None,
    ):
        layers: list[Dense] = []
        dims = [in_dim, *hidden]
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            layers.append(Dense(d_in, d_out, activation, generator))
        if out_dim is not None:
            layers.append(Dense(dims[-1], out_dim, out_activation, generator))
        super().__init__(*layers)
        self.in_dim = in_dim
        self.out_dim = out_dim if out_dim is not None else dims[-1]


class BackwardLSTM(nn.Module):
    """
    Backward recurrent pass: h_t summarizes u_{t:T}.

    Runs a single-layer LSTM over the time-reversed sequence with zero initial state and
    reverses the outputs back, so h_t never depends on u_{1:t-1}.
    """

    def __init__(
        self, in_dim: int, hidden: int, generator: torch.Generator | None = None
    ):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        self.lstm = nn.LSTM(in_dim, hidden, batch_first=True, dtype=DTYPE)
        self.reset_parameters(generator)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        for name, param in self.lstm.named_parameters():
            if name.startswith("weight"):
                fan_in = param.shape[1]
                _uniform_(param, 1 / math.sqrt(fan_in), generator)
            else:
                nn.init.zeros_(param)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """u: (..., T, in_dim) -> (..., T, hidden)"""
        if u.shape[-2] == 0:
            raise ValueError("Recurrent pass over an empty sequence")
        if u.shape[-1] != self.in_dim:
            raise ValueError(f"Expected {self.in_dim} features, got {u.shape[-1]}")
        batch_shape = u.shape[:-2]
        flat = u.reshape(-1, *u.shape[-2:])
        out, _ = self.lstm(torch.flip(flat, dims=[1]))
        return torch.flip(out, dims=[1]).reshape(*batch_shape, u.shape[-2], self.hidden)


def recurrent_backward(rnn: BackwardLSTM, u: torch.Tensor) -> torch.Tensor:
    return rnn(u)


def grad(
    objective: torch.Tensor, inputs: Iterable[torch.Tensor], **kwargs
) -> tuple[torch.Tensor, ...]:
    """Exact reverse-mode derivatives of a scalar objective."""
    if objective.numel() != 1:
        raise ValueError(
            f"Gradient requires a scalar objective, got shape {tuple(objective.shape)}"
        )
    return torch.autograd.grad(objective, list(inputs), **kwargs)


def make_optimizer(
    params: Iterable[torch.Tensor],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.Adam:
    """
    Adaptive first-order optimizer.

    Adam's step is m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected m_hat, v_hat.
    """
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps)


def opt_step(optimizer: torch.optim.Optimizer) -> None:
    """Applies one update from the gradients accumulated in `.grad`."""
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteError("Non-finite gradient, refusing to update")
    optimizer.step()
