from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from bundle.fields import FeatureField
from errors import InvalidArgumentError
from group_core.irreps import IrrepLabel, RepSpace
from message_passing.messages import MessageResult

SCHUR_TOL = 1e-12


def _channels_by_label(V: RepSpace) -> dict[IrrepLabel, list[int]]:
    out: dict[IrrepLabel, list[int]] = {}
    for channel in V.channels:
        out.setdefault(channel.label, []).append(channel.index)
    return out


@dataclass(frozen=True, eq=False)
class LinearUpdate:
    """Channel mixing within each irrep type: weights[label] has shape (mult_out, mult_in)."""

    rep_in: RepSpace
    rep_out: RepSpace
    weights: Mapping[IrrepLabel, np.ndarray]

    def __post_init__(self):
        inputs = _channels_by_label(self.rep_in)
        outputs = _channels_by_label(self.rep_out)
        checked = {}
        for label, W in self.weights.items():
            W = np.atleast_2d(np.asarray(W, dtype=float))
            if label not in outputs or label not in inputs:
                raise InvalidArgumentError(f"weights given for {label}, which is not present on both sides")
            expected = (len(outputs[label]), len(inputs[label]))
            if W.shape != expected:
                raise InvalidArgumentError(f"weights for {label} have shape {W.shape}, expected {expected}")
            checked[label] = W
        missing = [str(label) for label in outputs if label not in checked]
        if missing:
            raise InvalidArgumentError(f"no weights for output irreps {', '.join(missing)}")
        object.__setattr__(self, "weights", checked)

    @classmethod
    def identity(cls, V: RepSpace) -> "LinearUpdate":
        return cls(V, V, {label: np.eye(len(idx)) for label, idx in _channels_by_label(V).items()})

    @classmethod
    def from_dense(cls, rep_in: RepSpace, rep_out: RepSpace, matrix) -> "LinearUpdate":
        """Reads per-irrep weights off a full (dim out, dim in) matrix.

        Blocks between channels of different irreps must vanish, blocks between equal irreps
        must be multiples of the identity; anything else is not an intertwiner.
        """
        A = np.asarray(matrix, dtype=float)
        if A.shape != (rep_out.dim, rep_in.dim):
            raise InvalidArgumentError(f"matrix has shape {A.shape}, expected ({rep_out.dim}, {rep_in.dim})")
        scale = max(1.0, float(np.abs(A).max(initial=0.0)))
        inputs = _channels_by_label(rep_in)
        outputs = _channels_by_label(rep_out)
        weights = {label: np.zeros((len(idx), len(inputs.get(label, ())))) for label, idx in outputs.items()}
        for co in rep_out.channels:
            row = outputs[co.label].index(co.index)
            for ci in rep_in.channels:
                block = A[co.slice, ci.slice]
                if co.label != ci.label:
                    if np.abs(block).max() > SCHUR_TOL * scale:
                        raise InvalidArgumentError(f"weight couples channel {ci.index} ({ci.label}) to channel {co.index} ({co.label})")
                    continue
                c = float(np.trace(block)) / co.label.dim
                if np.abs(block - c * np.eye(co.label.dim)).max() > SCHUR_TOL * scale:
                    raise InvalidArgumentError(f"block {ci.index} -> {co.index} is not a multiple of the identity")
                weights[co.label][row, inputs[ci.label].index(ci.index)] = c
        return cls(rep_in, rep_out, weights)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.rep_in.dim:
            raise InvalidArgumentError(f"input has dimension {values.shape[-1]}, expected {self.rep_in.dim}")
        out = np.zeros(values.shape[:-1] + (self.rep_out.dim,))
        inputs = _channels_by_label(self.rep_in)
        for label, out_idx in _channels_by_label(self.rep_out).items():
            W = self.weights[label]
            stacked = np.stack([values[..., self.rep_in.channel(c).slice] for c in inputs[label]], axis=-2)
            mixed = np.einsum("oi,...id->...od", W, stacked)
            for row, c in enumerate(out_idx):
                out[..., self.rep_out.channel(c).slice] = mixed[..., row, :]
        return out


@dataclass(frozen=True, eq=False)
class GatedUpdate:
    """h^c = s_c(x) m^c with s_c = sigma(w_c . x + b_c) / sigma(b_c), x the gate channels.

    Gates read invariant channels only, so each scale commutes with rho.
    """

    rep: RepSpace
    gate_channels: tuple[int, ...]
    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        gates = tuple(int(c) for c in self.gate_channels)
        for c in gates:
            if not self.rep.channel(c).label.is_trivial:
                raise InvalidArgumentError(f"gate input channel {c} is {self.rep.channel(c).label}, gates read invariant channels only")
        n_channels = len(self.rep.channels)
        W = np.asarray(self.weights, dtype=float).reshape(n_channels, len(gates))
        b = np.zeros(n_channels) if self.bias is None else np.asarray(self.bias, dtype=float).reshape(n_channels)
        object.__setattr__(self, "gate_channels", gates)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @classmethod
    def passthrough(cls, V: RepSpace) -> "GatedUpdate":
        trivial = V.trivial_channels()
        return cls(V, trivial, np.zeros((len(V.channels), len(trivial))))

    def scales(self, values: np.ndarray) -> np.ndarray:
        """Per-node, per-channel gate values, shape (n, channels)."""
        x = np.stack([values[:, self.rep.channel(c).start] for c in self.gate_channels], axis=1) if self.gate_channels else np.zeros((len(values), 0))
        return expit(x @ self.weights.T + self.bias) / expit(self.bias)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        s = self.scales(values)
        out = np.array(values)
        for channel in self.rep.channels:
            out[:, channel.slice] = s[:, channel.index, None] * values[:, channel.slice]
        return out


UpdateRule = Union[LinearUpdate, GatedUpdate]


def update(f: FeatureField, m: MessageResult, mode: UpdateRule) -> FeatureField:
    """New features U(m) on f's graph and charts."""
    if isinstance(mode, LinearUpdate):
        if mode.rep_in != m.rep:
            raise InvalidArgumentError("linear update input space differs from the message space")
        return FeatureField(f.graph, mode.rep_out, mode(m.values), f.charts)
    if mode.rep != m.rep:
        raise InvalidArgumentError("gated update space differs from the message space")
    return FeatureField(f.graph, m.rep, mode(m.values), f.charts)


def readout(f: FeatureField, weights: Union[Mapping[int, float], Sequence[float]]) -> tuple[np.ndarray, float]:
    """y_i = sum_c w_c h_i^c over invariant channels, and the node sum."""
    if isinstance(weights, Mapping):
        items = [(int(c), float(w)) for c, w in weights.items()]
    else:
        w = list(weights)
        if len(w) != len(f.rep.channels):
            raise InvalidArgumentError(f"{len(w)} readout weights for {len(f.rep.channels)} channels")
        items = [(c, float(x)) for c, x in enumerate(w) if x != 0.0]
    y = np.zeros(f.graph.n)
    for c, w in items:
        channel = f.rep.channel(c)
        if not channel.label.is_trivial:
            raise InvalidArgumentError(f"readout weight on channel {c} ({channel.label}); only invariant channels can be read out")
        y = y + w * f.values[:, channel.start]
    return y, float(sum(y.tolist()))
