"""Masked bidirectional recurrent layer over encoder outputs.

Both cell types are first-class: the LSTM follows the classic six-gate
formulation and the GRU the standard update/reset/candidate one. Gate
pre-activations are computed strictly as ``(l @ W + h @ U) + b`` with
sigmoid written as ``1/(1+exp(-x))``, so a straight-line fp64 reference
of the same equations agrees bit for bit.

Masked steps freeze the carried state (copied unchanged) and emit a zero
row, which makes running over a padded sequence provably equivalent to
running over the truncated one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateMaskError, ShapeError
from .tensor import Tensor

LSTM = "lstm"
GRU = "gru"

LSTM_GATES = ("f", "i", "o", "c")
GRU_GATES = ("update", "reset", "candidate")


@dataclass
class CellState:
    """Hidden state ``h`` and, for LSTM only, the cell state ``c``."""
    h: Tensor
    c: Tensor | None = None


@dataclass
class RecurrentParams:
    """Per-gate weights: ``w_<gate>`` maps the input, ``u_<gate>`` the
    previous hidden state, ``b_<gate>`` is the bias."""
    cell: str
    input_size: int
    hidden_size: int
    weights: dict[str, Tensor]

    @classmethod
    def init(cls, cell: str, input_size: int, hidden_size: int,
             rng: np.random.Generator, dtype=np.float32) -> "RecurrentParams":
        gates = _gates_for(cell)
        kw = 1.0 / math.sqrt(input_size)
        ku = 1.0 / math.sqrt(hidden_size)
        weights: dict[str, Tensor] = {}
        for g in gates:
            weights[f"w_{g}"] = Tensor(
                rng.uniform(-kw, kw, (input_size, hidden_size)).astype(dtype),
                requires_grad=True)
            weights[f"u_{g}"] = Tensor(
                rng.uniform(-ku, ku, (hidden_size, hidden_size)).astype(dtype),
                requires_grad=True)
            weights[f"b_{g}"] = Tensor(
                np.zeros(hidden_size, dtype=dtype), requires_grad=True)
        return cls(cell=cell, input_size=input_size, hidden_size=hidden_size,
                   weights=weights)

    def validate(self) -> None:
        for g in _gates_for(self.cell):
            w = self.weights[f"w_{g}"]
            u = self.weights[f"u_{g}"]
            b = self.weights[f"b_{g}"]
            if w.shape != (self.input_size, self.hidden_size):
                raise ShapeError(f"w_{g} has shape {w.shape}, "
                                 f"expected {(self.input_size, self.hidden_size)}")
            if u.shape != (self.hidden_size, self.hidden_size):
                raise ShapeError(f"u_{g} has shape {u.shape}, "
                                 f"expected {(self.hidden_size, self.hidden_size)}")
            if b.shape != (self.hidden_size,):
                raise ShapeError(f"b_{g} has shape {b.shape}, expected {(self.hidden_size,)}")


def _gates_for(cell: str) -> tuple[str, ...]:
    if cell == LSTM:
        return LSTM_GATES
    if cell == GRU:
        return GRU_GATES
    raise ContractError(f"unknown cell type {cell!r}, expected {LSTM!r} or {GRU!r}")


def _gate(p: RecurrentParams, gate: str, l_t: Tensor, h: Tensor) -> Tensor:
    w = p.weights[f"w_{gate}"]
    u = p.weights[f"u_{gate}"]
    b = p.weights[f"b_{gate}"]
    # (l@W + h@U) + b, left to right: references depend on this order
    return T.add_bias(T.add(T.matmul(l_t, w), T.matmul(h, u)), b)


def lstm_step(l_t: Tensor, prev: CellState, p: RecurrentParams) -> CellState:
    if p.cell != LSTM:
        raise ContractError(f"lstm_step called with {p.cell!r} params")
    if prev.c is None:
        raise ContractError("lstm_step needs a cell state c in prev")
    f = T.sigmoid(_gate(p, "f", l_t, prev.h))
    i = T.sigmoid(_gate(p, "i", l_t, prev.h))
    o = T.sigmoid(_gate(p, "o", l_t, prev.h))
    c_tilde = T.tanh(_gate(p, "c", l_t, prev.h))
    c = T.add(T.mul(f, prev.c), T.mul(i, c_tilde))
    h = T.mul(o, T.tanh(c))
    return CellState(h=h, c=c)


def gru_step(l_t: Tensor, prev_h: Tensor, p: RecurrentParams) -> Tensor:
    if p.cell != GRU:
        raise ContractError(f"gru_step called with {p.cell!r} params")
    z = T.sigmoid(_gate(p, "update", l_t, prev_h))
    r = T.sigmoid(_gate(p, "reset", l_t, prev_h))
    w = p.weights["w_candidate"]
    u = p.weights["u_candidate"]
    b = p.weights["b_candidate"]
    h_cand = T.tanh(T.add_bias(T.add(T.matmul(l_t, w), T.matmul(T.mul(r, prev_h), u)), b))
    return T.add(T.mul(1.0 - z, prev_h), T.mul(z, h_cand))


def _directional_pass(seq: Tensor, mask: np.ndarray, p: RecurrentParams,
                      cell: str, reverse: bool) -> list[Tensor]:
    b, s, _ = seq.shape
    hid = p.hidden_size
    dtype = seq.dtype
    h = Tensor(np.zeros((b, hid), dtype=dtype))
    c = Tensor(np.zeros((b, hid), dtype=dtype)) if cell == LSTM else None
    steps = range(s - 1, -1, -1) if reverse else range(s)
    out: list[Tensor] = []
    for t in steps:
        x_t = T.index_step(seq, t)
        if cell == LSTM:
            new = lstm_step(x_t, CellState(h=h, c=c), p)
            h_new, c_new = new.h, new.c
        else:
            h_new, c_new = gru_step(x_t, h, p), None
        keep = np.broadcast_to(mask[:, t, None], (b, hid))
        h = T.where(keep, h_new, h)
        if c is not None:
            c = T.where(keep, c_new, c)
        out.append(T.mul(h, Tensor(keep.astype(dtype))))
    if reverse:
        out.reverse()
    return out


def bidirectional_encode(seq: Tensor, mask, fwd: RecurrentParams,
                         bwd: RecurrentParams, cell: str) -> Tensor:
    """Run ``fwd`` left-to-right and ``bwd`` right-to-left over the real
    positions of ``seq`` and concatenate per-position hidden states.

    ``seq`` is [seq_len, d] or batched [B, seq_len, d]; ``mask`` is a
    boolean array of matching leading shape. Output rows at masked
    positions are zero.
    """
    _gates_for(cell)
    if fwd.cell != cell or bwd.cell != cell:
        raise ContractError(f"cell {cell!r} does not match params "
                            f"({fwd.cell!r}, {bwd.cell!r})")
    m = np.asarray(mask, dtype=bool)
    single = seq.ndim == 2
    if single:
        seq = T.reshape(seq, (1,) + seq.shape)
        m = m.reshape(1, -1)
    if seq.ndim != 3:
        raise ShapeError(f"seq must be 2-D or 3-D, got shape {seq.shape}")
    if m.shape != seq.shape[:2]:
        raise ShapeError(f"mask shape {m.shape} does not match sequence {seq.shape[:2]}")
    if not m.any(axis=1).all():
        raise DegenerateMaskError("bidirectional_encode: a sequence is fully masked")

    out_f = _directional_pass(seq, m, fwd, cell, reverse=False)
    out_b = _directional_pass(seq, m, bwd, cell, reverse=True)
    full = T.concat([T.stack_steps(out_f), T.stack_steps(out_b)], axis=-1)
    if single:
        return T.reshape(full, full.shape[1:])
    return full
