"""Adam, SGD, and SWATS (Adam that switches itself to SGD).

SWATS runs Adam and tracks a bias-corrected estimate of the SGD learning
rate that would reproduce Adam's steps: after each step p it computes the
projection gamma = -(p.p)/(p.g), folds it into an exponential average
lam, and switches permanently to SGD with rate Lambda = lam/(1-beta2^k)
once the estimate agrees with gamma to within ``eps_switch``.

The Adam phase calls the same kernel as ``adam_step`` and the SGD phase
the same kernel as ``sgd_step``, so a SWATS trajectory is bit-identical
to pure Adam before the switch and to SGD(Lambda) after it. gamma and
lam are accumulated at float64 regardless of parameter dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DivergenceError
from .tensor import Tensor

ADAM_PHASE = "adam"
SGD_PHASE = "sgd"


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class SgdState:
    lr: float


@dataclass
class SwatsState:
    adam: AdamState = field(default_factory=AdamState)
    eps_switch: float = 1e-9
    phase: str = ADAM_PHASE
    lam: float = 0.0
    sgd_lr: float | None = None  # Lambda, fixed at the switch

    @property
    def k(self) -> int:
        return self.adam.k


def _check_finite(name: str, g: np.ndarray) -> None:
    if not np.isfinite(g).all():
        raise DivergenceError(f"gradient of {name!r} is not finite")


def _adam_apply(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                st: AdamState) -> dict[str, np.ndarray]:
    """One Adam update on every param, in place; returns the applied
    deltas. Moment buffers are created as zeros on first touch."""
    st.k += 1
    k = st.k
    b1, b2 = st.beta1, st.beta2
    bc1 = 1.0 - b1 ** k
    bc2 = 1.0 - b2 ** k
    deltas: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        _check_finite(name, g)
        m = st.m.get(name)
        v = st.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        st.m[name] = m
        st.v[name] = v
        delta = (-st.lr * (m / bc1)) / (np.sqrt(v / bc2) + st.eps)
        p.data = p.data + delta
        deltas[name] = delta
    return deltas


def _sgd_apply(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               lr: float) -> None:
    for name, p in params.items():
        g = np.asarray(grads[name])
        _check_finite(name, g)
        p.data = p.data - lr * g


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              st: AdamState) -> AdamState:
    _adam_apply(params, grads, st)
    return st


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
             st: SgdState) -> SgdState:
    _sgd_apply(params, grads, st.lr)
    return st


def swats_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               st: SwatsState) -> SwatsState:
    if st.phase == SGD_PHASE:
        _sgd_apply(params, grads, st.sgd_lr)
        return st
    deltas = _adam_apply(params, grads, st.adam)
    k = st.adam.k
    pg = 0.0
    pp = 0.0
    for name in params:
        d = deltas[name].ravel().astype(np.float64)
        g = np.asarray(grads[name]).ravel().astype(np.float64)
        pg += float(np.dot(d, g))
        pp += float(np.dot(d, d))
    if pg != 0.0:
        gamma = -pp / pg
        b2 = st.adam.beta2
        st.lam = b2 * st.lam + (1.0 - b2) * gamma
        lam_hat = st.lam / (1.0 - b2 ** k)
        if k > 1 and abs(lam_hat - gamma) < st.eps_switch:
            st.phase = SGD_PHASE
            st.sgd_lr = lam_hat
    return st


def apply_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state):
    """Dispatch one optimizer step by state type."""
    if isinstance(state, SwatsState):
        return swats_step(params, grads, state)
    if isinstance(state, AdamState):
        return adam_step(params, grads, state)
    if isinstance(state, SgdState):
        return sgd_step(params, grads, state)
    raise ContractError(f"unknown optimizer state {type(state).__name__}")


def make_state(kind: str, lr: float | None = None, *, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8,
               eps_switch: float = 1e-9):
    """Build a fresh optimizer state: 'adam', 'sgd', or 'swats'."""
    if kind == "adam":
        return AdamState(lr=1e-3 if lr is None else lr, beta1=beta1, beta2=beta2,
                         eps=eps)
    if kind == "sgd":
        return SgdState(lr=0.01 if lr is None else lr)
    if kind == "swats":
        adam = AdamState(lr=1e-3 if lr is None else lr, beta1=beta1, beta2=beta2,
                         eps=eps)
        return SwatsState(adam=adam, eps_switch=eps_switch)
    raise ContractError(f"unknown optimizer {kind!r}, expected adam, sgd, or swats")


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``;
    returns the pre-clip norm (computed at float64)."""
    total = 0.0
    for g in grads.values():
        ga = np.asarray(g)
        total += float(np.dot(ga.ravel().astype(np.float64),
                              ga.ravel().astype(np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
