"""Brute-force oracles for every approximated gradient.

These deliberately share no differentiation code with the quantities they
check (beyond the forward pass itself): the per-layer probability gradients
are re-derived from loss differences at perturbed P entries, and the
alignment gradient with respect to the operation weights is re-derived from
coordinate-wise central differences of the alignment value itself. Both pay
the full brute-force cost and are therefore guarded to tiny networks.
"""

from __future__ import annotations

import numpy as np

from .alignment import lambda_alignment, lambda_sign
from .supernet import SupernetState, broadcast_P, forward, layer_grads, named_params

__all__ = ["alignment_value", "oracle_layer_grad", "oracle_reg_grad"]

PARAM_BUDGET = 5000


def _param_total(state: SupernetState) -> int:
    return sum(arr.size for _, arr in named_params(state))


def _loss_at(state, P, x, y) -> float:
    return forward(state, P, x, y).loss_value


def oracle_layer_grad(
    state: SupernetState, P: np.ndarray, x: np.ndarray, y: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central difference of the loss with respect to every P entry."""
    if _param_total(state) > PARAM_BUDGET:
        raise ValueError(f"oracle guarded to <= {PARAM_BUDGET} parameters")
    P = np.asarray(P, dtype=np.float64)
    G = np.empty_like(P)
    for l in range(P.shape[0]):
        for k in range(P.shape[1]):
            orig = P[l, k]
            P[l, k] = orig + h
            up = _loss_at(state, P, x, y)
            P[l, k] = orig - h
            down = _loss_at(state, P, x, y)
            P[l, k] = orig
            G[l, k] = (up - down) / (2.0 * h)
    return G


def alignment_value(
    state: SupernetState, alpha: np.ndarray, x: np.ndarray, y: np.ndarray, variant: str
) -> float:
    """Alignment of the per-layer gradients at the current weights."""
    P = broadcast_P(state.spec, alpha, state.num_layers)
    _, G, _ = layer_grads(state, P, x, y)
    if variant == "cosine":
        return lambda_alignment(G)
    if variant == "sign":
        return lambda_sign(G)
    raise ValueError(f"variant must be 'cosine' or 'sign', got {variant!r}")


def oracle_reg_grad(
    state: SupernetState,
    alpha: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    variant: str,
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Coordinate central differences of the alignment value over all weights.

    Every probe point recomputes the full per-layer gradient matrix, so the
    cost is O(|omega|) full passes; degenerate gradients at any probe point
    propagate as DegenerateGradientError.
    """
    if _param_total(state) > PARAM_BUDGET:
        raise ValueError(f"oracle guarded to <= {PARAM_BUDGET} parameters")
    grads: dict[str, np.ndarray] = {}
    for name, arr in named_params(state):
        g = np.empty_like(arr)
        flat_arr = arr.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_arr.size):
            orig = flat_arr[k]
            flat_arr[k] = orig + h
            up = alignment_value(state, alpha, x, y, variant)
            flat_arr[k] = orig - h
            down = alignment_value(state, alpha, x, y, variant)
            flat_arr[k] = orig
            flat_g[k] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads
