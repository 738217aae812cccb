"""Layer alignment, correction directions, and softmax Jacobian analytics.

Given the per-layer gradient matrix G (row l = gradient of the loss with
respect to layer l's injected probabilities), this module computes:

  * the alignment score: mean pairwise cosine similarity over layer pairs,
  * the sign-alignment score: mean pairwise <g, g'> / <|g|, |g'|>,
  * the per-pair correction direction delta(g, g') = d cos(g, g') / d g
    (resp. the sign-variant analogue), and the stacked correction matrix
    whose row l sums delta(G[l], G[l']) over l' != l,
  * spectra of the blockwise softmax Jacobian diag(p) - p p^T and the
    residual of a vector against its per-edge-constant null space,
  * a numeric check of the gradient-norm lower bound
    ||J g_total||^2 >= min_nonzero_eig^2 * L * min_l ||G[l]||^2
    that holds whenever the rows are mutually orthogonal and orthogonal to
    the Jacobian's null space.

All functions are pure; degenerate (near-zero) layer gradients raise rather
than being silently clamped, since every formula above divides by row norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .space import CellSpec, softmax_per_edge

__all__ = [
    "AlignmentReport",
    "DegenerateGradientError",
    "DeltaMatrix",
    "JacobianSpectrum",
    "NORM_FLOOR",
    "Prop1Result",
    "alignment_report",
    "build_delta",
    "delta_pair",
    "lambda_alignment",
    "lambda_sign",
    "nullspace_residual",
    "prop1_check",
    "softmax_jacobian_spectrum",
]

NORM_FLOOR = 1e-12


class DegenerateGradientError(ValueError):
    """A layer gradient (or pair product) is numerically zero.

    The alignment formulas assume every layer receives a nonzero gradient;
    callers are expected to skip the regularizer for the offending step.
    """


def _check_rows(G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2:
        raise ValueError(f"expected a (layers, alpha) matrix, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("layer gradient matrix must be finite")
    return G


def lambda_alignment(G: np.ndarray) -> float:
    """Mean pairwise cosine similarity between layer gradient rows."""
    G = _check_rows(G)
    L = G.shape[0]
    if L < 2:
        raise ValueError("alignment needs at least two layers")
    norms = np.linalg.norm(G, axis=1)
    if np.any(norms <= NORM_FLOOR):
        raise DegenerateGradientError(f"layer gradient norm below {NORM_FLOOR}")
    unit = G / norms[:, None]
    cos = unit @ unit.T
    iu = np.triu_indices(L, k=1)
    return float(cos[iu].mean())


def lambda_sign(G: np.ndarray) -> float:
    """Mean pairwise sign correlation <g, g'> / <|g|, |g'|> over layer pairs.

    Equals 1 exactly when every pair agrees in sign on all coordinates of
    mutual support, and -1 under a full sign flip.
    """
    G = _check_rows(G)
    L = G.shape[0]
    if L < 2:
        raise ValueError("alignment needs at least two layers")
    absG = np.abs(G)
    total = 0.0
    for a in range(L):
        for b in range(a + 1, L):
            denom = float(absG[a] @ absG[b])
            if denom <= NORM_FLOOR:
                raise DegenerateGradientError("pairwise |g|^T |g'| below norm floor")
            total += float(G[a] @ G[b]) / denom
    return total / math.comb(L, 2)


@dataclass(frozen=True)
class AlignmentReport:
    """Alignment summary of one layer-gradient matrix."""

    lambda_cosine: float
    lambda_sign: float
    pairwise: np.ndarray  # (L, L) symmetric cosine matrix, ones on diagonal
    min_layer_grad_norm: float

    def to_json(self) -> dict:
        return {
            "lambda": self.lambda_cosine,
            "lambda_sign": self.lambda_sign,
            "pairwise": [[float(v) for v in row] for row in self.pairwise],
            "min_layer_grad_norm": self.min_layer_grad_norm,
        }


def alignment_report(G: np.ndarray) -> AlignmentReport:
    G = _check_rows(G)
    norms = np.linalg.norm(G, axis=1)
    if np.any(norms <= NORM_FLOOR):
        raise DegenerateGradientError(f"layer gradient norm below {NORM_FLOOR}")
    unit = G / norms[:, None]
    pairwise = unit @ unit.T
    L = G.shape[0]
    iu = np.triu_indices(L, k=1)
    return AlignmentReport(
        lambda_cosine=float(pairwise[iu].mean()),
        lambda_sign=lambda_sign(G),
        pairwise=pairwise,
        min_layer_grad_norm=float(norms.min()),
    )


def delta_pair(g: np.ndarray, g2: np.ndarray, variant: str) -> np.ndarray:
    """Derivative of one pairwise alignment term with respect to ``g``.

    cosine variant: (I - g g^T / ||g||^2) g2 / (||g|| ||g2||), which is always
    orthogonal to g. sign variant: g2 / a - (<g, g2> / a^2) sign(g) |g2| with
    a = <|g|, |g2|> and sign(0) = 0, so zero coordinates contribute nothing.
    """
    g = np.asarray(g, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g.shape != g2.shape or g.ndim != 1:
        raise ValueError(f"delta_pair expects two equal-length vectors, got {g.shape}, {g2.shape}")
    if variant == "cosine":
        sq = float(g @ g)
        n1 = math.sqrt(sq)
        n2 = np.linalg.norm(g2)
        if n1 <= NORM_FLOOR or n2 <= NORM_FLOOR:
            raise DegenerateGradientError("delta_pair input norm below floor")
        return (g2 - g * (g @ g2) / sq) / (n1 * n2)
    if variant == "sign":
        a = float(np.abs(g) @ np.abs(g2))
        if a <= NORM_FLOOR:
            raise DegenerateGradientError("delta_pair |g|^T |g2| below floor")
        s = float(g @ g2)
        return g2 / a - (s / (a * a)) * np.sign(g) * np.abs(g2)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class DeltaMatrix:
    """Stacked correction directions; row l = sum over l' != l of delta(G[l], G[l'])."""

    delta: np.ndarray
    frobenius_norm: float


def build_delta(G: np.ndarray, variant: str) -> DeltaMatrix:
    """Stack the summed pairwise correction directions for every layer."""
    G = _check_rows(G)
    L = G.shape[0]
    delta = np.zeros_like(G)
    for a in range(L):
        for b in range(L):
            if a != b:
                delta[a] += delta_pair(G[a], G[b], variant)
    return DeltaMatrix(delta=delta, frobenius_norm=float(np.linalg.norm(delta)))


# ----------------------------------------------------------------------
# softmax Jacobian analytics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class JacobianSpectrum:
    """Eigenvalues of each per-edge softmax Jacobian block, ascending."""

    block_eigenvalues: tuple[np.ndarray, ...]
    min_nonzero_eig: float


def softmax_jacobian_spectrum(spec: CellSpec, alpha: np.ndarray) -> JacobianSpectrum:
    """Eigendecompose diag(p) - p p^T block by block.

    Each block carries exactly one structural zero eigenvalue (eigenvector
    along the ones direction); ``min_nonzero_eig`` is the smallest of the
    remaining eigenvalues across all edges. Near a one-hot p the whole block
    collapses toward zero, which is the saturation regime.
    """
    p = softmax_per_edge(spec, alpha)
    blocks = []
    min_nonzero = np.inf
    for blk in spec.edge_blocks():
        pb = p[blk]
        J = np.diag(pb) - np.outer(pb, pb)
        eigs = np.linalg.eigvalsh(J)
        blocks.append(eigs)
        min_nonzero = min(min_nonzero, eigs[1:].min())
    return JacobianSpectrum(block_eigenvalues=tuple(blocks), min_nonzero_eig=float(min_nonzero))


def _jacobian_matvec(spec: CellSpec, alpha: np.ndarray, v: np.ndarray) -> np.ndarray:
    p = softmax_per_edge(spec, alpha)
    out = np.empty_like(v, dtype=np.float64)
    for blk in spec.edge_blocks():
        pb, vb = p[blk], v[blk]
        out[blk] = pb * vb - pb * np.dot(pb, vb)
    return out


def nullspace_residual(spec: CellSpec, alpha: np.ndarray, v: np.ndarray) -> float:
    """||J(alpha) v||_2; vanishes iff v is constant within every edge block."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (spec.alpha_size,):
        raise ValueError(f"vector shape {v.shape} != ({spec.alpha_size},)")
    return float(np.linalg.norm(_jacobian_matvec(spec, alpha, v)))


@dataclass(frozen=True)
class Prop1Result:
    """Outcome of the gradient-norm lower-bound check."""

    lhs: float
    rhs: float
    holds: bool | None  # None when the precondition failed and the check was skipped
    precondition_ok: bool
    message: str = ""


def prop1_check(
    spec: CellSpec,
    alpha: np.ndarray,
    G: np.ndarray,
    ortho_tol: float = 1e-8,
    slack: float = 1e-10,
) -> Prop1Result:
    """Check ||J sum_l G[l]||^2 >= min_nonzero_eig^2 * L * min_l ||G[l]||^2.

    The bound requires the rows of G to be pairwise orthogonal and orthogonal
    to the per-edge-constant null space; both hypotheses are verified (to
    ``ortho_tol``, relative) rather than assumed, and a violation skips the
    check instead of reporting a spurious verdict.
    """
    G = _check_rows(G)
    L = G.shape[0]
    if G.shape[1] != spec.alpha_size:
        raise ValueError(f"G has {G.shape[1]} columns, expected {spec.alpha_size}")
    norms = np.linalg.norm(G, axis=1)
    if np.any(norms <= NORM_FLOOR):
        return Prop1Result(0.0, 0.0, None, False, "zero layer gradient row")
    for a in range(L):
        for b in range(a + 1, L):
            if abs(float(G[a] @ G[b])) > ortho_tol * norms[a] * norms[b]:
                return Prop1Result(0.0, 0.0, None, False, f"rows {a} and {b} are not orthogonal")
    for a in range(L):
        null_part = 0.0
        for blk in spec.edge_blocks():
            seg = G[a, blk]
            null_part += seg.sum() ** 2 / seg.size
        if math.sqrt(null_part) > ortho_tol * norms[a]:
            return Prop1Result(0.0, 0.0, None, False, f"row {a} overlaps the null space")

    total = G.sum(axis=0)
    lhs = float(np.linalg.norm(_jacobian_matvec(spec, alpha, total)) ** 2)
    spectrum = softmax_jacobian_spectrum(spec, alpha)
    rhs = spectrum.min_nonzero_eig ** 2 * L * float(norms.min() ** 2)
    return Prop1Result(lhs=lhs, rhs=rhs, holds=bool(lhs >= rhs - slack), precondition_ok=True)
