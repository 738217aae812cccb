"""Shared builders for toy supernets and randomized test instances."""

from __future__ import annotations

import numpy as np

from lambda_nas.space import CellSpec, OpKind
from lambda_nas.supernet import SupernetState, init_supernet


def tiny_spec(num_ops: int = 3, feature_width: int = 3) -> CellSpec:
    """Two intermediate nodes, three edges, small width."""
    ops = (OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR, OpKind.ZERO, OpKind.AVG_SCALE)[:num_ops]
    return CellSpec(
        node_count=3,
        edges=((0, 1), (0, 2), (1, 2)),
        ops=ops,
        feature_width=feature_width,
    )


def toy_net(
    seed: int,
    layers: int = 2,
    num_ops: int = 3,
    feature_width: int = 3,
    input_dim: int = 3,
    num_classes: int = 2,
) -> SupernetState:
    spec = tiny_spec(num_ops=num_ops, feature_width=feature_width)
    return init_supernet(spec, input_dim, num_classes, layers, seed=seed)


def random_batch(rng: np.random.Generator, n: int, input_dim: int, num_classes: int):
    x = rng.uniform(-1.5, 1.5, size=(n, input_dim))
    y = rng.integers(0, num_classes, size=n)
    return x, y


def randomize_params(state: SupernetState, rng: np.random.Generator, scale: float = 0.6) -> None:
    """Overwrite every parameter (biases included) with random values."""
    from lambda_nas.supernet import named_params

    for _, arr in named_params(state):
        arr[...] = rng.uniform(-scale, scale, size=arr.shape)


def orthogonal_rows_off_nullspace(
    spec: CellSpec, layers: int, rng: np.random.Generator
) -> np.ndarray:
    """Random rows, projected off the per-edge-constant null space, then
    Gram-Schmidt orthogonalized and rescaled to random O(1) norms.

    The resulting matrix satisfies the hypotheses of the gradient-norm lower
    bound by construction (up to machine precision).
    """
    dim = spec.alpha_size
    free = dim - spec.num_edges
    if layers > free:
        raise ValueError(f"cannot fit {layers} orthogonal rows in a {free}-dim complement")
    rows = []
    attempts = 0
    while len(rows) < layers:
        attempts += 1
        if attempts > 100 * layers:
            raise RuntimeError("Gram-Schmidt failed to find independent rows")
        v = rng.standard_normal(dim)
        for blk in spec.edge_blocks():
            v[blk] -= v[blk].mean()
        for r in rows:
            v -= r * (r @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-6:
            continue
        rows.append(v / norm)
    scales = rng.uniform(0.1, 2.0, size=layers)
    return np.array(rows) * scales[:, None]
