"""Weight-sharing stack of cells with per-layer probability injection.

Every layer holds its own operation parameters but the architecture
probabilities are injected from outside as an explicit (layers, |alpha|)
matrix P, one row per layer. Because each row enters the tape as independent
scalar leaves, a single backward pass yields the full per-layer gradient
matrix G with G[l] = dL/dP[l] alongside the operation-weight gradients.

Macro-architecture: an affine stem projects the input to the cell width, each
cell consumes the previous layer's output as its node 0, the cell output is
the mean of the intermediate node outputs followed by a per-layer affine
projection, and an affine head produces class logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .space import CellSpec, OpKind, apply_op, softmax_per_edge
from .tape import Node, Tape

__all__ = [
    "CheckpointError",
    "ForwardPass",
    "SupernetState",
    "alpha_grad",
    "broadcast_P",
    "forward",
    "forward_from_alpha",
    "forward_shared_p",
    "init_supernet",
    "layer_grads",
    "load_checkpoint",
    "named_params",
    "pass_counts",
    "predict",
    "reset_pass_counts",
    "save_checkpoint",
]

CHECKPOINT_VERSION = 1

# Forward/backward pass counters, used to assert the estimator's cost
# contract (3 forward-backward passes per regularized inner step).
_pass_counts = {"forward": 0, "backward": 0}


def reset_pass_counts() -> None:
    _pass_counts["forward"] = 0
    _pass_counts["backward"] = 0


def pass_counts() -> dict[str, int]:
    return dict(_pass_counts)


class CheckpointError(ValueError):
    """Checkpoint file is malformed or belongs to a different cell spec."""


@dataclass
class LayerCell:
    """Per-layer operation parameters plus the output projection."""

    edge_ops: list[dict[str, np.ndarray] | None]  # indexed [e * num_ops + o]
    proj_w: np.ndarray
    proj_b: np.ndarray


@dataclass
class SupernetState:
    """All trainable arrays of the supernet. Mutated only between steps."""

    spec: CellSpec
    input_dim: int
    num_classes: int
    stem_w: np.ndarray
    stem_b: np.ndarray
    layers: list[LayerCell]
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def init_supernet(
    spec: CellSpec,
    input_dim: int,
    num_classes: int,
    layers: int,
    seed: int,
    init_scale: float = 1.0,
) -> SupernetState:
    """Deterministically initialize a stack of ``layers`` cells.

    Weights are Gaussian with std ``init_scale / sqrt(fan_in)``; biases start
    at zero. ``init_scale`` < 1 makes the parametric ops contractive, which
    deepens gradient decay across the stack.
    """
    if layers < 1:
        raise ValueError("need at least one layer")
    rng = np.random.default_rng(seed)
    fw = spec.feature_width

    def dense(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.standard_normal((fan_in, fan_out)) * (init_scale / np.sqrt(fan_in))

    cells = []
    for _ in range(layers):
        edge_ops: list[dict[str, np.ndarray] | None] = []
        for _e in range(spec.num_edges):
            for op in spec.ops:
                if op in (OpKind.AFFINE, OpKind.NONLINEAR):
                    edge_ops.append({"w": dense(fw, fw), "b": np.zeros(fw)})
                else:
                    edge_ops.append(None)
        cells.append(LayerCell(edge_ops=edge_ops, proj_w=dense(fw, fw), proj_b=np.zeros(fw)))
    return SupernetState(
        spec=spec,
        input_dim=input_dim,
        num_classes=num_classes,
        stem_w=dense(input_dim, fw),
        stem_b=np.zeros(fw),
        layers=cells,
        head_w=dense(fw, num_classes),
        head_b=np.zeros(num_classes),
    )


def named_params(state: SupernetState) -> list[tuple[str, np.ndarray]]:
    """All trainable arrays in a fixed, documented order."""
    out = [("stem/w", state.stem_w), ("stem/b", state.stem_b)]
    for l, cell in enumerate(state.layers):
        for e in range(state.spec.num_edges):
            for o, op in enumerate(state.spec.ops):
                params = cell.edge_ops[state.spec.alpha_index(e, o)]
                if params is None:
                    continue
                out.append((f"layer{l}/edge{e}/{op.value}/w", params["w"]))
                out.append((f"layer{l}/edge{e}/{op.value}/b", params["b"]))
        out.append((f"layer{l}/proj/w", cell.proj_w))
        out.append((f"layer{l}/proj/b", cell.proj_b))
    out.append(("head/w", state.head_w))
    out.append(("head/b", state.head_b))
    return out


def broadcast_P(spec: CellSpec, alpha: np.ndarray, layers: int) -> np.ndarray:
    """(layers, |alpha|) matrix with softmax_per_edge(alpha) in every row."""
    if layers < 1:
        raise ValueError("need at least one layer")
    p = softmax_per_edge(spec, alpha)
    return np.tile(p, (layers, 1))


@dataclass
class ForwardPass:
    """One built graph: the tape plus handles to every leaf of interest."""

    tape: Tape
    loss: Node | None
    logits: Node
    prob_nodes: list[list[Node]]  # [layer][alpha index]; rows may be shared
    param_nodes: dict[str, Node]
    _counted_backward: bool = field(default=False, repr=False)

    @property
    def loss_value(self) -> float:
        if self.loss is None:
            raise ValueError("graph was built without labels")
        return float(self.loss.value)

    def backward(self) -> dict[int, np.ndarray]:
        if self.loss is None:
            raise ValueError("graph was built without labels")
        _pass_counts["backward"] += 1
        return self.tape.backward(self.loss)


def _build(
    state: SupernetState,
    prob_nodes: list[list[Node]],
    tape: Tape,
    x: np.ndarray,
    y: np.ndarray | None,
) -> ForwardPass:
    spec = state.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.input_dim:
        raise ValueError(f"batch shape {x.shape} != (*, {state.input_dim})")
    _pass_counts["forward"] += 1

    param_nodes: dict[str, np.ndarray] = {}

    def leaf(name: str, arr: np.ndarray) -> Node:
        node = tape.leaf(arr)
        param_nodes[name] = node
        return node

    h = tape.add_bias(tape.matmul(tape.leaf(x), leaf("stem/w", state.stem_w)), leaf("stem/b", state.stem_b))
    incoming: dict[int, list[int]] = {}
    for e, (i, j) in enumerate(spec.edges):
        incoming.setdefault(j, []).append(e)

    for l, cell in enumerate(state.layers):
        nodes = [h]
        for j in range(1, spec.node_count):
            terms: list[tuple[Node, Node]] = []
            for e in incoming[j]:
                src = nodes[spec.edges[e][0]]
                for o, op in enumerate(spec.ops):
                    params = cell.edge_ops[spec.alpha_index(e, o)]
                    p_nodes = None
                    if params is not None:
                        p_nodes = {
                            "w": leaf(f"layer{l}/edge{e}/{op.value}/w", params["w"]),
                            "b": leaf(f"layer{l}/edge{e}/{op.value}/b", params["b"]),
                        }
                    out = apply_op(tape, op, p_nodes, src)
                    terms.append((prob_nodes[l][spec.alpha_index(e, o)], out))
            nodes.append(tape.scalar_combine(terms))
        acc = nodes[1]
        for j in range(2, spec.node_count):
            acc = tape.add(acc, nodes[j])
        cell_out = tape.scale(acc, 1.0 / (spec.node_count - 1))
        h = tape.add_bias(
            tape.matmul(cell_out, leaf(f"layer{l}/proj/w", cell.proj_w)),
            leaf(f"layer{l}/proj/b", cell.proj_b),
        )

    logits = tape.add_bias(tape.matmul(h, leaf("head/w", state.head_w)), leaf("head/b", state.head_b))
    loss = None if y is None else tape.softmax_cross_entropy(logits, y)
    return ForwardPass(tape=tape, loss=loss, logits=logits, prob_nodes=prob_nodes, param_nodes=param_nodes)


def forward(state: SupernetState, P: np.ndarray, x: np.ndarray, y: np.ndarray | None = None) -> ForwardPass:
    """Build the supernet graph with one independent probability row per layer.

    P is (layers, |alpha|); perturbed rows that leave the simplex are accepted
    as-is, which is what the finite-difference estimator relies on.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (state.num_layers, state.spec.alpha_size):
        raise ValueError(f"P shape {P.shape} != ({state.num_layers}, {state.spec.alpha_size})")
    tape = Tape()
    prob_nodes = [[tape.leaf(P[l, k]) for k in range(state.spec.alpha_size)] for l in range(state.num_layers)]
    return _build(state, prob_nodes, tape, x, y)


def forward_shared_p(state: SupernetState, p: np.ndarray, x: np.ndarray, y: np.ndarray | None = None) -> ForwardPass:
    """Build the graph with a single shared probability row used by all layers.

    The gradient of each shared slot then equals the sum over layers of the
    per-layer gradients, which provides an independent check of the
    weight-sharing decomposition.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (state.spec.alpha_size,):
        raise ValueError(f"p shape {p.shape} != ({state.spec.alpha_size},)")
    tape = Tape()
    row = [tape.leaf(p[k]) for k in range(state.spec.alpha_size)]
    prob_nodes = [row for _ in range(state.num_layers)]
    return _build(state, prob_nodes, tape, x, y)


def forward_from_alpha(
    state: SupernetState, alpha: np.ndarray, x: np.ndarray, y: np.ndarray | None = None
) -> tuple[ForwardPass, Node]:
    """Build the graph with the softmax itself on the tape.

    Returns the pass and the alpha leaf, so the end-to-end gradient of the
    loss with respect to the logits can be read off directly. Used as an
    oracle for the blockwise Jacobian chain rule.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (state.spec.alpha_size,):
        raise ValueError(f"alpha shape {alpha.shape} != ({state.spec.alpha_size},)")
    tape = Tape()
    alpha_node = tape.leaf(alpha)
    p_vec = tape.edge_softmax(alpha_node, state.spec.edge_blocks())
    row = [tape.index(p_vec, k) for k in range(state.spec.alpha_size)]
    prob_nodes = [row for _ in range(state.num_layers)]
    return _build(state, prob_nodes, tape, x, y), alpha_node


def layer_grads(
    state: SupernetState, P: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """One forward+backward pass: loss, per-layer G, and operation gradients.

    G[l, k] is the gradient of the loss with respect to P[l, k]; the returned
    dict maps parameter names (as in :func:`named_params`) to gradients.
    """
    fp = forward(state, P, x, y)
    grads = fp.backward()
    L, A = state.num_layers, state.spec.alpha_size
    G = np.empty((L, A))
    for l in range(L):
        for k in range(A):
            G[l, k] = float(grads[fp.prob_nodes[l][k].idx])
    omega = {name: grads[node.idx] for name, node in fp.param_nodes.items()}
    return fp.loss_value, G, omega


def alpha_grad(spec: CellSpec, alpha: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Chain the summed layer gradients through the blockwise softmax Jacobian.

    Computes J(alpha) @ sum_l G[l] edge block by edge block using
    J p-products (diag(p) - p p^T applied as p*g - p*<p, g>), never
    materializing the full matrix. Per-edge-constant aggregate gradients are
    annihilated exactly.
    """
    if not np.all(np.isfinite(G)):
        raise ValueError("layer gradient matrix must be finite")
    agg = np.asarray(G, dtype=np.float64).sum(axis=0)
    p = softmax_per_edge(spec, alpha)
    out = np.empty_like(agg)
    for blk in spec.edge_blocks():
        pb, gb = p[blk], agg[blk]
        out[blk] = pb * gb - pb * np.dot(pb, gb)
    return out


def predict(state: SupernetState, P: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class predictions (argmax of logits) without touching the loss."""
    fp = forward(state, P, x, None)
    return np.argmax(fp.logits.value, axis=1)


# ----------------------------------------------------------------------
# checkpointing
# ----------------------------------------------------------------------


def save_checkpoint(state: SupernetState, path) -> None:
    """Versioned binary blob of every parameter array plus the spec hash."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "spec_hash": state.spec.spec_hash(),
        "spec": state.spec.to_json(),
        "input_dim": state.input_dim,
        "num_classes": state.num_classes,
        "layers": state.num_layers,
    }
    arrays = {f"param:{name}": arr for name, arr in named_params(state)}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, spec: CellSpec) -> SupernetState:
    """Load a checkpoint, rejecting version or cell-spec hash mismatches."""
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError("missing checkpoint metadata")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
        if meta["spec_hash"] != spec.spec_hash():
            raise CheckpointError("checkpoint belongs to a different cell spec")
        state = init_supernet(spec, meta["input_dim"], meta["num_classes"], meta["layers"], seed=0)
        for name, arr in named_params(state):
            key = f"param:{name}"
            if key not in data:
                raise CheckpointError(f"checkpoint is missing array {name}")
            stored = data[key]
            if stored.shape != arr.shape:
                raise CheckpointError(f"array {name} has shape {stored.shape}, expected {arr.shape}")
            arr[...] = stored
    return state
