"""Cell search space: DAG topology, candidate operations, encodings.

A cell is a small DAG whose node 0 is the cell input and whose remaining
nodes are intermediate feature maps. Each directed edge (i, j) with i < j
carries every candidate operation; architecture logits are stored as one flat
vector grouped edge-major, op-minor, so the softmax Jacobian is block-diagonal
with one |ops| x |ops| block per edge.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .tape import Node, Tape

__all__ = [
    "CellSpec",
    "Genotype",
    "OpKind",
    "NON_PARAMETRIC_OPS",
    "PARAMETRIC_OPS",
    "apply_op",
    "default_cell_spec",
    "discretize",
    "enumerate_genotypes",
    "genotype_from_json",
    "genotype_from_text",
    "genotype_to_json",
    "genotype_to_text",
    "softmax_per_edge",
]


class OpKind(enum.Enum):
    """Candidate operations carried by every edge.

    ``affine`` and ``nonlinear`` are the parametric members (dense stand-ins
    for convolutions); ``zero``, ``skip`` and ``avg_scale`` are parameter-free.
    """

    ZERO = "zero"
    SKIP = "skip"
    AFFINE = "affine"
    NONLINEAR = "nonlinear"
    AVG_SCALE = "avg_scale"


PARAMETRIC_OPS = frozenset({OpKind.AFFINE, OpKind.NONLINEAR})
NON_PARAMETRIC_OPS = frozenset({OpKind.ZERO, OpKind.SKIP, OpKind.AVG_SCALE})


@dataclass(frozen=True)
class CellSpec:
    """Topology and operation set of one cell.

    ``edges`` are (i, j) pairs with i < j; ``node_count`` includes the input
    node 0. Architecture vectors have length ``len(edges) * len(ops)`` with
    edge e occupying the contiguous block ``[e * len(ops), (e+1) * len(ops))``.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    ops: tuple[OpKind, ...]
    feature_width: int

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError(f"node_count must be >= 2, got {self.node_count}")
        if len(self.ops) < 2:
            raise ValueError("need at least 2 candidate operations")
        if len(set(self.ops)) != len(self.ops):
            raise ValueError("duplicate operation in ops")
        if self.feature_width < 1:
            raise ValueError("feature_width must be positive")
        seen = set()
        fed = set()
        for i, j in self.edges:
            if not (0 <= i < j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) violates 0 <= i < j < node_count")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            fed.add(j)
        for j in range(1, self.node_count):
            if j not in fed:
                raise ValueError(f"node {j} has no incoming edge")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    @property
    def alpha_size(self) -> int:
        return len(self.edges) * len(self.ops)

    def edge_slice(self, e: int) -> slice:
        return slice(e * self.num_ops, (e + 1) * self.num_ops)

    def edge_blocks(self) -> tuple[slice, ...]:
        return tuple(self.edge_slice(e) for e in range(self.num_edges))

    def alpha_index(self, e: int, o: int) -> int:
        return e * self.num_ops + o

    def to_json(self) -> dict:
        return {
            "node_count": self.node_count,
            "edges": [list(e) for e in self.edges],
            "ops": [op.value for op in self.ops],
            "feature_width": self.feature_width,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CellSpec":
        return cls(
            node_count=int(obj["node_count"]),
            edges=tuple((int(i), int(j)) for i, j in obj["edges"]),
            ops=tuple(OpKind(name) for name in obj["ops"]),
            feature_width=int(obj["feature_width"]),
        )

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_cell_spec(feature_width: int = 16) -> CellSpec:
    """Three intermediate nodes, all six i < j edges, five candidate ops."""
    return CellSpec(
        node_count=4,
        edges=((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
        ops=(OpKind.ZERO, OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR, OpKind.AVG_SCALE),
        feature_width=feature_width,
    )


@dataclass(frozen=True)
class Genotype:
    """Discrete architecture: one chosen op index per edge."""

    choice: tuple[int, ...]


def softmax_per_edge(spec: CellSpec, alpha: np.ndarray) -> np.ndarray:
    """Blockwise softmax of the logit vector, stabilized by max subtraction."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (spec.alpha_size,):
        raise ValueError(f"alpha shape {alpha.shape} != ({spec.alpha_size},)")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite")
    p = np.empty_like(alpha)
    for blk in spec.edge_blocks():
        seg = alpha[blk]
        e = np.exp(seg - seg.max())
        p[blk] = e / e.sum()
    return p


def discretize(spec: CellSpec, alpha: np.ndarray) -> Genotype:
    """Per-edge argmax over logits; ties resolve to the lowest op index."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (spec.alpha_size,):
        raise ValueError(f"alpha shape {alpha.shape} != ({spec.alpha_size},)")
    choice = tuple(int(np.argmax(alpha[blk])) for blk in spec.edge_blocks())
    return Genotype(choice)


def enumerate_genotypes(spec: CellSpec, cap: int = 4096) -> list[Genotype]:
    """All |ops|^|edges| genotypes in lexicographic order of choice tuples."""
    total = spec.num_ops ** spec.num_edges
    if total > cap:
        raise ValueError(f"genotype space size {total} exceeds cap {cap}")
    return [Genotype(c) for c in itertools.product(range(spec.num_ops), repeat=spec.num_edges)]


def apply_op(tape: Tape, kind: OpKind, params: dict[str, Node] | None, x: Node) -> Node:
    """Apply one candidate operation to a (batch, width) node on the tape.

    ``params`` carries tape leaves {"w", "b"} for the parametric kinds and is
    ignored by the rest.
    """
    if kind is OpKind.ZERO:
        return tape.leaf(np.zeros(x.value.shape))
    if kind is OpKind.SKIP:
        return x
    if kind is OpKind.AVG_SCALE:
        return tape.scale(x, 0.5)
    if params is None or "w" not in params or "b" not in params:
        raise ValueError(f"{kind.value} needs parameters 'w' and 'b'")
    pre = tape.add_bias(tape.matmul(x, params["w"]), params["b"])
    if kind is OpKind.AFFINE:
        return pre
    if kind is OpKind.NONLINEAR:
        return tape.tanh(pre)
    raise ValueError(f"unknown op kind {kind!r}")


# ----------------------------------------------------------------------
# genotype serialization
# ----------------------------------------------------------------------


def genotype_to_text(spec: CellSpec, genotype: Genotype) -> str:
    """Compact text form ``e0:skip,e1:affine,...`` (round-trips exactly)."""
    _validate_genotype(spec, genotype)
    parts = [f"e{e}:{spec.ops[o].value}" for e, o in enumerate(genotype.choice)]
    return ",".join(parts)


def genotype_from_text(spec: CellSpec, text: str) -> Genotype:
    parts = text.split(",") if text else []
    if len(parts) != spec.num_edges:
        raise ValueError(f"expected {spec.num_edges} edges, got {len(parts)}")
    names = {op.value: o for o, op in enumerate(spec.ops)}
    choice = []
    for e, part in enumerate(parts):
        prefix = f"e{e}:"
        if not part.startswith(prefix):
            raise ValueError(f"edge {e}: malformed entry {part!r}")
        name = part[len(prefix):]
        if name not in names:
            raise ValueError(f"edge {e}: unknown op {name!r}")
        choice.append(names[name])
    return Genotype(tuple(choice))


def genotype_to_json(spec: CellSpec, genotype: Genotype) -> dict:
    _validate_genotype(spec, genotype)
    return {
        "choice": list(genotype.choice),
        "ops": [spec.ops[o].value for o in genotype.choice],
    }


def genotype_from_json(spec: CellSpec, obj: dict) -> Genotype:
    choice = tuple(int(c) for c in obj["choice"])
    g = Genotype(choice)
    _validate_genotype(spec, g)
    if "ops" in obj:
        names = [spec.ops[o].value for o in choice]
        if list(obj["ops"]) != names:
            raise ValueError("genotype JSON 'ops' disagrees with 'choice'")
    return g


def _validate_genotype(spec: CellSpec, genotype: Genotype) -> None:
    if len(genotype.choice) != spec.num_edges:
        raise ValueError(f"genotype has {len(genotype.choice)} edges, spec has {spec.num_edges}")
    for o in genotype.choice:
        if not 0 <= o < spec.num_ops:
            raise ValueError(f"op index {o} out of range")


def non_parametric_fraction(spec: CellSpec, genotype: Genotype) -> float:
    """Fraction of edges whose chosen op carries no learnable parameters."""
    _validate_genotype(spec, genotype)
    hits = sum(1 for o in genotype.choice if spec.ops[o] in NON_PARAMETRIC_OPS)
    return hits / spec.num_edges
