"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: it supports exactly the operations needed to
express a weight-sharing cell stack (matrix products, bias adds, tanh,
probability-weighted sums, softmax cross-entropy) and returns exact first-order
gradients for every leaf on the tape. Probability weights enter
``scalar_combine`` as first-class scalar leaves, so per-layer gradients with
respect to injected probabilities can be read off the gradient map directly.

Values are numpy float64 arrays; scalars are shape-() arrays. Every operation
validates that its output is finite, so NaN/Inf never propagates silently.
The tape is append-only and therefore already in topological order; backward
is a single reverse sweep with deterministic, fixed-order accumulation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GradcheckError",
    "Node",
    "NonFiniteError",
    "Tape",
    "TapeError",
    "finite_diff_gradcheck",
]


class TapeError(ValueError):
    """Shape mismatch or other structural misuse of the tape."""


class NonFiniteError(ValueError):
    """A value containing NaN or Inf entered or left an operation."""


class GradcheckError(ValueError):
    """The function under finite-difference checking misbehaved."""


class Node:
    """Handle to one value recorded on a tape."""

    __slots__ = ("idx", "value")

    def __init__(self, idx: int, value: np.ndarray):
        self.idx = idx
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Node(idx={self.idx}, shape={self.value.shape})"


def _checked(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    return value


# A backward rule maps the upstream gradient to one gradient contribution per
# recorded input, in input order.
BackwardRule = Callable[[np.ndarray], tuple[np.ndarray, ...]]


class Tape:
    """Append-only record of a computation, replayed in reverse by backward().

    A tape is a single-use, single-threaded object: build one graph, call
    :meth:`backward` on its scalar root, then discard it. Distinct tapes share
    no state and may live on distinct threads.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._inputs: list[tuple[int, ...]] = []
        self._rules: list[BackwardRule | None] = []

    def __len__(self) -> int:
        return len(self._values)

    def _record(
        self,
        value: np.ndarray,
        inputs: tuple[int, ...] = (),
        rule: BackwardRule | None = None,
    ) -> Node:
        self._values.append(value)
        self._inputs.append(inputs)
        self._rules.append(rule)
        return Node(len(self._values) - 1, value)

    # ------------------------------------------------------------------
    # graph construction
    # ------------------------------------------------------------------

    def leaf(self, value) -> Node:
        """Record an input value (parameter, constant, or probability slot)."""
        arr = np.asarray(value, dtype=np.float64)
        return self._record(_checked(arr, "leaf"))

    def matmul(self, a: Node, b: Node) -> Node:
        """Matrix product of two rank-2 nodes."""
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise TapeError(f"matmul shapes {av.shape} x {bv.shape} do not chain")

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            return up @ bv.T, av.T @ up

        return self._record(_checked(av @ bv, "matmul"), (a.idx, b.idx), rule)

    def add(self, a: Node, b: Node) -> Node:
        """Elementwise sum of two same-shape nodes."""
        if a.value.shape != b.value.shape:
            raise TapeError(f"add shapes {a.value.shape} != {b.value.shape}")

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            return up, up

        return self._record(_checked(a.value + b.value, "add"), (a.idx, b.idx), rule)

    def add_bias(self, x: Node, b: Node) -> Node:
        """Add a length-n bias vector to every row of an (m, n) node."""
        xv, bv = x.value, b.value
        if xv.ndim != 2 or bv.shape != (xv.shape[1],):
            raise TapeError(f"add_bias shapes {xv.shape} + {bv.shape}")

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            return up, up.sum(axis=0)

        return self._record(_checked(xv + bv, "add_bias"), (x.idx, b.idx), rule)

    def tanh(self, x: Node) -> Node:
        """Elementwise tanh; backward uses 1 - tanh(x)^2."""
        out = _checked(np.tanh(x.value), "tanh")

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            return (up * (1.0 - out * out),)

        return self._record(out, (x.idx,), rule)

    def scale(self, x: Node, c: float) -> Node:
        """Multiply by a python float constant (not a tape input)."""
        c = float(c)

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            return (c * up,)

        return self._record(_checked(c * x.value, "scale"), (x.idx,), rule)

    def scalar_combine(self, terms: Sequence[tuple[Node, Node]]) -> Node:
        """Weighted sum sum_i w_i * t_i with scalar-node weights.

        Backward deposits <t_i, upstream> into each weight's gradient slot and
        w_i * upstream into each tensor's slot, which is what makes injected
        probabilities readable as first-class gradients.
        """
        if not terms:
            raise TapeError("scalar_combine needs at least one term")
        shape = terms[0][1].value.shape
        for w, t in terms:
            if w.value.shape != ():
                raise TapeError(f"scalar_combine weight has shape {w.value.shape}")
            if t.value.shape != shape:
                raise TapeError(f"scalar_combine shapes {t.value.shape} != {shape}")
        out = np.zeros(shape)
        for w, t in terms:
            out += float(w.value) * t.value
        inputs = tuple(n.idx for wt in terms for n in wt)
        values = [(float(w.value), t.value) for w, t in terms]

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            contribs: list[np.ndarray] = []
            for wv, tv in values:
                contribs.append(np.asarray(np.sum(up * tv)))
                contribs.append(wv * up)
            return tuple(contribs)

        return self._record(_checked(out, "scalar_combine"), inputs, rule)

    def softmax_cross_entropy(self, logits: Node, labels) -> Node:
        """Mean negative log softmax-probability of the true class.

        Stabilized with log-sum-exp; returns a scalar node.
        """
        z = logits.value
        if z.ndim != 2:
            raise TapeError(f"logits must be (batch, classes), got {z.shape}")
        y = np.asarray(labels)
        if y.shape != (z.shape[0],):
            raise TapeError(f"labels shape {y.shape} != ({z.shape[0]},)")
        if y.min() < 0 or y.max() >= z.shape[1]:
            raise TapeError("label index out of range")
        batch = z.shape[0]
        zmax = z.max(axis=1, keepdims=True)
        exps = np.exp(z - zmax)
        probs = exps / exps.sum(axis=1, keepdims=True)
        logp = (z - zmax) - np.log(exps.sum(axis=1, keepdims=True))
        loss = np.asarray(-logp[np.arange(batch), y].mean())

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            g = probs.copy()
            g[np.arange(batch), y] -= 1.0
            return (float(up) / batch * g,)

        return self._record(_checked(loss, "softmax_cross_entropy"), (logits.idx,), rule)

    def edge_softmax(self, alpha: Node, blocks: Sequence[slice]) -> Node:
        """Blockwise softmax of a flat logit vector (one block per edge).

        Used when the architecture probabilities themselves must live on the
        tape, e.g. to differentiate a loss with respect to the logits.
        """
        a = alpha.value
        if a.ndim != 1:
            raise TapeError(f"edge_softmax expects a vector, got shape {a.shape}")
        out = np.empty_like(a)
        for blk in blocks:
            seg = a[blk]
            e = np.exp(seg - seg.max())
            out[blk] = e / e.sum()
        probs = out.copy()
        blocks = tuple(blocks)

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            grad = np.empty_like(up)
            for blk in blocks:
                p, u = probs[blk], up[blk]
                grad[blk] = p * u - p * np.dot(p, u)
            return (grad,)

        return self._record(_checked(out, "edge_softmax"), (alpha.idx,), rule)

    def index(self, vec: Node, k: int) -> Node:
        """Extract entry k of a vector node as a scalar node."""
        v = vec.value
        if v.ndim != 1:
            raise TapeError(f"index expects a vector, got shape {v.shape}")
        n = v.shape[0]

        def rule(up: np.ndarray) -> tuple[np.ndarray, ...]:
            g = np.zeros(n)
            g[k] = float(up)
            return (g,)

        return self._record(np.asarray(v[k]), (vec.idx,), rule)

    # ------------------------------------------------------------------
    # differentiation
    # ------------------------------------------------------------------

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar root; returns node id -> gradient.

        Every node on the tape appears in the map (zeros if the root does not
        depend on it). Two calls on identical tapes produce bit-identical
        gradients: the sweep visits nodes in fixed reverse creation order.
        """
        if root.value.shape != ():
            raise TapeError(f"backward root must be scalar, got shape {root.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[root.idx] = np.ones(())
        for idx in range(root.idx, -1, -1):
            g = grads[idx]
            rule = self._rules[idx]
            if g is None or rule is None:
                continue
            contribs = rule(g)
            for input_idx, contrib in zip(self._inputs[idx], contribs):
                if grads[input_idx] is None:
                    grads[input_idx] = np.array(contrib, dtype=np.float64)
                else:
                    grads[input_idx] += contrib
        out: dict[int, np.ndarray] = {}
        for idx, g in enumerate(grads):
            out[idx] = np.zeros(self._values[idx].shape) if g is None else g
        return out

    def grad(self, grads: dict[int, np.ndarray], node: Node) -> np.ndarray:
        return grads[node.idx]


def finite_diff_gradcheck(
    f: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Worst relative error between AD gradients and central differences.

    ``f`` evaluates the scalar function at a parameter list and returns
    ``(value, gradients)`` with one gradient array per parameter. Every
    coordinate is probed with a central difference (f(x+h) - f(x-h)) / 2h and
    compared against the AD gradient using the guarded relative error
    |ad - fd| / max(|ad|, |fd|, 1e-8).
    """
    if not h > 0:
        raise GradcheckError(f"step h must be positive, got {h}")
    params = [np.array(p, dtype=np.float64) for p in params]
    value, grads = f(params)
    if not np.isfinite(value):
        raise GradcheckError("function value is not finite")
    if len(grads) != len(params):
        raise GradcheckError("gradient count does not match parameter count")
    worst = 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up, _ = f(params)
            flat[k] = orig - h
            down, _ = f(params)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradcheckError("function value is not finite at a probe point")
            fd = (up - down) / (2.0 * h)
            ad = float(np.asarray(grads[i]).reshape(-1)[k])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst
