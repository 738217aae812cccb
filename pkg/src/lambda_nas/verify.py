"""Self-contained verification suite: oracles, identities, and contracts.

Each check is a fast, deterministic variant of the corresponding acceptance
property. `run_verification` prints one PASS/FAIL line per check and returns
True only if everything passed; the CLI maps that to the exit code.
"""

from __future__ import annotations

import numpy as np

from .alignment import build_delta, delta_pair, lambda_alignment, prop1_check, softmax_jacobian_spectrum
from .datasets import make_dataset
from .oracles import oracle_layer_grad, oracle_reg_grad
from .space import CellSpec, OpKind, softmax_per_edge
from .supernet import (
    broadcast_P,
    forward_shared_p,
    init_supernet,
    layer_grads,
    named_params,
    pass_counts,
    reset_pass_counts,
)
from .tape import finite_diff_gradcheck
from .trainer import TrainConfig, reg_grad_fd, search

__all__ = ["run_verification"]


def _toy(seed, layers=2, num_ops=3, fw=3, input_dim=3, classes=2):
    ops = (OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR, OpKind.ZERO, OpKind.AVG_SCALE)[:num_ops]
    spec = CellSpec(node_count=3, edges=((0, 1), (0, 2), (1, 2)), ops=ops, feature_width=fw)
    state = init_supernet(spec, input_dim, classes, layers, seed=seed)
    rng = np.random.default_rng(seed)
    for _, arr in named_params(state):
        arr[...] = rng.uniform(-0.6, 0.6, size=arr.shape)
    x = rng.uniform(-1.5, 1.5, size=(4, input_dim))
    y = rng.integers(0, classes, size=4)
    alpha = 0.5 * rng.standard_normal(spec.alpha_size)
    return state, alpha, x, y


def _check_gradcheck() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(3):
        state, alpha, x, y = _toy(seed)
        P = broadcast_P(state.spec, alpha, state.num_layers)
        names = [n for n, _ in named_params(state)]
        arrays = dict(named_params(state))

        def f(params):
            for name, src in zip(names, params):
                arrays[name][...] = src
            loss, _, omega = layer_grads(state, P, x, y)
            return loss, [omega[n] for n in names]

        worst = max(worst, finite_diff_gradcheck(f, [arrays[n].copy() for n in names], h=1e-5))
    return worst < 1e-5, f"max rel err {worst:.2e} (tol 1e-5)"


def _check_decomposition() -> tuple[bool, str]:
    worst = 0.0
    for layers in (2, 4):
        state, alpha, x, y = _toy(10 + layers, layers=layers)
        p = softmax_per_edge(state.spec, alpha)
        P = np.tile(p, (layers, 1))
        _, G, _ = layer_grads(state, P, x, y)
        fp = forward_shared_p(state, p, x, y)
        grads = fp.backward()
        shared = np.array([float(grads[n.idx]) for n in fp.prob_nodes[0]])
        worst = max(worst, float(np.abs(G.sum(axis=0) - shared).max()))
    return worst < 1e-10, f"max abs deviation {worst:.2e} (tol 1e-10)"


def _check_estimator() -> tuple[bool, str]:
    state, alpha, x, y = _toy(21)
    res = reg_grad_fd(state, alpha, x, y, "cosine", epsilon0=1e-4)
    oracle = oracle_reg_grad(state, alpha, x, y, "cosine", h=1e-5)
    est = np.concatenate([res.reg_grads[n].ravel() for n, _ in named_params(state)])
    ref = np.concatenate([oracle[n].ravel() for n, _ in named_params(state)])
    rel = float(np.linalg.norm(est - ref) / np.linalg.norm(ref))
    return rel < 1e-3, f"rel err {rel:.2e} (tol 1e-3)"


def _check_layer_grad_oracle() -> tuple[bool, str]:
    state, alpha, x, y = _toy(22)
    P = broadcast_P(state.spec, alpha, state.num_layers)
    _, G, _ = layer_grads(state, P, x, y)
    G_fd = oracle_layer_grad(state, P, x, y, h=1e-5)
    rel = np.abs(G - G_fd) / np.maximum(np.maximum(np.abs(G), np.abs(G_fd)), 1e-8)
    worst = float(rel.max())
    return worst < 1e-5, f"max rel err {worst:.2e} (tol 1e-5)"


def _check_cost_contract() -> tuple[bool, str]:
    from .optim import NesterovSGD
    from .trainer import inner_step

    state, alpha, x, y = _toy(23)
    sgd = NesterovSGD(momentum=0.9, weight_decay=0.0)
    sgd.init([arr for _, arr in named_params(state)])
    reset_pass_counts()
    inner_step(state, alpha, sgd, x, y, 0.1, "cosine", 1e-4, lr=0.01)
    counts = pass_counts()
    ok = counts == {"forward": 3, "backward": 3}
    return ok, f"forward/backward passes {counts['forward']}/{counts['backward']} (want 3/3)"


def _check_prop1() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    spec = CellSpec(
        node_count=3,
        edges=((0, 1), (0, 2), (1, 2)),
        ops=(OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR, OpKind.ZERO),
        feature_width=2,
    )
    dim, n_edges = spec.alpha_size, spec.num_edges
    for trial in range(200):
        layers = int(rng.integers(1, 7))
        alpha = rng.uniform(-2, 2, size=dim)
        rows = []
        while len(rows) < layers:
            v = rng.standard_normal(dim)
            for blk in spec.edge_blocks():
                v[blk] -= v[blk].mean()
            for r in rows:
                v -= r * (r @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                rows.append(v / norm)
        G = np.array(rows) * rng.uniform(0.1, 2.0, size=(layers, 1))
        res = prop1_check(spec, alpha, G)
        if not res.precondition_ok or not res.holds:
            return False, f"failed at trial {trial}: lhs={res.lhs:.3e} rhs={res.rhs:.3e}"
    return True, "bound held in 200/200 randomized instances"


def _check_null_space() -> tuple[bool, str]:
    rng = np.random.default_rng(8)
    spec = CellSpec(
        node_count=3,
        edges=((0, 1), (0, 2), (1, 2)),
        ops=(OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR),
        feature_width=2,
    )
    from .alignment import nullspace_residual

    worst = 0.0
    for _ in range(50):
        alpha = rng.uniform(-3, 3, size=spec.alpha_size)
        v = np.zeros(spec.alpha_size)
        for blk in spec.edge_blocks():
            v[blk] = rng.uniform(-1, 1)
        worst = max(worst, nullspace_residual(spec, alpha, v))
    saturated = np.zeros(spec.alpha_size)
    for blk in spec.edge_blocks():
        saturated[blk.start] = 20.0
    spectrum = softmax_jacobian_spectrum(spec, saturated)
    ok = worst <= 1e-12 and spectrum.min_nonzero_eig <= 1e-6
    return ok, f"null residual {worst:.1e} (tol 1e-12), saturated min eig {spectrum.min_nonzero_eig:.1e} (tol 1e-6)"


def _check_delta_identities() -> tuple[bool, str]:
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        g = rng.standard_normal(8)
        g2 = rng.standard_normal(8)
        d = delta_pair(g, g2, "cosine")
        worst = max(worst, abs(float(g @ d)) / (np.linalg.norm(g) * max(np.linalg.norm(d), 1e-6)))
    G = np.tile(rng.standard_normal(8), (3, 1))
    dm = build_delta(G, "cosine")
    ok = worst < 1e-12 and dm.frobenius_norm == 0.0 and abs(lambda_alignment(G) - 1.0) < 1e-12
    return ok, f"orthogonality residual {worst:.1e}; identical-row delta norm {dm.frobenius_norm:.1e}"


def _check_determinism() -> tuple[bool, str]:
    import json

    ds = make_dataset("teacher-net", seed=0, n_train=24, n_val=24, input_dim=3, num_classes=2)
    spec = CellSpec(
        node_count=3,
        edges=((0, 1), (0, 2), (1, 2)),
        ops=(OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR),
        feature_width=3,
    )
    cfg = TrainConfig(epochs=2, batch_size=12, seed=5, alpha_lr=0.01, omega_lr=0.05)
    r1 = search(cfg, ds, spec=spec, layers=2)
    r2 = search(cfg, ds, spec=spec, layers=2)
    same = json.dumps(r1.trace) == json.dumps(r2.trace) and r1.genotype == r2.genotype
    return same, "identical trace and genotype across two runs" if same else "trace mismatch"


CHECKS = [
    ("autodiff vs central differences", _check_gradcheck),
    ("weight-sharing decomposition", _check_decomposition),
    ("per-layer gradient oracle", _check_layer_grad_oracle),
    ("alignment gradient estimator vs oracle", _check_estimator),
    ("three-pass cost contract", _check_cost_contract),
    ("gradient-norm lower bound", _check_prop1),
    ("softmax null space and saturation", _check_null_space),
    ("correction-direction identities", _check_delta_identities),
    ("search determinism", _check_determinism),
]


def run_verification() -> bool:
    all_ok = True
    width = max(len(name) for name, _ in CHECKS)
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    print("verification:", "OK" if all_ok else "FAILED")
    return all_ok
