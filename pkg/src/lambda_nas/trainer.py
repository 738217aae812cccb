"""Bi-level first-order search with the alignment regularizer.

The inner phase updates operation weights on the training split with
Nesterov-momentum SGD on loss - lambda_t * alignment, where the alignment
gradient with respect to the weights is estimated by a central difference of
the loss gradient at probability perturbations P +/- eps * Delta. Each
regularized inner step therefore costs exactly three forward-backward passes:
one at P (giving the loss gradient, the per-layer gradient matrix, and the
alignment value) and two at the perturbed probabilities, independent of the
layer count and the architecture dimension.

The outer phase updates the architecture logits on the validation split with
Adam, chaining the summed per-layer gradients through the blockwise softmax
Jacobian. lambda follows a linear ramp over epochs; the SGD learning rate
follows a per-epoch cosine decay.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .alignment import DegenerateGradientError, DeltaMatrix, build_delta, lambda_alignment, lambda_sign
from .datasets import SyntheticDataset
from .diagnostics import EmaTrace, ema_update, l1_change
from .optim import AdamState, NesterovSGD, OptimizerState
from .space import CellSpec, Genotype, default_cell_spec, discretize, genotype_to_text, softmax_per_edge
from .supernet import (
    SupernetState,
    alpha_grad,
    broadcast_P,
    init_supernet,
    layer_grads,
    named_params,
    save_checkpoint,
)
from .tape import NonFiniteError

__all__ = [
    "ConfigError",
    "RegGradResult",
    "SearchDivergedError",
    "SearchResult",
    "TrainConfig",
    "cosine_lr",
    "inner_step",
    "lambda_schedule",
    "load_config",
    "outer_step",
    "reg_grad_fd",
    "save_config",
    "search",
]

VARIANTS = ("cosine", "sign", "none")

DELTA_NORM_FLOOR = 1e-12


class ConfigError(ValueError):
    """Malformed run configuration."""


class SearchDivergedError(RuntimeError):
    """The search hit a non-finite value; a diagnostic checkpoint may exist."""

    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    """Flat, JSON-compatible run configuration.

    Defaults follow the standard cell-search recipe: SGD 0.025 -> 0.001
    cosine with momentum 0.9 and weight decay 5e-4 for the operation weights;
    Adam 1e-4 with betas (0.5, 0.999) and weight decay 1e-3 for the
    architecture logits; 100 epochs, lambda 0.125, epsilon0 1e-4.
    """

    lambda_max: float = 0.125
    epsilon0: float = 1e-4
    epochs: int = 100
    variant: str = "cosine"
    omega_lr: float = 0.025
    omega_lr_min: float = 0.001
    omega_momentum: float = 0.9
    omega_weight_decay: float = 5e-4
    alpha_lr: float = 1e-4
    alpha_beta1: float = 0.5
    alpha_beta2: float = 0.999
    alpha_weight_decay: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lambda_max < 0:
            raise ConfigError("lambda_max must be >= 0")
        if self.epsilon0 <= 0:
            raise ConfigError("epsilon0 must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**obj)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return TrainConfig.from_json(obj)


def save_config(config: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
        fh.write("\n")


def lambda_schedule(t: int, total: int, lambda_max: float) -> float:
    """Linear ramp lambda * t / total over epochs."""
    if not 0 <= t <= total:
        raise ValueError(f"epoch {t} outside [0, {total}]")
    return lambda_max * t / total


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine decay from lr_max at t=0 to lr_min at t=total."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if total == 0:
        return lr_max
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total)) / 2.0


def _variant_value(G: np.ndarray, variant: str) -> float:
    if variant == "cosine":
        return lambda_alignment(G)
    if variant == "sign":
        return lambda_sign(G)
    raise ValueError(f"no alignment value for variant {variant!r}")


def _fd_quotient(
    state: SupernetState,
    P: np.ndarray,
    G: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    variant: str,
    epsilon0: float,
) -> tuple[dict[str, np.ndarray], DeltaMatrix, float]:
    """Two perturbed passes at P +/- eps * Delta; returns the scaled quotient.

    A vanishing Delta (alignment already stationary in every pairwise
    direction) short-circuits to a zero gradient without extra passes.
    """
    delta = build_delta(G, variant)
    L = G.shape[0]
    if delta.frobenius_norm < DELTA_NORM_FLOOR:
        zero = {name: np.zeros_like(arr) for name, arr in named_params(state)}
        return zero, delta, 0.0
    eps = epsilon0 / delta.frobenius_norm
    _, _, plus = layer_grads(state, P + eps * delta.delta, x, y)
    _, _, minus = layer_grads(state, P - eps * delta.delta, x, y)
    scale = 1.0 / (2.0 * eps * math.comb(L, 2))
    quotient = {name: (plus[name] - minus[name]) * scale for name in plus}
    return quotient, delta, eps


@dataclass
class RegGradResult:
    """Everything the three-pass estimator produces in one inner step."""

    loss: float
    base_grads: dict[str, np.ndarray]
    layer_matrix: np.ndarray
    reg_grads: dict[str, np.ndarray]
    lambda_value: float
    delta: DeltaMatrix
    epsilon: float


def reg_grad_fd(
    state: SupernetState,
    alpha: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    variant: str,
    epsilon0: float,
) -> RegGradResult:
    """Finite-difference estimate of the alignment gradient w.r.t. weights.

    Exactly three forward-backward passes: the base pass also yields the loss
    gradient and the per-layer matrix, so a training step needs nothing else.
    Degenerate layer gradients raise DegenerateGradientError; callers should
    skip the regularizer for the offending batch.
    """
    if variant not in ("cosine", "sign"):
        raise ValueError(f"variant must be 'cosine' or 'sign', got {variant!r}")
    P = broadcast_P(state.spec, alpha, state.num_layers)
    loss, G, base = layer_grads(state, P, x, y)
    value = _variant_value(G, variant)
    reg, delta, eps = _fd_quotient(state, P, G, x, y, variant, epsilon0)
    return RegGradResult(
        loss=loss,
        base_grads=base,
        layer_matrix=G,
        reg_grads=reg,
        lambda_value=value,
        delta=delta,
        epsilon=eps,
    )


@dataclass
class StepRecord:
    """Metrics of one inner or outer step, trace-schema shaped."""

    loss: float
    lambda_cosine: float | None
    lambda_sign_value: float | None
    grad_norm_alpha: float | None
    min_layer_grad_norm: float
    skipped_reg: bool
    layer_matrix: np.ndarray


def inner_step(
    state: SupernetState,
    alpha: np.ndarray,
    sgd: NesterovSGD,
    x: np.ndarray,
    y: np.ndarray,
    lambda_t: float,
    variant: str,
    epsilon0: float,
    lr: float,
) -> StepRecord:
    """One training-weight update on the combined objective.

    The update direction is grad(loss) - lambda_t * grad(alignment); when the
    regularizer is disabled (variant "none" or lambda_t == 0) the step costs a
    single pass and reproduces the unregularized trajectory exactly. A
    degenerate-gradient condition skips only the regularizer, never the step.
    """
    P = broadcast_P(state.spec, alpha, state.num_layers)
    loss, G, base = layer_grads(state, P, x, y)
    norms = np.linalg.norm(G, axis=1)

    try:
        lam = lambda_alignment(G)
    except DegenerateGradientError:
        lam = None
    try:
        lam_sign = lambda_sign(G)
    except DegenerateGradientError:
        lam_sign = None

    skipped = False
    combined = base
    if variant != "none" and lambda_t > 0.0:
        try:
            reg, _, _ = _fd_quotient(state, P, G, x, y, variant, epsilon0)
            combined = {name: base[name] - lambda_t * reg[name] for name in base}
        except DegenerateGradientError:
            skipped = True

    params = [arr for _, arr in named_params(state)]
    grads = [combined[name] for name, _ in named_params(state)]
    sgd.step(params, grads, lr)
    return StepRecord(
        loss=loss,
        lambda_cosine=lam,
        lambda_sign_value=lam_sign,
        grad_norm_alpha=None,
        min_layer_grad_norm=float(norms.min()),
        skipped_reg=skipped,
        layer_matrix=G,
    )


def outer_step(
    state: SupernetState,
    alpha: np.ndarray,
    adam: AdamState,
    x: np.ndarray,
    y: np.ndarray,
) -> StepRecord:
    """One architecture update on validation loss (never regularized)."""
    P = broadcast_P(state.spec, alpha, state.num_layers)
    loss, G, _ = layer_grads(state, P, x, y)
    grad_a = alpha_grad(state.spec, alpha, G)
    adam.step(alpha, grad_a)
    norms = np.linalg.norm(G, axis=1)
    return StepRecord(
        loss=loss,
        lambda_cosine=None,
        lambda_sign_value=None,
        grad_norm_alpha=float(np.linalg.norm(grad_a)),
        min_layer_grad_norm=float(norms.min()),
        skipped_reg=False,
        layer_matrix=G,
    )


@dataclass
class SearchResult:
    """Everything a finished search leaves behind."""

    config: TrainConfig
    spec: CellSpec
    layers: int
    genotype: Genotype
    alpha: np.ndarray
    state: SupernetState
    trace: list[dict]
    epoch_records: list[dict]
    checkpoint_path: Path | None


def _trace_record(step, epoch, phase, rec: StepRecord, lambda_t) -> dict:
    return {
        "step": step,
        "epoch": epoch,
        "phase": phase,
        "loss": rec.loss,
        "lambda_t": lambda_t,
        "Lambda": rec.lambda_cosine,
        "Lambda_sign": rec.lambda_sign_value,
        "grad_norm_alpha": rec.grad_norm_alpha,
        "min_layer_grad_norm": rec.min_layer_grad_norm,
        "skipped_reg": rec.skipped_reg,
    }


def _ema_series(spec: CellSpec, layers: int, G: np.ndarray, ema: EmaTrace) -> None:
    """Per-op gradient sums split into first-half vs second-half layers."""
    half = layers // 2
    groups = {"first": range(0, half), "second": range(half, layers)}
    for o, op in enumerate(spec.ops):
        cols = [spec.alpha_index(e, o) for e in range(spec.num_edges)]
        for name, layer_range in groups.items():
            rows = list(layer_range)
            if not rows:
                continue
            value = float(G[np.ix_(rows, cols)].sum(axis=0).mean())
            ema_update(ema, f"{op.value}/{name}", value)


class _TraceWriter:
    def __init__(self, path: Path | None):
        self.path = path
        self._fh = open(path, "w") if path is not None else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _batches(rng: np.random.Generator, n: int, batch_size: int, count: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    if batch_size >= n:
        return [perm for _ in range(count)]
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(count)]


def search(
    config: TrainConfig,
    dataset: SyntheticDataset,
    spec: CellSpec | None = None,
    layers: int = 8,
    out_dir=None,
    init_scale: float = 1.0,
) -> SearchResult:
    """Run the full bi-level search and return the discovered genotype.

    Per epoch, inner (train) and outer (validation) steps interleave batch by
    batch. Fixed config and seed give a bit-identical trace and genotype. When
    ``out_dir`` is set, trace.jsonl and epochs.jsonl are streamed there and a
    final checkpoint is written; a non-finite value during training saves a
    diagnostic checkpoint before aborting.
    """
    if spec is None:
        spec = default_cell_spec()
    if layers < 2:
        raise ValueError("search needs at least two layers")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    state = init_supernet(
        spec,
        dataset.input_dim,
        dataset.num_classes,
        layers,
        seed=config.seed,
        init_scale=init_scale,
    )
    alpha = np.zeros(spec.alpha_size)
    params = [arr for _, arr in named_params(state)]
    sgd = NesterovSGD(momentum=config.omega_momentum, weight_decay=config.omega_weight_decay)
    sgd.init(params)
    adam = AdamState(
        lr=config.alpha_lr,
        beta1=config.alpha_beta1,
        beta2=config.alpha_beta2,
        weight_decay=config.alpha_weight_decay,
    )
    adam.init(alpha)
    opt = OptimizerState(omega=sgd, alpha=adam)

    batch_rng = np.random.default_rng([config.seed, 0x5EED])
    n_train, n_val = dataset.train_x.shape[0], dataset.val_x.shape[0]
    n_batches = max(1, min(n_train // config.batch_size, n_val // config.batch_size))

    ema = EmaTrace(decay=0.999)
    trace: list[dict] = []
    epoch_records: list[dict] = []
    writer = _TraceWriter(out_path / "trace.jsonl" if out_path else None)
    epoch_writer = _TraceWriter(out_path / "epochs.jsonl" if out_path else None)

    p_prev = softmax_per_edge(spec, alpha)
    l1_cumulative = 0.0
    step = 0
    T = config.epochs

    def _emit(epoch, phase, rec, lambda_t):
        nonlocal step
        record = _trace_record(step, epoch, phase, rec, lambda_t)
        trace.append(record)
        writer.write(record)
        step += 1

    try:
        for epoch in range(1, T + 1):
            lambda_t = lambda_schedule(epoch, T, config.lambda_max)
            lr = cosine_lr(epoch - 1, max(T - 1, 1), config.omega_lr, config.omega_lr_min)
            train_idx = _batches(batch_rng, n_train, config.batch_size, n_batches)
            val_idx = _batches(batch_rng, n_val, config.batch_size, n_batches)

            last_inner: StepRecord | None = None
            l1_epoch = 0.0
            train_losses: list[float] = []
            val_losses: list[float] = []
            for b in range(n_batches):
                ti = train_idx[b]
                rec = inner_step(
                    state,
                    alpha,
                    opt.omega,
                    dataset.train_x[ti],
                    dataset.train_y[ti],
                    lambda_t,
                    config.variant,
                    config.epsilon0,
                    lr,
                )
                _emit(epoch, "inner", rec, lambda_t)
                _ema_series(spec, layers, rec.layer_matrix, ema)
                train_losses.append(rec.loss)
                last_inner = rec

                vi = val_idx[b]
                orec = outer_step(state, alpha, opt.alpha, dataset.val_x[vi], dataset.val_y[vi])
                _emit(epoch, "outer", orec, lambda_t)
                val_losses.append(orec.loss)
                p_next = softmax_per_edge(spec, alpha)
                l1_epoch += l1_change(p_prev, p_next)
                p_prev = p_next

            l1_cumulative += l1_epoch
            erec = {
                "epoch": epoch,
                "lambda_t": lambda_t,
                "omega_lr": lr,
                "train_loss_mean": float(np.mean(train_losses)),
                "val_loss_mean": float(np.mean(val_losses)),
                "Lambda": last_inner.lambda_cosine if last_inner else None,
                "Lambda_sign": last_inner.lambda_sign_value if last_inner else None,
                "min_layer_grad_norm": last_inner.min_layer_grad_norm if last_inner else None,
                "l1_change_epoch": l1_epoch,
                "l1_change_cumulative": l1_cumulative,
                "genotype": genotype_to_text(spec, discretize(spec, alpha)),
                "ema": {k: ema.values[k] for k in sorted(ema.values)},
            }
            epoch_records.append(erec)
            epoch_writer.write(erec)
    except NonFiniteError as exc:
        ckpt = None
        if out_path is not None:
            ckpt = out_path / "diverged.npz"
            save_checkpoint(state, ckpt)
        raise SearchDivergedError(f"non-finite value during search: {exc}", ckpt) from exc
    finally:
        writer.close()
        epoch_writer.close()

    checkpoint_path = None
    if out_path is not None:
        checkpoint_path = out_path / "checkpoint.npz"
        save_checkpoint(state, checkpoint_path)
        with open(out_path / "genotype.json", "w") as fh:
            from .space import genotype_to_json

            json.dump(genotype_to_json(spec, discretize(spec, alpha)), fh, indent=2)
            fh.write("\n")

    return SearchResult(
        config=config,
        spec=spec,
        layers=layers,
        genotype=discretize(spec, alpha),
        alpha=alpha,
        state=state,
        trace=trace,
        epoch_records=epoch_records,
        checkpoint_path=checkpoint_path,
    )
