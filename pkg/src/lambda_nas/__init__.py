"""Desk-scale differentiable cell search with layer-alignment regularization.

The package is a plain numpy library: a minimal reverse-mode tape, a cell
search space, a weight-sharing supernet, alignment analytics, a bi-level
trainer with a finite-difference hypergradient estimator, brute-force oracles,
an exhaustive tabular benchmark, and trace diagnostics with a CLI front end.
"""

from .alignment import (
    AlignmentReport,
    DegenerateGradientError,
    DeltaMatrix,
    JacobianSpectrum,
    Prop1Result,
    alignment_report,
    build_delta,
    delta_pair,
    lambda_alignment,
    lambda_sign,
    nullspace_residual,
    prop1_check,
    softmax_jacobian_spectrum,
)
from .space import (
    CellSpec,
    Genotype,
    OpKind,
    default_cell_spec,
    discretize,
    enumerate_genotypes,
    genotype_from_json,
    genotype_from_text,
    genotype_to_json,
    genotype_to_text,
    softmax_per_edge,
)
from .supernet import (
    SupernetState,
    alpha_grad,
    broadcast_P,
    forward,
    forward_from_alpha,
    forward_shared_p,
    init_supernet,
    layer_grads,
    load_checkpoint,
    named_params,
    predict,
    save_checkpoint,
)
from .tape import Node, Tape, finite_diff_gradcheck

__version__ = "0.1.0"
