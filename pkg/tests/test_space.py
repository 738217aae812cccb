"""Unit tests for the cell search space and genotype encodings."""

import math

import numpy as np
import pytest

from lambda_nas.space import (
    CellSpec,
    Genotype,
    OpKind,
    apply_op,
    default_cell_spec,
    discretize,
    enumerate_genotypes,
    genotype_from_json,
    genotype_from_text,
    genotype_to_json,
    genotype_to_text,
    non_parametric_fraction,
    softmax_per_edge,
)
from lambda_nas.tape import Tape

from helpers import tiny_spec


def one_edge_spec(num_ops):
    ops = (OpKind.ZERO, OpKind.SKIP, OpKind.AFFINE, OpKind.NONLINEAR, OpKind.AVG_SCALE)
    return CellSpec(node_count=2, edges=((0, 1),), ops=ops[:num_ops], feature_width=2)


class TestCellSpecValidation:
    def test_default_spec_shape(self):
        spec = default_cell_spec()
        assert spec.num_edges == 6
        assert spec.num_ops == 5
        assert spec.alpha_size == 30

    def test_rejects_unfed_node(self):
        with pytest.raises(ValueError, match="no incoming edge"):
            CellSpec(node_count=3, edges=((0, 2),), ops=(OpKind.SKIP, OpKind.ZERO), feature_width=2)

    def test_rejects_duplicate_edge(self):
        with pytest.raises(ValueError, match="duplicate edge"):
            CellSpec(
                node_count=2,
                edges=((0, 1), (0, 1)),
                ops=(OpKind.SKIP, OpKind.ZERO),
                feature_width=2,
            )

    def test_rejects_bad_direction(self):
        with pytest.raises(ValueError):
            CellSpec(node_count=3, edges=((2, 1), (0, 1), (0, 2)), ops=(OpKind.SKIP, OpKind.ZERO), feature_width=2)

    def test_rejects_single_op(self):
        with pytest.raises(ValueError):
            CellSpec(node_count=2, edges=((0, 1),), ops=(OpKind.SKIP,), feature_width=2)

    def test_json_round_trip(self):
        spec = default_cell_spec()
        assert CellSpec.from_json(spec.to_json()) == spec
        assert CellSpec.from_json(spec.to_json()).spec_hash() == spec.spec_hash()


class TestSoftmaxPerEdge:
    def test_uniform_block(self):
        spec = one_edge_spec(3)
        np.testing.assert_allclose(softmax_per_edge(spec, np.zeros(3)), [1 / 3] * 3)

    def test_saturated_block_no_overflow(self):
        spec = one_edge_spec(3)
        p = softmax_per_edge(spec, np.array([1000.0, 0.0, 0.0]))
        assert p[0] == pytest.approx(1.0)
        assert np.all(np.isfinite(p))

    def test_log_two_closed_form(self):
        spec = one_edge_spec(2)
        p = softmax_per_edge(spec, np.array([math.log(2.0), 0.0]))
        np.testing.assert_allclose(p, [2 / 3, 1 / 3], rtol=1e-14)

    def test_blocks_sum_to_one(self):
        spec = tiny_spec()
        rng = np.random.default_rng(0)
        p = softmax_per_edge(spec, rng.uniform(-30, 30, size=spec.alpha_size))
        for blk in spec.edge_blocks():
            assert p[blk].sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(p[blk] > 0)

    def test_log_recovers_alpha_up_to_edge_constant(self):
        spec = tiny_spec()
        rng = np.random.default_rng(1)
        alpha = rng.uniform(-30, 30, size=spec.alpha_size)
        # clip so every probability stays representable in logs
        alpha = np.clip(alpha, -25, 25)
        logp = np.log(softmax_per_edge(spec, alpha))
        for blk in spec.edge_blocks():
            diff = alpha[blk] - logp[blk]
            assert diff.max() - diff.min() < 1e-10

    def test_rejects_non_finite(self):
        spec = one_edge_spec(2)
        with pytest.raises(ValueError):
            softmax_per_edge(spec, np.array([np.inf, 0.0]))


class TestDiscretize:
    def test_unique_max(self):
        spec = one_edge_spec(3)
        assert discretize(spec, np.array([0.1, 0.9, 0.2])).choice == (1,)

    def test_tie_breaks_to_lowest_index(self):
        spec = one_edge_spec(2)
        assert discretize(spec, np.array([0.5, 0.5])).choice == (0,)

    def test_all_zero_ties_everywhere(self):
        spec = tiny_spec()
        assert discretize(spec, np.zeros(spec.alpha_size)).choice == (0, 0, 0)

    def test_shift_invariance(self):
        spec = tiny_spec()
        rng = np.random.default_rng(2)
        for _ in range(50):
            alpha = rng.standard_normal(spec.alpha_size)
            shifted = alpha.copy()
            for e, blk in enumerate(spec.edge_blocks()):
                shifted[blk] += rng.uniform(-5, 5)
            assert discretize(spec, alpha) == discretize(spec, shifted)


class TestEnumerateGenotypes:
    def test_one_edge_two_ops(self):
        spec = one_edge_spec(2)
        assert [g.choice for g in enumerate_genotypes(spec)] == [(0,), (1,)]

    def test_two_edges_lexicographic(self):
        spec = CellSpec(
            node_count=3,
            edges=((0, 1), (0, 2)),
            ops=(OpKind.SKIP, OpKind.AFFINE),
            feature_width=2,
        )
        assert [g.choice for g in enumerate_genotypes(spec)] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_counts(self):
        spec = tiny_spec(num_ops=3)
        genos = enumerate_genotypes(spec)
        assert len(genos) == 27
        assert len(set(genos)) == 27

    def test_cap_enforced(self):
        spec = default_cell_spec()  # 5^6 = 15625 > 4096
        with pytest.raises(ValueError, match="cap"):
            enumerate_genotypes(spec)


class TestApplyOp:
    def test_skip_is_identity(self):
        t = Tape()
        x = t.leaf([[1.0, 2.0]])
        assert apply_op(t, OpKind.SKIP, None, x) is x

    def test_zero_maps_to_zero(self):
        t = Tape()
        out = apply_op(t, OpKind.ZERO, None, t.leaf([[1.0, 2.0]]))
        np.testing.assert_array_equal(out.value, [[0.0, 0.0]])

    def test_avg_scale_halves(self):
        t = Tape()
        out = apply_op(t, OpKind.AVG_SCALE, None, t.leaf([[2.0, 4.0]]))
        np.testing.assert_array_equal(out.value, [[1.0, 2.0]])

    def test_affine_and_nonlinear(self):
        t = Tape()
        x = t.leaf([[1.0, -1.0]])
        params = {"w": t.leaf(np.eye(2)), "b": t.leaf([0.5, 0.5])}
        aff = apply_op(t, OpKind.AFFINE, params, x)
        np.testing.assert_allclose(aff.value, [[1.5, -0.5]])
        nl = apply_op(t, OpKind.NONLINEAR, params, x)
        np.testing.assert_allclose(nl.value, np.tanh([[1.5, -0.5]]))

    def test_parametric_requires_params(self):
        t = Tape()
        with pytest.raises(ValueError):
            apply_op(t, OpKind.AFFINE, None, t.leaf([[1.0]]))


class TestGenotypeSerialization:
    def test_text_round_trip(self):
        spec = tiny_spec(num_ops=3)
        for g in enumerate_genotypes(spec):
            text = genotype_to_text(spec, g)
            assert genotype_from_text(spec, text) == g

    def test_text_form_is_readable(self):
        spec = tiny_spec(num_ops=3)
        text = genotype_to_text(spec, Genotype((0, 1, 2)))
        assert text == "e0:skip,e1:affine,e2:nonlinear"

    def test_json_round_trip(self):
        spec = tiny_spec(num_ops=3)
        for g in enumerate_genotypes(spec):
            assert genotype_from_json(spec, genotype_to_json(spec, g)) == g

    def test_json_consistency_check(self):
        spec = tiny_spec(num_ops=3)
        obj = genotype_to_json(spec, Genotype((0, 1, 2)))
        obj["ops"][0] = "affine"
        with pytest.raises(ValueError, match="disagrees"):
            genotype_from_json(spec, obj)

    def test_malformed_text_rejected(self):
        spec = tiny_spec(num_ops=3)
        with pytest.raises(ValueError):
            genotype_from_text(spec, "e0:skip,e1:affine")
        with pytest.raises(ValueError):
            genotype_from_text(spec, "e0:skip,e1:affine,e2:conv3x3")

    def test_non_parametric_fraction(self):
        spec = tiny_spec(num_ops=3)  # ops: skip, affine, nonlinear
        assert non_parametric_fraction(spec, Genotype((0, 0, 0))) == 1.0
        assert non_parametric_fraction(spec, Genotype((0, 1, 2))) == pytest.approx(1 / 3)
