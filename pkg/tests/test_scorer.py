import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from viscoref.corpus import ObjectLabelSet
from viscoref.embeddings import build_vocabulary
from viscoref.encoder import DTYPE, build_parameters
from viscoref.scorer import (
    ScorerError,
    alignment_distribution,
    alignment_heatmap,
    combined_score,
    contextual_score,
    contextual_scores,
    grounding_probability,
    joint_grounding_probability,
    prepare_scoring,
    score_pair,
    visual_score,
)
from viscoref.synthetic import make_overfit_suite

VOCAB = ["cat", "dog", "here", "i", "is", "it", "like", "the"]


@pytest.fixture
def params(tiny_config):
    return build_parameters(tiny_config, VOCAB)


def numpy_feed_forward(sequential, x: np.ndarray) -> np.ndarray:
    """Independent re-implementation of the torch feed-forward stack."""
    out = x
    for layer in sequential:
        if isinstance(layer, torch.nn.Linear):
            w = layer.weight.detach().numpy()
            b = layer.bias.detach().numpy()
            out = out @ w.T + b
        elif isinstance(layer, torch.nn.ReLU):
            out = np.maximum(out, 0.0)
        else:
            raise AssertionError(f"unexpected layer {layer}")
    return out


def random_simplex_rows(rng, rows, cols):
    logits = rng.normal(size=(rows, cols))
    exp = np.exp(logits - logits.max(axis=1, keepdims=True))
    return exp / exp.sum(axis=1, keepdims=True)


class TestContextualScore:
    def test_zero_weights_leave_bias(self, params):
        with torch.no_grad():
            for layer in params.contextual_scorer:
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.zero_()
            params.contextual_scorer[-1].bias.fill_(1.25)
        d = params.config.span_dim
        reps = torch.randn(4, d, dtype=DTYPE)
        scores = contextual_scores(reps[0], reps[1:], params)
        assert torch.allclose(scores, torch.full((3,), 1.25, dtype=DTYPE))

    def test_asymmetric_in_arguments(self, params):
        torch.manual_seed(0)
        a = torch.randn(params.config.span_dim, dtype=DTYPE)
        b = torch.randn(params.config.span_dim, dtype=DTYPE)
        assert contextual_score(a, b, params).item() != pytest.approx(
            contextual_score(b, a, params).item()
        )

    def test_matches_numpy_reimplementation(self, params):
        torch.manual_seed(1)
        d = params.config.span_dim
        anchor = torch.randn(d, dtype=DTYPE)
        cands = torch.randn(5, d, dtype=DTYPE)
        ours = contextual_scores(anchor, cands, params).detach().numpy()
        a = anchor.numpy()
        features = np.concatenate(
            [np.tile(a, (5, 1)), cands.numpy(), np.tile(a, (5, 1)) * cands.numpy()], axis=1
        )
        expected = numpy_feed_forward(params.contextual_scorer, features).squeeze(-1)
        assert np.allclose(ours, expected, atol=1e-12)

    def test_dimension_mismatch(self, params):
        with pytest.raises(ScorerError):
            contextual_score(
                torch.zeros(3, dtype=DTYPE), torch.zeros(4, dtype=DTYPE), params
            )


class TestAlignmentDistribution:
    def test_rows_on_simplex(self, params):
        torch.manual_seed(2)
        d = params.config.span_dim
        result = alignment_distribution(
            torch.randn(6, d, dtype=DTYPE), torch.randn(4, d, dtype=DTYPE), params
        )
        sums = result.distribution.sum(dim=-1).detach()
        assert torch.allclose(sums, torch.ones(6, dtype=DTYPE), atol=1e-6)
        assert torch.all(result.distribution.detach() >= 0)

    def test_uniform_when_logits_constant(self, params):
        with torch.no_grad():
            for layer in params.alignment_scorer:
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.zero_()
                    layer.bias.zero_()
        d = params.config.span_dim
        result = alignment_distribution(
            torch.randn(1, d, dtype=DTYPE), torch.randn(2, d, dtype=DTYPE), params
        )
        assert torch.allclose(
            result.distribution, torch.full((1, 2), 0.5, dtype=DTYPE), atol=1e-12
        )

    def test_softmax_shift_invariance_and_closed_form(self):
        logits = torch.log(torch.tensor([1.0, 2.0, 7.0], dtype=DTYPE))
        b = torch.softmax(logits, dim=0)
        assert torch.allclose(b, torch.tensor([0.1, 0.2, 0.7], dtype=DTYPE), atol=1e-12)
        shifted = torch.softmax(logits + 11.3, dim=0)
        assert torch.allclose(b, shifted, atol=1e-12)

    def test_distribution_is_softmax_of_logits(self, params):
        torch.manual_seed(3)
        d = params.config.span_dim
        result = alignment_distribution(
            torch.randn(3, d, dtype=DTYPE), torch.randn(5, d, dtype=DTYPE), params
        )
        assert torch.allclose(
            result.distribution, torch.softmax(result.logits, dim=-1), atol=1e-12
        )


class TestGrounding:
    def test_max_over_non_null(self):
        row = torch.tensor([0.7, 0.2, 0.1], dtype=DTYPE)
        assert grounding_probability(row).item() == pytest.approx(0.7)

    def test_fully_null_grounds_zero(self):
        row = torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)
        assert grounding_probability(row).item() == 0.0

    def test_single_label(self):
        for x in (0.0, 0.123, 1.0):
            row = torch.tensor([x, 1.0 - x], dtype=DTYPE)
            assert grounding_probability(row).item() == pytest.approx(x)

    def test_no_labels_at_all(self):
        assert grounding_probability(torch.tensor([1.0], dtype=DTYPE)).item() == 0.0


class TestJointGrounding:
    def test_two_term_arithmetic(self):
        b_i = torch.tensor([0.6, 0.3, 0.1], dtype=DTYPE)
        b_j = torch.tensor([0.5, 0.4, 0.1], dtype=DTYPE)
        assert joint_grounding_probability(b_i, b_j).item() == pytest.approx(0.30)

    def test_one_hot_same_label(self):
        b = torch.tensor([1.0, 0.0, 0.0], dtype=DTYPE)
        assert joint_grounding_probability(b, b).item() == 1.0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(1, 9))
            rows = random_simplex_rows(rng, 2, k + 1)
            b_i = torch.tensor(rows[0], dtype=DTYPE)
            b_j = torch.tensor(rows[1], dtype=DTYPE)
            expected = max(float(b_i[c]) * float(b_j[c]) for c in range(k))
            assert joint_grounding_probability(b_i, b_j).item() == expected

    def test_mismatched_label_sets_error(self):
        with pytest.raises(ScorerError):
            joint_grounding_probability(
                torch.ones(3, dtype=DTYPE) / 3, torch.ones(4, dtype=DTYPE) / 4
            )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded_by_product_of_maxima(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 7))
        rows = random_simplex_rows(rng, 2, k + 1)
        b_i = torch.tensor(rows[0], dtype=DTYPE)
        b_j = torch.tensor(rows[1], dtype=DTYPE)
        m_ij = joint_grounding_probability(b_i, b_j).item()
        m_ji = joint_grounding_probability(b_j, b_i).item()
        assert m_ij == m_ji
        m_i = grounding_probability(b_i).item()
        m_j = grounding_probability(b_j).item()
        assert m_ij <= m_i * m_j + 1e-15


class TestVisualScore:
    def test_zero_weights_leave_bias(self, params):
        with torch.no_grad():
            for layer in params.visual_scorer:
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.zero_()
            params.visual_scorer[-1].bias.fill_(-0.5)
        s = visual_score(0.3, 0.4, 0.1, params)
        assert s.item() == pytest.approx(-0.5)

    def test_extreme_inputs_differ(self, params):
        low = visual_score(0.0, 0.0, 0.0, params).item()
        high = visual_score(1.0, 1.0, 1.0, params).item()
        assert low != pytest.approx(high)

    def test_matches_numpy_reimplementation(self, params):
        features = np.array([0.9, 0.4, 0.9 * 0.4, 0.25])
        expected = numpy_feed_forward(params.visual_scorer, features[None, :])[0, 0]
        ours = visual_score(0.9, 0.4, 0.25, params).item()
        assert ours == pytest.approx(expected, abs=1e-12)


class TestCombinedScore:
    def test_endpoints_exact(self):
        assert combined_score(3.25, -7.5, 0.0) == 3.25
        assert combined_score(3.25, -7.5, 1.0) == -7.5

    def test_paper_setting_arithmetic(self):
        assert combined_score(1.0, 2.0, 0.4) == pytest.approx(1.4, abs=1e-12)

    def test_affine_midpoint_exact(self):
        fc, fv = 0.731, -2.5
        mid = combined_score(fc, fv, 0.5)
        assert mid == pytest.approx((combined_score(fc, fv, 0.0) + combined_score(fc, fv, 1.0)) / 2, abs=1e-12)

    def test_lambda_out_of_range(self):
        with pytest.raises(ScorerError):
            combined_score(1.0, 2.0, -0.1)
        with pytest.raises(ScorerError):
            combined_score(1.0, 2.0, 1.1)


class TestScoringContext:
    def test_score_pair_fuses_parts(self, tiny_config):
        ds = make_overfit_suite(2, seed=0)
        params = build_parameters(tiny_config, build_vocabulary(ds))
        ctx = prepare_scoring(ds[0], params)
        order = ctx.order
        pair = score_pair(ctx, order[0], order[-1], params, 0.4)
        assert pair.fused == pytest.approx(0.6 * pair.contextual + 0.4 * pair.visual)

    def test_lambda_zero_argmax_matches_contextual(self, tiny_config):
        from viscoref.scorer import fused_candidate_scores

        ds = make_overfit_suite(3, seed=1)
        params = build_parameters(tiny_config, build_vocabulary(ds))
        for d in ds:
            ctx = prepare_scoring(d, params)
            n = len(ctx.order)
            fused = fused_candidate_scores(ctx, n - 1, list(range(n - 1)), params, 0.0)
            reps = ctx.encoding.mention_reps
            fc = contextual_scores(reps[n - 1], reps[: n - 1], params)
            assert torch.argmax(fused).item() == torch.argmax(fc).item()
            assert torch.allclose(fused, fc, atol=1e-12)

    def test_heatmap_shape(self, tiny_config):
        ds = make_overfit_suite(1, seed=0)
        params = build_parameters(tiny_config, build_vocabulary(ds))
        ctx = prepare_scoring(ds[0], params)
        dump = alignment_heatmap(ctx)
        assert dump["dialogue_id"] == ds[0].dialogue_id
        assert len(dump["mentions"]) == len(ctx.order)
        assert dump["labels"][-1] == "null"
        assert len(dump["matrix"]) == len(ctx.order)
        assert all(len(row) == len(dump["labels"]) for row in dump["matrix"])
        for row in dump["matrix"]:
            assert sum(row) == pytest.approx(1.0, abs=1e-6)

    def test_empty_label_set_grounds_zero(self, tiny_config):
        from dataclasses import replace

        ds = make_overfit_suite(1, seed=0)
        d = replace(ds[0], label_set=ObjectLabelSet(()))
        params = build_parameters(tiny_config, build_vocabulary(ds))
        ctx = prepare_scoring(d, params)
        assert torch.all(ctx.alignment.grounding.detach() == 0)
        assert ctx.alignment.distribution.shape[-1] == 1
