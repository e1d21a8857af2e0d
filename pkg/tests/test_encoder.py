import numpy as np
import pytest
import torch

from viscoref.corpus import ObjectLabelSet
from viscoref.embeddings import StaticEmbeddings, build_vocabulary
from viscoref.encoder import (
    DTYPE,
    EncodedSequence,
    EncoderError,
    ModelConfig,
    bucket_index,
    build_parameters,
    embed_tokens,
    encode_dialogue,
    encode_object_labels,
    encode_sequence,
    encode_token_sequence,
    inner_span_attention,
    span_representation,
)
from viscoref.synthetic import make_overfit_suite

from conftest import build_dialogue

VOCAB = ["cat", "dog", "here", "i", "is", "it", "like", "the"]


@pytest.fixture
def params(tiny_config):
    return build_parameters(tiny_config, VOCAB)


class TestModelConfig:
    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError, match="lambda_vis"):
            ModelConfig(lambda_vis=1.5)

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError, match="hidden_size"):
            ModelConfig(hidden_size=0)

    def test_rejects_bad_buckets(self):
        with pytest.raises(ValueError, match="length_buckets"):
            ModelConfig(length_buckets=(2, 4))
        with pytest.raises(ValueError, match="length_buckets"):
            ModelConfig(length_buckets=(1, 3, 3))

    def test_span_dim(self, tiny_config):
        c = tiny_config
        assert c.span_dim == 4 * c.hidden_size + c.embedding_dim + c.length_feature_dim


class TestBucketIndex:
    @pytest.mark.parametrize(
        "width,expected",
        [(1, 0), (2, 1), (3, 2), (4, 3), (5, 4), (7, 4), (8, 5), (15, 5), (16, 6), (31, 6), (32, 7), (100, 7)],
    )
    def test_default_buckets(self, width, expected):
        assert bucket_index(width, (1, 2, 3, 4, 5, 8, 16, 32)) == expected

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError):
            bucket_index(0, (1, 2))


class TestEmbedTokens:
    def test_oov_maps_to_zero_vector(self, params):
        emb = embed_tokens(["cat", "zebra"], params)
        assert torch.all(emb[1] == 0)
        assert not torch.all(emb[0] == 0)

    def test_output_dim_without_contextual(self, params, tiny_config):
        emb = embed_tokens(["cat"], params)
        assert emb.shape == (1, tiny_config.static_embedding_dim)

    def test_repeated_token_identical_rows(self, params):
        emb = embed_tokens(["dog", "cat", "dog"], params)
        assert torch.equal(emb[0], emb[2])

    def test_contextual_missing_errors(self, tiny_config):
        from dataclasses import replace

        config = replace(tiny_config, contextual_embedding_dim=4)
        p = build_parameters(config, VOCAB)
        with pytest.raises(EncoderError, match="missing"):
            embed_tokens(["cat"], p)
        good = embed_tokens(["cat"], p, np.ones((1, 4)))
        assert good.shape == (1, tiny_config.static_embedding_dim + 4)
        with pytest.raises(EncoderError, match="shape"):
            embed_tokens(["cat"], p, np.ones((1, 3)))

    def test_empty_sequence_errors(self, params):
        with pytest.raises(EncoderError):
            embed_tokens([], params)

    def test_pretrained_vectors_copied_and_oov_zero(self, tiny_config):
        table = StaticEmbeddings(
            tokens=["cat"], vectors=np.arange(8, dtype=np.float64).reshape(1, 8)
        )
        p = build_parameters(tiny_config, ["cat", "dog"], static_vectors=table)
        emb = embed_tokens(["cat", "dog"], p)
        assert torch.equal(emb[0], torch.arange(8, dtype=DTYPE))
        assert torch.all(emb[1] == 0)  # in vocab, but no pretrained row


def reference_bilstm(embeddings: torch.Tensor, lstm: torch.nn.LSTM) -> torch.Tensor:
    """Naive per-step recurrence, used as an independent oracle."""

    def direction(x, suffix):
        w_ih = getattr(lstm, f"weight_ih_l0{suffix}")
        w_hh = getattr(lstm, f"weight_hh_l0{suffix}")
        b_ih = getattr(lstm, f"bias_ih_l0{suffix}")
        b_hh = getattr(lstm, f"bias_hh_l0{suffix}")
        hidden = lstm.hidden_size
        h = torch.zeros(hidden, dtype=x.dtype)
        c = torch.zeros(hidden, dtype=x.dtype)
        outs = []
        for t in range(x.shape[0]):
            gates = w_ih @ x[t] + b_ih + w_hh @ h + b_hh
            i, f, g, o = gates.split(hidden)
            i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
            g = torch.tanh(g)
            c = f * c + i * g
            h = o * torch.tanh(c)
            outs.append(h)
        return torch.stack(outs)

    forward = direction(embeddings, "")
    backward = direction(torch.flip(embeddings, dims=[0]), "_reverse")
    return torch.cat([forward, torch.flip(backward, dims=[0])], dim=1)


class TestEncodeSequence:
    def test_shape_single_token(self, params, tiny_config):
        enc = encode_token_sequence(["cat"], params)
        assert enc.states.shape == (1, 2 * tiny_config.hidden_size)
        assert len(enc) == 1

    def test_matches_naive_recurrence(self, params):
        torch.manual_seed(3)
        x = torch.randn(5, params.config.embedding_dim, dtype=DTYPE)
        enc = encode_sequence(x, params)
        expected = reference_bilstm(x, params.sequence_encoder)
        assert torch.allclose(enc.states, expected, atol=1e-12, rtol=1e-10)

    def test_reversal_swaps_directional_halves(self, tiny_config):
        p1 = build_parameters(tiny_config, VOCAB)
        p2 = build_parameters(tiny_config, VOCAB)
        with torch.no_grad():
            for name in ("weight_ih_l0", "weight_hh_l0", "bias_ih_l0", "bias_hh_l0"):
                fwd = getattr(p1.sequence_encoder, name).clone()
                bwd = getattr(p1.sequence_encoder, name + "_reverse").clone()
                getattr(p2.sequence_encoder, name).copy_(bwd)
                getattr(p2.sequence_encoder, name + "_reverse").copy_(fwd)
        torch.manual_seed(4)
        x = torch.randn(5, tiny_config.embedding_dim, dtype=DTYPE)
        h = tiny_config.hidden_size
        out = encode_sequence(x, p1).states
        out_rev = encode_sequence(torch.flip(x, dims=[0]), p2).states
        swapped = torch.cat([out[:, h:], out[:, :h]], dim=1)
        assert torch.allclose(out_rev, torch.flip(swapped, dims=[0]), atol=1e-12)

    def test_zero_weights_give_zero_states(self, params):
        with torch.no_grad():
            for p in params.sequence_encoder.parameters():
                p.zero_()
        enc = encode_token_sequence(["cat", "dog"], params)
        assert torch.all(enc.states == 0)

    def test_deterministic_given_seed(self, tiny_config):
        a = build_parameters(tiny_config, VOCAB)
        b = build_parameters(tiny_config, VOCAB)
        ea = encode_token_sequence(["the", "cat"], a)
        eb = encode_token_sequence(["the", "cat"], b)
        assert torch.equal(ea.states, eb.states)


class TestSpanRepresentation:
    def test_single_token_attention_is_one(self, params):
        enc = encode_token_sequence(["the", "cat", "is"], params)
        a = inner_span_attention(enc, 1, 2, params)
        assert torch.allclose(a, torch.ones(1, dtype=DTYPE))
        rep = span_representation(enc, 1, 2, params)
        weighted = rep[4 * params.config.hidden_size : 4 * params.config.hidden_size + params.config.embedding_dim]
        assert torch.allclose(weighted, enc.embeddings[1])

    def test_uniform_attention_averages_embeddings(self, params):
        with torch.no_grad():
            params.attention_scorer.weight.zero_()
            params.attention_scorer.bias.zero_()
        enc = encode_token_sequence(["the", "cat"], params)
        rep = span_representation(enc, 0, 2, params)
        h, e = params.config.hidden_size, params.config.embedding_dim
        weighted = rep[4 * h : 4 * h + e]
        assert torch.allclose(weighted, enc.embeddings.mean(dim=0), atol=1e-12)

    def test_closed_form_softmax_weights(self, params):
        # craft states whose attention logits are exactly [0, ln 3]
        with torch.no_grad():
            params.attention_scorer.weight.zero_()
            params.attention_scorer.weight[0, 0] = 1.0
            params.attention_scorer.bias.zero_()
        h2 = 2 * params.config.hidden_size
        states = torch.zeros(2, h2, dtype=DTYPE)
        states[1, 0] = float(np.log(3.0))
        enc = EncodedSequence(
            embeddings=torch.tensor([[1.0] * params.config.embedding_dim,
                                     [3.0] * params.config.embedding_dim], dtype=DTYPE),
            states=states,
        )
        a = inner_span_attention(enc, 0, 2, params)
        assert torch.allclose(a, torch.tensor([0.25, 0.75], dtype=DTYPE), atol=1e-12)
        rep = span_representation(enc, 0, 2, params)
        weighted = rep[4 * params.config.hidden_size :][: params.config.embedding_dim]
        assert torch.allclose(weighted, torch.full((params.config.embedding_dim,), 2.5, dtype=DTYPE), atol=1e-12)

    def test_dimension_constant_across_spans(self, params):
        enc = encode_token_sequence(["the", "cat", "is", "here"], params)
        dims = {
            tuple(span_representation(enc, s, e, params).shape)
            for s in range(4)
            for e in range(s + 1, 5)
        }
        assert dims == {(params.config.span_dim,)}

    def test_attention_rows_on_simplex(self, params):
        torch.manual_seed(11)
        for _ in range(25):
            n = int(torch.randint(1, 7, ()).item())
            tokens = [VOCAB[int(torch.randint(0, len(VOCAB), ()).item())] for _ in range(n)]
            enc = encode_token_sequence(tokens, params)
            a = inner_span_attention(enc, 0, n, params).detach()
            assert torch.all(a >= 0)
            assert abs(float(a.sum()) - 1.0) < 1e-6

    def test_empty_span_errors(self, params):
        enc = encode_token_sequence(["the", "cat"], params)
        with pytest.raises(EncoderError):
            span_representation(enc, 1, 1, params)
        with pytest.raises(EncoderError):
            span_representation(enc, 0, 3, params)

    def test_gradient_matches_finite_differences(self, tiny_config):
        params = build_parameters(tiny_config, VOCAB)
        torch.manual_seed(5)
        probe = torch.randn(tiny_config.span_dim, dtype=DTYPE)
        tokens = ["the", "cat", "is"]

        def value() -> float:
            with torch.no_grad():
                enc = encode_token_sequence(tokens, params)
                return float(span_representation(enc, 0, 3, params) @ probe)

        enc = encode_token_sequence(tokens, params)
        loss = span_representation(enc, 0, 3, params) @ probe
        named = [(n, p) for n, p in params.named_parameters() if p.requires_grad]
        grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
        rng = np.random.default_rng(7)
        eps = 1e-6
        checked = 0
        for (name, tensor), grad in zip(named, grads):
            for flat in rng.choice(tensor.numel(), size=min(2, tensor.numel()), replace=False):
                with torch.no_grad():
                    orig = tensor.view(-1)[flat].item()
                    tensor.view(-1)[flat] = orig + eps
                plus = value()
                with torch.no_grad():
                    tensor.view(-1)[flat] = orig - eps
                minus = value()
                with torch.no_grad():
                    tensor.view(-1)[flat] = orig
                numeric = (plus - minus) / (2 * eps)
                analytic = 0.0 if grad is None else float(grad.view(-1)[flat])
                scale = max(abs(numeric), abs(analytic))
                if scale >= 1e-8:
                    assert abs(numeric - analytic) / scale < 1e-4, name
                    checked += 1
        assert checked > 5


class TestObjectLabels:
    def test_k_plus_one_rows(self, params):
        labels = ObjectLabelSet((("cat",), ("the", "dog")))
        reps = encode_object_labels(labels, params)
        assert reps.shape == (3, params.config.span_dim)
        assert torch.equal(reps[2], params.null_label)

    def test_identical_labels_identical_reps(self, params):
        a = encode_object_labels(ObjectLabelSet((("cat",),)), params)
        b = encode_object_labels(ObjectLabelSet((("cat",),)), params)
        assert torch.equal(a, b)

    def test_empty_label_set_only_null(self, params):
        reps = encode_object_labels(ObjectLabelSet(()), params)
        assert reps.shape == (1, params.config.span_dim)
        assert torch.equal(reps[0], params.null_label)


class TestEncodeDialogue:
    def test_mention_reps_follow_global_order(self, tiny_config):
        d = build_dialogue(pool=(("a", "cat"),), pronouns=(((1, 2), "anaphoric", (("pool", 0),)),))
        params = build_parameters(tiny_config, build_vocabulary([d]))
        ctx = encode_dialogue(d, params)
        assert ctx.mention_reps.shape == (len(ctx.order), tiny_config.span_dim)
        assert ctx.label_reps.shape[0] == len(d.label_set.labels) + 1
        assert torch.equal(ctx.rep(ctx.order[0]), ctx.mention_reps[0])

    def test_runs_on_synthetic_suite(self, tiny_config):
        ds = make_overfit_suite(3, seed=0)
        params = build_parameters(tiny_config, build_vocabulary(ds))
        for d in ds:
            ctx = encode_dialogue(d, params)
            assert ctx.mention_reps.shape[0] == len(ctx.order)
