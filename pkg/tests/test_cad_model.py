"""
Pruebas de la red CAD: formas por variante, gradientes de extremo a extremo y
transferencia del tronco
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_triple
from engine.gradcheck import check_gradients
from engine.tensor import Tensor
from model.cad import (
    ANSWER_HEAD, CadConfig, FeatureTriple, alignment_loss, avqa_loss, forward_answer,
    forward_pretrain, init_from_pretrained, init_weights, loss_record, predict_answers,
    sinusoidal_encoding, trunk_names,
)
from utils.errors import CheckpointError, ConfigError, ContextualConfigError, ShapeError
from utils.helpers import derive_rng


def weights_for(cfg, graph='answer', seed=0):
    return init_weights(cfg, derive_rng(seed, 'init'), graph=graph)


# =============================================================================
# Formas y variantes
# =============================================================================

class TestShapes:

    @pytest.mark.parametrize('variant, blocks', [('2CA', 2), ('3CA', 3), ('4CA', 4)])
    def test_answer_logits_per_variant(self, tiny_cfg, tiny_triple, variant, blocks):
        cfg = replace(tiny_cfg, variant=variant)
        w = weights_for(cfg)
        logits = forward_answer(tiny_triple, w, cfg)
        assert logits.shape == (2, cfg.n_answers)
        assert w[f"{ANSWER_HEAD}.w"].shape == (blocks * cfg.dim, cfg.n_answers)
        assert sum(1 for n in w.names() if n.endswith('.attn.wq')) == blocks

    def test_pretrain_heads(self, tiny_cfg, tiny_triple):
        w = weights_for(tiny_cfg, 'pretrain')
        audio, vis_t, vis_at = forward_pretrain(tiny_triple, w, tiny_cfg, derive_rng(0, 'contextual'))
        for logits in (audio, vis_t, vis_at):
            assert logits.shape == (2, tiny_cfg.n_time_labels)
        assert ANSWER_HEAD + '.w' not in w

    def test_2ca_has_no_third_head(self, tiny_cfg, tiny_triple):
        cfg = replace(tiny_cfg, variant='2CA')
        w = weights_for(cfg, 'pretrain')
        heads = forward_pretrain(tiny_triple, w, cfg, derive_rng(0, 'contextual'))
        assert heads[2] is None
        assert 'head.time_visual_at.w' not in w

    def test_trunk_names_do_not_depend_on_graph(self, tiny_cfg):
        assert trunk_names(weights_for(tiny_cfg, 'answer')) == trunk_names(weights_for(tiny_cfg, 'pretrain'))

    def test_same_seed_same_weights(self, tiny_cfg):
        a, b = weights_for(tiny_cfg, seed=5), weights_for(tiny_cfg, seed=5)
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_unknown_graph(self, tiny_cfg):
        with pytest.raises(ConfigError):
            weights_for(tiny_cfg, 'decoder')

    def test_invalid_config_values(self):
        with pytest.raises(ConfigError):
            CadConfig(variant='5CA')
        with pytest.raises(ConfigError):
            CadConfig(inputs='AV')
        with pytest.raises(ConfigError):
            CadConfig(dim=10, heads=4)

    def test_input_dimension_mismatch(self, tiny_cfg, rng):
        w = weights_for(tiny_cfg)
        with pytest.raises(ShapeError):
            forward_answer(make_triple(rng, d=5), w, tiny_cfg)

    def test_batch_mismatch_between_modalities(self, rng):
        with pytest.raises(ShapeError):
            FeatureTriple(rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 2, 4)),
                          rng.standard_normal((2, 3, 4, 4)))

    def test_training_needs_generator(self, tiny_cfg, tiny_triple):
        with pytest.raises(ContextualConfigError):
            forward_answer(tiny_triple, weights_for(tiny_cfg), tiny_cfg, rng=None, training=True)

    def test_stats_report_visual_tokens(self, tiny_cfg, tiny_triple):
        stats = {}
        forward_answer(tiny_triple, weights_for(tiny_cfg), tiny_cfg, stats=stats)
        assert stats['visual_nonzero'] == 1.0

    def test_predict_is_argmax(self, tiny_cfg, tiny_triple):
        w = weights_for(tiny_cfg)
        expected = np.argmax(forward_answer(tiny_triple, w, tiny_cfg).data, axis=-1)
        np.testing.assert_array_equal(predict_answers(tiny_triple, w, tiny_cfg), expected)

    def test_inference_ignores_generator(self, tiny_cfg, tiny_triple):
        w = weights_for(tiny_cfg)
        first = forward_answer(tiny_triple, w, tiny_cfg, rng=derive_rng(0, 'contextual'), training=False)
        second = forward_answer(tiny_triple, w, tiny_cfg, rng=derive_rng(9, 'contextual'), training=False)
        np.testing.assert_array_equal(first.data, second.data)


# =============================================================================
# Entradas restringidas y codificación posicional
# =============================================================================

class TestInputs:

    def test_question_only_ignores_audio_and_visual(self, tiny_cfg, rng):
        cfg = replace(tiny_cfg, inputs='Q')
        w = weights_for(cfg)
        x1 = make_triple(rng)
        x2 = FeatureTriple(rng.standard_normal(x1.a.shape), x1.t.data, rng.standard_normal(x1.v.shape))
        np.testing.assert_allclose(forward_answer(x1, w, cfg).data, forward_answer(x2, w, cfg).data, atol=1e-6)

    def test_audio_question_ignores_visual(self, tiny_cfg, rng):
        cfg = replace(tiny_cfg, inputs='AQ')
        w = weights_for(cfg)
        x1 = make_triple(rng)
        x2 = FeatureTriple(x1.a.data, x1.t.data, rng.standard_normal(x1.v.shape))
        np.testing.assert_allclose(forward_answer(x1, w, cfg).data, forward_answer(x2, w, cfg).data, atol=1e-6)

    def test_full_inputs_use_visual(self, tiny_cfg, rng):
        w = weights_for(tiny_cfg)
        x1 = make_triple(rng)
        x2 = FeatureTriple(x1.a.data, x1.t.data, rng.standard_normal(x1.v.shape))
        assert not np.allclose(forward_answer(x1, w, tiny_cfg).data, forward_answer(x2, w, tiny_cfg).data)

    def test_sinusoidal_encoding(self):
        table = sinusoidal_encoding(5, 6)
        assert table.shape == (5, 6)
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1])
        np.testing.assert_allclose(table[1, 0], math.sin(1.0))

    def test_positional_changes_output(self, tiny_cfg, tiny_triple):
        w = weights_for(tiny_cfg)
        plain = forward_answer(tiny_triple, w, tiny_cfg).data
        positional = forward_answer(tiny_triple, w, replace(tiny_cfg, positional=True)).data
        assert not np.allclose(plain, positional)


# =============================================================================
# Pérdidas y gradientes
# =============================================================================

class TestLosses:

    def test_avqa_loss_uniform_logits(self):
        logits = Tensor(np.zeros((3, 42)))
        loss = avqa_loss(logits, np.array([0, 17, 41]))
        assert abs(float(loss.data) - math.log(42)) < 1e-5

    def test_alignment_loss_uniform_heads(self):
        zeros = Tensor(np.zeros((4, 60)))
        labels = np.array([0, 10, 20, 59])
        loss = alignment_loss((zeros, zeros, zeros), labels, labels)
        assert abs(float(loss.data) - 3 * math.log(60)) < 1e-5

    def test_alignment_loss_two_heads(self):
        zeros = Tensor(np.zeros((2, 60)))
        loss = alignment_loss((zeros, zeros, None), [1, 2], [3, 4])
        assert abs(float(loss.data) - 2 * math.log(60)) < 1e-5

    def test_untrained_pretrain_loss_near_chance(self, rng):
        cfg = CadConfig(dim=8, heads=2, n_time_labels=60, d_a=4, d_t=4, d_v=4)
        w = weights_for(cfg, 'pretrain')
        x = make_triple(rng, batch=32)
        heads = forward_pretrain(x, w, cfg, derive_rng(0, 'contextual'))
        labels = rng.integers(0, 60, size=32)
        loss = float(alignment_loss(heads, labels, labels).data)
        assert abs(loss - 3 * math.log(60)) < 0.1 * 3 * math.log(60)

    def test_loss_record(self):
        logits = Tensor(np.log(np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]])), dtype=np.float64)
        record = loss_record(logits, [0, 2])
        np.testing.assert_array_equal(record.A_n, [[1, 0, 0], [0, 0, 1]])
        np.testing.assert_allclose(record.P_n, [[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]], atol=1e-12)
        assert record.L_avqa == pytest.approx(-(math.log(0.7) + math.log(0.5)) / 2)

    @pytest.mark.parametrize('variant', ['2CA', '3CA', '4CA'])
    def test_answer_graph_gradients(self, tiny_cfg, rng, variant):
        cfg = replace(tiny_cfg, variant=variant, use_contextual=False)
        w = weights_for(cfg).astype(np.float64)
        x = make_triple(rng, batch=2, t_a=3, l_q=2, t_v=3, s=4).astype(np.float64)
        labels = np.array([1, 3])
        loss = lambda: avqa_loss(forward_answer(x, w, cfg), labels)
        names = w.names()
        errors = check_gradients(loss, [w[n] for n in names], eps=1e-6)
        worst = {names[i]: e for i, e in errors.items() if e >= 1e-3}
        assert not worst, worst

    def test_pretrain_graph_gradients(self, tiny_cfg, rng):
        cfg = replace(tiny_cfg, use_contextual=False)
        w = weights_for(cfg, 'pretrain').astype(np.float64)
        x = make_triple(rng, batch=2, t_a=3, l_q=2, t_v=3, s=4).astype(np.float64)
        audio, visual = np.array([0, 5]), np.array([2, 2])
        loss = lambda: alignment_loss(forward_pretrain(x, w, cfg, training=False), audio, visual)
        names = w.names()
        errors = check_gradients(loss, [w[n] for n in names], eps=1e-6)
        worst = {names[i]: e for i, e in errors.items() if e >= 1e-3}
        assert not worst, worst



# =============================================================================
# Transferencia desde el pre-entrenamiento
# =============================================================================

class TestInitFromPretrained:

    def test_copies_trunk_and_keeps_head(self, tiny_cfg):
        pretrained = weights_for(tiny_cfg, 'pretrain', seed=1)
        fresh = weights_for(tiny_cfg, 'answer', seed=2)
        result = init_from_pretrained(fresh, pretrained.state())
        for name in trunk_names(result):
            np.testing.assert_array_equal(result[name].data, pretrained[name].data)
        np.testing.assert_array_equal(result[f"{ANSWER_HEAD}.w"].data, fresh[f"{ANSWER_HEAD}.w"].data)
        assert not any(n.startswith('head.time') for n in result.names())

    def test_does_not_alias_inputs(self, tiny_cfg):
        pretrained = weights_for(tiny_cfg, 'pretrain', seed=1)
        result = init_from_pretrained(weights_for(tiny_cfg), pretrained)
        result['cab1.attn.wq'].data[0, 0] += 1.0
        assert result['cab1.attn.wq'].data[0, 0] != pretrained['cab1.attn.wq'].data[0, 0]

    def test_larger_variant_from_smaller_checkpoint(self, tiny_cfg):
        pretrained = weights_for(tiny_cfg, 'pretrain')
        target = weights_for(replace(tiny_cfg, variant='4CA'))
        with pytest.raises(CheckpointError) as info:
            init_from_pretrained(target, pretrained.state())
        assert info.value.names and all(n.startswith('cab4.') for n in info.value.names)

    def test_dimension_mismatch(self, tiny_cfg):
        pretrained = weights_for(replace(tiny_cfg, dim=4), 'pretrain')
        with pytest.raises(CheckpointError):
            init_from_pretrained(weights_for(tiny_cfg), pretrained.state())
