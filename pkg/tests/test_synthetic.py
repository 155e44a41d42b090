"""
Pruebas del generador sintético y de los conjuntos AVQA
"""

import numpy as np
import pytest

from synthetic.dataset import EpisodeDistribution, make_dataset, sample_spec, split_indices
from synthetic.features import (
    AnswerVocab, ClassActivity, EpisodeSpec, FeatureDims, PrototypeBank, answer_from_spec,
    generate_episode, generate_qa, nearest_prototype_accuracy, present_classes, scope_interval,
    sweep_spec,
)

DIMS = FeatureDims(d_a=8, d_t=8, s=4, c=8, l_q=2)


@pytest.fixture
def vocab():
    return AnswerVocab(3)


@pytest.fixture
def example_spec():
    """Clase 0: audio [0, 3) y visual [2, 5); clase 1: solo visual [1, 4)"""
    return EpisodeSpec(n_classes=3, n_cues=10, dims=DIMS, activities=[
        ClassActivity(0, audio=(0, 3), visual=(2, 5)),
        ClassActivity(1, visual=(1, 4)),
    ])


# =============================================================================
# Vocabulario y respuestas
# =============================================================================

class TestAnswers:

    def test_vocab_layout(self, vocab):
        assert (vocab.NO, vocab.YES) == (0, 1)
        assert vocab.count(0) == 2 and vocab.count(6) == 8
        assert vocab.class_label(0) == 9
        assert vocab.size == 12

    def test_vocab_too_many_classes(self):
        with pytest.raises(ValueError):
            AnswerVocab(7)

    def test_scope_intervals(self, example_spec):
        class0 = example_spec.activities[0]
        assert scope_interval(class0, 'A') == (0, 3)
        assert scope_interval(class0, 'V') == (2, 5)
        assert scope_interval(class0, 'AV') == (2, 3)
        assert scope_interval(example_spec.activities[1], 'AV') is None
        assert set(present_classes(example_spec, 'V')) == {0, 1}

    @pytest.mark.parametrize('category, scope, class_id, expected', [
        ('counting', 'V', -1, 4),
        ('counting', 'A', -1, 3),
        ('counting', 'AV', -1, 3),
        ('temporal', 'V', -1, 10),
        ('temporal', 'A', -1, 9),
        ('existential', 'AV', 1, 0),
        ('existential', 'AV', 0, 1),
        ('existential', 'V', 1, 1),
        ('existential', 'A', 2, 0),
    ])
    def test_answer_from_spec(self, example_spec, vocab, category, scope, class_id, expected):
        assert answer_from_spec(example_spec, category, scope, class_id, vocab) == expected

    def test_temporal_tie_breaks_by_class_id(self, vocab):
        spec = EpisodeSpec(n_classes=3, n_cues=10, dims=DIMS, activities=[
            ClassActivity(2, audio=(1, 3)), ClassActivity(1, audio=(1, 5)),
        ])
        assert answer_from_spec(spec, 'temporal', 'A', -1, vocab) == vocab.class_label(1)

    def test_temporal_without_classes(self, vocab):
        spec = EpisodeSpec(n_classes=3, n_cues=10, dims=DIMS, activities=[])
        with pytest.raises(ValueError):
            answer_from_spec(spec, 'temporal', 'A', -1, vocab)

    def test_unknown_category(self, example_spec, vocab):
        with pytest.raises(ValueError):
            answer_from_spec(example_spec, 'causal', 'A', -1, vocab)

    def test_generated_qa_matches_spec(self, example_spec, vocab):
        bank = PrototypeBank(3, DIMS, seed=0)
        episode = generate_episode(example_spec, bank, np.random.default_rng(0))
        for seed in range(30):
            qa = generate_qa(episode, bank, vocab, np.random.default_rng(seed))
            assert qa.question.shape == (DIMS.l_q, DIMS.d_t)
            assert qa.answer_label == answer_from_spec(example_spec, qa.category, qa.scope, qa.class_id, vocab)
            assert (qa.class_id >= 0) == (qa.category == 'existential')


# =============================================================================
# Episodios
# =============================================================================

class TestEpisodes:

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            FeatureDims(d_a=8, c=4)
        with pytest.raises(ValueError):
            FeatureDims(l_q=1)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            EpisodeSpec(n_classes=2, n_cues=5, activities=[ClassActivity(0, audio=(3, 7))])
        with pytest.raises(ValueError):
            EpisodeSpec(n_classes=2, n_cues=5, activities=[ClassActivity(0), ClassActivity(0)])

    def test_noise_free_episode_carries_prototypes(self, example_spec):
        bank = PrototypeBank(3, DIMS, seed=1, base_noise=0.0)
        episode = generate_episode(example_spec, bank, np.random.default_rng(0))
        assert episode.audio.shape == (10, 8)
        assert episode.visual.shape == (10, 4, 8)
        np.testing.assert_allclose(episode.audio[1], bank.prototypes[0], atol=1e-6)
        np.testing.assert_allclose(episode.audio[5], 0.0)
        expected = (bank.spatial_profiles[0][:, None] * bank.prototypes[0][None, :]
                    + bank.spatial_profiles[1][:, None] * bank.prototypes[1][None, :])
        np.testing.assert_allclose(episode.visual[3], expected, atol=1e-5)

    def test_clip_queries_name_active_classes(self, example_spec):
        bank = PrototypeBank(3, DIMS, seed=1, base_noise=0.0)
        episode = generate_episode(example_spec, bank, np.random.default_rng(0))
        assert episode.clip_queries.shape == (1, 2, 8)
        np.testing.assert_allclose(episode.clip_queries[0, 0], bank.text[0], atol=1e-6)
        np.testing.assert_allclose(episode.clip_queries[0, 1], bank.text[1], atol=1e-6)

    def test_bank_too_small(self, example_spec):
        with pytest.raises(ValueError):
            generate_episode(example_spec, PrototypeBank(2, DIMS), np.random.default_rng(0))

    def test_sweep_spec(self):
        spec = sweep_spec(12, DIMS, cues_per_clip=10)
        assert spec.n_clips == 2
        assert all(a.audio == a.visual == (a.class_id, a.class_id + 1) for a in spec.activities)

    def test_alignment_noise_degrades_nearest_prototype(self):
        dims = FeatureDims(d_a=16, d_t=8, s=4, c=16, l_q=2)
        bank = PrototypeBank(10, dims, seed=3)
        clean, noisy = [], []
        for seed in range(10):
            clean.append(generate_episode(sweep_spec(10, dims, 0.0), bank, np.random.default_rng(seed)))
            noisy.append(generate_episode(sweep_spec(10, dims, 3.0), bank, np.random.default_rng(seed)))
        clean_acc = nearest_prototype_accuracy(clean, bank)
        noisy_acc = nearest_prototype_accuracy(noisy, bank)
        assert clean_acc > 0.9
        assert clean_acc > noisy_acc


# =============================================================================
# Conjuntos y particiones
# =============================================================================

class TestDataset:

    @pytest.fixture
    def bank(self):
        return PrototypeBank(3, DIMS, seed=0)

    @pytest.fixture
    def dist(self):
        return EpisodeDistribution(n_classes=3, n_cues=10, dims=DIMS)

    def test_split_sizes(self):
        splits = split_indices(100, np.random.default_rng(0))
        assert [len(splits[k]) for k in ('train', 'val', 'test')] == [80, 10, 10]
        assert sorted(np.concatenate(list(splits.values())).tolist()) == list(range(100))

    def test_split_rounding_keeps_every_item(self):
        splits = split_indices(23, np.random.default_rng(0))
        assert sum(len(v) for v in splits.values()) == 23

    def test_sample_spec_respects_min_duration(self, dist):
        rng = np.random.default_rng(5)
        for seed in range(50):
            spec = sample_spec(dist, rng, seed)
            for act in spec.activities:
                for interval in (act.audio, act.visual):
                    if interval is not None:
                        assert interval[1] - interval[0] >= dist.min_duration

    def test_same_seed_same_hash(self, dist, bank):
        a = make_dataset(12, dist, np.random.default_rng(4), bank)
        b = make_dataset(12, dist, np.random.default_rng(4), bank)
        c = make_dataset(12, dist, np.random.default_rng(5), bank)
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != c.content_hash()

    def test_batches_cover_split(self, dist, bank):
        dataset = make_dataset(20, dist, np.random.default_rng(0), bank)
        seen = []
        for triple, labels, indices in dataset.batches('train', 6, np.random.default_rng(1)):
            assert triple.a.shape == (len(indices), 10, 8)
            assert triple.v.shape == (len(indices), 10, 4, 8)
            assert triple.t.shape == (len(indices), 2, 8)
            assert labels.dtype == np.int64
            seen.extend(indices.tolist())
        assert sorted(seen) == dataset.splits['train'].tolist()

    def test_labels_inside_vocab(self, dist, bank):
        dataset = make_dataset(30, dist, np.random.default_rng(0), bank)
        assert all(0 <= item.qa.answer_label < dataset.vocab.size for item in dataset.items)

    def test_category_counts(self, dist, bank):
        dataset = make_dataset(30, dist, np.random.default_rng(0), bank)
        counts = dataset.category_counts()
        assert counts['n'].sum() == 30
        assert set(counts['split']) <= {'train', 'val', 'test'}

    def test_needs_episodes(self, dist, bank):
        with pytest.raises(ValueError):
            make_dataset(0, dist, np.random.default_rng(0), bank)


# =============================================================================
# Ejemplos de referencia y re-derivación independiente
# =============================================================================

def brute_force_answer(spec, category, scope, class_id, vocab):
    """Recalcula la respuesta recorriendo las cues una a una"""
    active = {}
    for act in spec.activities:
        audio = np.zeros(spec.n_cues, dtype=bool)
        visual = np.zeros(spec.n_cues, dtype=bool)
        if act.audio is not None:
            audio[act.audio[0]:act.audio[1]] = True
        if act.visual is not None:
            visual[act.visual[0]:act.visual[1]] = True
        cues = {'A': audio, 'V': visual, 'AV': audio & visual}[scope]
        if cues.any():
            active[act.class_id] = int(np.argmax(cues))
    if category == 'existential':
        return vocab.YES if class_id in active else vocab.NO
    if category == 'counting':
        return vocab.count(len(active))
    first = sorted(active.items(), key=lambda kv: (kv[1], kv[0]))[0][0]
    return vocab.class_label(first)


class TestReferenceExamples:

    def test_counting_three_active_classes(self, vocab):
        spec = EpisodeSpec(n_classes=3, n_cues=10, dims=DIMS, activities=[
            ClassActivity(k, audio=(k, k + 3)) for k in range(3)
        ])
        assert answer_from_spec(spec, 'counting', 'A', -1, vocab) == vocab.count(3)

    def test_temporal_first_onset(self, vocab):
        spec = EpisodeSpec(n_classes=3, n_cues=10, dims=DIMS, activities=[
            ClassActivity(1, visual=(2, 6)), ClassActivity(2, visual=(5, 9)),
        ])
        assert answer_from_spec(spec, 'temporal', 'V', -1, vocab) == vocab.class_label(1)

    def test_dataset_answers_rederived(self):
        dist = EpisodeDistribution(n_classes=3, n_cues=10, dims=DIMS)
        dataset = make_dataset(400, dist, np.random.default_rng(9), PrototypeBank(3, DIMS, seed=0))
        for item in dataset.items:
            qa = item.qa
            expected = brute_force_answer(item.episode.spec, qa.category, qa.scope, qa.class_id, dataset.vocab)
            assert qa.answer_label == expected

    def test_shared_cues_are_more_similar(self):
        dims = FeatureDims(d_a=16, d_t=8, s=4, c=16, l_q=2)
        bank = PrototypeBank(1, dims, seed=2, base_noise=0.1)
        spec = EpisodeSpec(n_classes=1, n_cues=8, dims=dims, activities=[
            ClassActivity(0, audio=(0, 5), visual=(3, 8)),
        ])
        episode = generate_episode(spec, bank, np.random.default_rng(0))

        def cosine(t):
            a, v = episode.audio[t], episode.visual[t].mean(axis=0)
            return abs(float(a @ v / (np.linalg.norm(a) * np.linalg.norm(v))))

        shared = [cosine(t) for t in (3, 4)]
        disjoint = [cosine(t) for t in (0, 1, 2, 5, 6, 7)]
        assert min(shared) > max(disjoint)

    def test_same_seed_bitwise_episode(self, example_spec):
        bank = PrototypeBank(3, DIMS, seed=0)
        a = generate_episode(example_spec, bank, np.random.default_rng(21))
        b = generate_episode(example_spec, bank, np.random.default_rng(21))
        for name in ('audio', 'visual', 'clip_queries'):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_empty_episode_is_background_noise(self):
        bank = PrototypeBank(3, DIMS, seed=0, base_noise=0.5)
        spec = EpisodeSpec(n_classes=3, n_cues=400, dims=DIMS, activities=[])
        episode = generate_episode(spec, bank, np.random.default_rng(0))
        assert abs(episode.audio.mean()) < 0.05
        assert abs(episode.audio.std() - 0.5) < 0.05
        assert abs(episode.visual.std() - 0.5) < 0.05

    def test_noise_sweep_is_monotone(self):
        dims = FeatureDims(d_a=16, d_t=8, s=4, c=16, l_q=2)
        bank = PrototypeBank(10, dims, seed=3)
        accuracies = []
        for noise in (0.0, 1.0, 3.0):
            episodes = [generate_episode(sweep_spec(10, dims, noise), bank, np.random.default_rng(seed))
                        for seed in range(20)]
            accuracies.append(nearest_prototype_accuracy(episodes, bank))
        assert accuracies[0] >= accuracies[1] >= accuracies[2]
        assert accuracies[0] > accuracies[2]
