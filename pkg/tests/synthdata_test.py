from collections import OrderedDict

import numpy as np
import pytest

from qaf_static import container
from qaf_static.errors import ConfigError, FormatError
from qaf_static.metrics import BONA_FIDE, SPOOF, ScoredTrial, compute_eer
from qaf_static.rvq import embed_level, rvq_decode, rvq_encode
from qaf_static.synthdata import (
    SynthConfig, artifact_offset, gen_dataset, oracle_scores, read_trials, ssl_maps,
    write_trials
)

SMALL = dict(
    num_levels=3, codebook_size=6, codec_dim=4, ssl_dim=5, ssl_layers=2,
    min_frames=5, max_frames=9, train_trials=8, dev_trials=4, eval_trials=4,
    artifact_strength=1.0
)


def small_config(**overrides):
    return SynthConfig(**dict(SMALL, **overrides))


def test_splits_are_balanced():
    data = gen_dataset(small_config())
    for split, per_class in (('train', 8), ('dev', 4), ('eval', 4)):
        labels = [t.label for t in getattr(data, split)]
        assert labels.count(BONA_FIDE) == per_class
        assert labels.count(SPOOF) == per_class


def test_trial_shapes():
    data = gen_dataset(small_config())
    for trial in data.train:
        frames = trial.codec_latent.shape[0]
        assert 5 <= frames <= 9
        assert trial.codec_latent.shape == (frames, 4)
        assert trial.ssl_layers.shape == (2, frames, 5)
    assert data.stack.to_array().shape == (3, 6, 4)


def test_level_scale_halves():
    stack = gen_dataset(small_config()).stack.to_array()
    for q in range(3):
        np.testing.assert_array_equal(np.abs(stack[q]), 0.5 ** q)
        assert len(np.unique(stack[q], axis=0)) == 6


def test_noiseless_latents_are_recovered_by_greedy_encoding():
    data = gen_dataset(small_config(noise=0.0))
    for trial in data.train + data.eval:
        indices, norms = rvq_encode(trial.codec_latent, data.stack)
        np.testing.assert_array_equal(rvq_decode(indices, data.stack), trial.codec_latent)
        assert np.all(norms[:, -1] == 0.0)


def test_artifact_level_codes_follow_the_label():
    data = gen_dataset(small_config(noise=0.0, artifact_level=2))
    for trial in data.train:
        codes = rvq_encode(trial.codec_latent, data.stack)[0][:, 1]
        if trial.label == BONA_FIDE:
            assert np.all(codes < 3)
        else:
            assert np.all(codes >= 3)


def test_partial_artifact_strength_mixes_codes():
    data = gen_dataset(small_config(noise=0.0, artifact_strength=0.5, train_trials=40))
    planted = [
        np.mean(rvq_encode(t.codec_latent, data.stack)[0][:, 1] >= 3)
        for t in data.train if t.label == SPOOF
    ]
    assert 0.3 < np.mean(planted) < 0.7


def test_default_strength_leaves_clean_spoof_frames():
    assert SynthConfig().artifact_strength == 0.5
    overrides = {k: v for k, v in SMALL.items() if k not in ('artifact_strength', 'train_trials')}
    data = gen_dataset(SynthConfig(noise=0.0, train_trials=20, **overrides))
    for trial in data.train:
        if trial.label == SPOOF:
            continue
        assert np.all(rvq_encode(trial.codec_latent, data.stack)[0][:, 1] < 3)
    spoof_codes = np.concatenate([
        rvq_encode(t.codec_latent, data.stack)[0][:, 1]
        for t in data.train if t.label == SPOOF
    ])
    assert np.any(spoof_codes < 3) and np.any(spoof_codes >= 3)


def test_oracle_separates_noiseless_classes():
    cfg = small_config(noise=0.0)
    data = gen_dataset(cfg)
    scored = oracle_scores(data.eval, data.stack, cfg.artifact_level)
    for trial in scored:
        assert trial.score == (1.0 if trial.label == BONA_FIDE else 0.0)
    assert compute_eer(scored)[0] == 0.0


def test_disabled_artifact_keeps_classes_alike():
    data = gen_dataset(small_config(noise=0.0, artifact_level=0, train_trials=30))
    spoof_codes = np.concatenate([
        rvq_encode(t.codec_latent, data.stack)[0][:, 1]
        for t in data.train if t.label == SPOOF
    ])
    assert np.any(spoof_codes < 3) and np.any(spoof_codes >= 3)


def test_ssl_views_are_blind_to_the_artifact_offset():
    cfg = small_config()
    stack = gen_dataset(cfg).stack
    offset = artifact_offset(stack, cfg.artifact_level)
    assert np.linalg.norm(offset) > 0
    maps = ssl_maps(cfg, stack, np.random.default_rng(3))
    assert maps.shape == (2, 4, 5)
    np.testing.assert_allclose(np.einsum('c,lcs->ls', offset, maps), 0.0, atol=1e-12)


def test_disabled_artifact_keeps_random_ssl_views():
    cfg = small_config(artifact_level=0)
    stack = gen_dataset(cfg).stack
    maps = ssl_maps(cfg, stack, np.random.default_rng(3))
    expected = np.random.default_rng(3).standard_normal((2, 4, 5)) / 2.0
    np.testing.assert_array_equal(maps, expected)


def _linear_dev_eer(train_features, train_labels, dev_features, dev_labels):
    design = np.column_stack([train_features, np.ones(len(train_features))])
    targets = np.where(np.asarray(train_labels) == BONA_FIDE, 1.0, -1.0)
    weights = np.linalg.lstsq(design, targets, rcond=None)[0]
    scores = np.column_stack([dev_features, np.ones(len(dev_features))]) @ weights
    return compute_eer([ScoredTrial(float(s), y) for s, y in zip(scores, dev_labels)])[0]


def test_ssl_stream_is_weaker_than_artifact_level_codes():
    cfg = SynthConfig(seed=0, train_trials=100, dev_trials=50)
    data = gen_dataset(cfg)

    def ssl_features(trials):
        return np.stack([t.ssl_layers.mean(axis=1).ravel() for t in trials])

    def codec_features(trials):
        return np.stack([
            embed_level(rvq_encode(t.codec_latent, data.stack)[0], data.stack,
                        cfg.artifact_level).mean(axis=0)
            for t in trials
        ])

    train_labels = [t.label for t in data.train]
    dev_labels = [t.label for t in data.dev]
    ssl_eer = _linear_dev_eer(
        ssl_features(data.train), train_labels, ssl_features(data.dev), dev_labels
    )
    codec_eer = _linear_dev_eer(
        codec_features(data.train), train_labels, codec_features(data.dev), dev_labels
    )
    assert codec_eer < 0.1
    assert ssl_eer > 0.25
    assert ssl_eer > codec_eer


def test_generation_is_deterministic(tmp_path):
    a = write_trials(gen_dataset(small_config()).dev, tmp_path / 'a.qaf')
    b = write_trials(gen_dataset(small_config()).dev, tmp_path / 'b.qaf')
    assert a.read_bytes() == b.read_bytes()


def test_splits_use_independent_streams():
    first = gen_dataset(small_config(train_trials=8))
    second = gen_dataset(small_config(train_trials=11))
    for x, y in zip(first.dev, second.dev):
        np.testing.assert_array_equal(x.codec_latent, y.codec_latent)
    np.testing.assert_array_equal(first.stack.to_array(), second.stack.to_array())


def test_seed_changes_data():
    first = gen_dataset(small_config(seed=1)).train[0].codec_latent
    second = gen_dataset(small_config(seed=2)).train[0].codec_latent
    assert first.shape != second.shape or not np.array_equal(first, second)


def test_trials_round_trip_at_float32(tmp_path):
    trials = gen_dataset(small_config()).eval
    loaded = read_trials(write_trials(trials, tmp_path / 'eval.qaf'))
    assert len(loaded) == len(trials)
    for original, restored in zip(trials, loaded):
        assert restored.label == original.label
        np.testing.assert_array_equal(
            restored.ssl_layers, original.ssl_layers.astype(np.float32)
        )
        assert restored.codec_latent.dtype == np.float64


def test_read_trials_rejects_inconsistent_files(tmp_path):
    records = OrderedDict([
        ('trials.count', np.array(2, dtype=np.uint32)),
        ('trial00000.ssl', np.zeros((1, 3, 2), dtype=np.float32)),
        ('trial00000.latent', np.zeros((3, 2), dtype=np.float32)),
        ('trial00000.label', np.array(1, dtype=np.uint32)),
    ])
    path = container.write_records(tmp_path / 'bad.qaf', records)
    with pytest.raises(FormatError):
        read_trials(path)
    records['trials.count'] = np.array(1, dtype=np.uint32)
    records['trial00000.latent'] = np.zeros((4, 2), dtype=np.float32)
    path = container.write_records(tmp_path / 'frames.qaf', records)
    with pytest.raises(FormatError, match='frame count'):
        read_trials(path)


def test_empty_split_round_trips(tmp_path):
    path = write_trials([], tmp_path / 'empty.qaf')
    assert read_trials(path) == []
    assert int(container.read_records(path)['trials.count']) == 0


@pytest.mark.parametrize('bad', [np.nan, np.inf, -np.inf])
def test_read_trials_rejects_non_finite_values(tmp_path, bad):
    trial = gen_dataset(small_config()).dev[0]
    latent = trial.codec_latent.copy()
    latent[0, 0] = bad
    path = write_trials([trial._replace(codec_latent=latent)], tmp_path / 'bad.qaf')
    with pytest.raises(FormatError, match='non-finite'):
        read_trials(path)


@pytest.mark.parametrize('overrides', [
    {'codebook_size': 5},
    {'codebook_size': 2},
    {'codec_dim': 2, 'codebook_size': 6},
    {'artifact_level': 4},
    {'artifact_strength': 0.0},
    {'artifact_strength': 1.5},
    {'min_frames': 10, 'max_frames': 9},
    {'noise': -0.1},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        small_config(**overrides)
