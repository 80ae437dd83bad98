"""End-to-end experiment checks on the default planted-artifact dataset.

These train full models and take minutes; run them with ``pytest -m slow``.
"""
import statistics

import numpy as np
import pytest

from qaf_static.detector import ModelConfig, init_detector
from qaf_static.synthdata import SynthConfig, gen_dataset
from qaf_static.training import TrainConfig, encode_trials, evaluate_eer, train

pytestmark = pytest.mark.slow

SEEDS = range(5)
TRAIN = TrainConfig(learning_rate=0.01, max_epochs=40, patience=5)


def fit(data, seed, **model):
    cfg = ModelConfig(**model)
    num_layers, _, ssl_dim = data.train[0].ssl_layers.shape
    detector = init_detector(cfg, data.stack, ssl_dim, num_layers, seed=seed)
    train_set = encode_trials(data.train, data.stack)
    dev_set = encode_trials(data.dev, data.stack)
    detector, report = train(
        detector, train_set, dev_set, TrainConfig(**dict(vars(TRAIN), seed=seed))
    )
    return report, evaluate_eer(detector, encode_trials(data.eval, data.stack))


def test_static_weights_attend_to_the_artifact_level():
    hits = 0
    for seed in SEEDS:
        cfg = SynthConfig(seed=seed)
        report, _ = fit(gen_dataset(cfg), seed, method='qaf_static')
        contributions = report.quantizer_contributions()
        level = cfg.artifact_level - 1
        if contributions[level] > 1 / cfg.num_levels + 0.10 \
                and int(np.argmax(contributions)) == level:
            hits += 1
    assert hits >= 4


def test_method_ordering_and_ssl_ablation():
    results = {'mean_pool': [], 'static_frozen': [], 'static_trainable': [], 'ssl_only': []}
    for seed in SEEDS:
        data = gen_dataset(SynthConfig(seed=seed))
        results['mean_pool'].append(fit(data, seed, method='mean_pool', codec_trainable=False)[1])
        results['static_frozen'].append(fit(data, seed, codec_trainable=False)[1])
        results['static_trainable'].append(fit(data, seed)[1])
        results['ssl_only'].append(fit(data, seed, stream='ssl_only')[1])
    median = {name: statistics.median(eers) for name, eers in results.items()}
    assert median['static_trainable'] <= median['static_frozen'] <= median['mean_pool']
    assert median['static_trainable'] <= 0.05
    assert median['ssl_only'] >= 0.15


def test_disabled_artifact_stays_near_chance():
    data = gen_dataset(SynthConfig(artifact_level=0, train_trials=200))
    _, eer = fit(data, 0)
    assert eer > 0.3
