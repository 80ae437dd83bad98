import math

import numpy as np
import pytest

from qaf_static.errors import NumericalError, ShapeError
from qaf_static.metrics import (
    BONA_FIDE, SPOOF, ScoredTrial, compute_eer, roc_curve, write_roc_csv
)


def trials_from(bona, spoof):
    return [ScoredTrial(s, BONA_FIDE) for s in bona] + [ScoredTrial(s, SPOOF) for s in spoof]


def brute_force_eer(bona, spoof):
    """Count-based operating points and a linear crossing, written with loops."""
    thresholds = [-math.inf] + sorted(set(bona) | set(spoof)) + [math.inf]
    points = []
    for t in thresholds:
        far = sum(1 for s in spoof if s >= t) / len(spoof)
        frr = sum(1 for b in bona if b < t) / len(bona)
        points.append((far, frr))
    for (far0, frr0), (far1, frr1) in zip(points, points[1:]):
        if far0 == frr0:
            return far0
        gap0, gap1 = far0 - frr0, far1 - frr1
        if gap1 <= 0:
            return far0 + gap0 / (gap0 - gap1) * (far1 - far0)
    raise AssertionError('no crossing')


def test_hand_derived_example():
    eer, threshold = compute_eer(trials_from([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]))
    assert eer == 1 / 3
    assert threshold == 0.7


def test_identical_scores_give_half():
    eer, threshold = compute_eer(trials_from([0.2] * 4, [0.2] * 3))
    assert eer == 0.5
    assert threshold == 0.2


def test_perfect_separation():
    eer, _ = compute_eer(trials_from([1.0, 2.0], [-1.0, 0.0]))
    assert eer == 0.0


def test_inverted_scores_are_not_flipped():
    eer, _ = compute_eer(trials_from([-1.0, 0.0], [1.0, 2.0]))
    assert eer == 1.0


@pytest.mark.parametrize('seed', range(200))
def test_matches_brute_force_sweep(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [SPOOF, BONA_FIDE]
    scores = np.round(rng.standard_normal(n), 1)
    bona = [float(s) for s, lab in zip(scores, labels) if lab == BONA_FIDE]
    spoof = [float(s) for s, lab in zip(scores, labels) if lab == SPOOF]
    eer, _ = compute_eer(trials_from(bona, spoof))
    assert eer == pytest.approx(brute_force_eer(bona, spoof), abs=1e-12)
    assert 0.0 <= eer <= 1.0


@pytest.mark.parametrize('transform', [
    lambda s: 3.0 * s + 1.0, np.exp, np.arctan, lambda s: s ** 3,
])
@pytest.mark.parametrize('seed', range(10))
def test_monotone_transforms_keep_eer(seed, transform):
    rng = np.random.default_rng(seed)
    bona, spoof = rng.normal(0.5, 1.0, 15), rng.normal(-0.5, 1.0, 12)
    expected, _ = compute_eer(trials_from(bona, spoof))
    eer, _ = compute_eer(trials_from(transform(bona), transform(spoof)))
    assert eer == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('seed', range(10))
def test_negated_scores_with_flipped_labels_keep_eer(seed):
    rng = np.random.default_rng(100 + seed)
    bona, spoof = rng.normal(0.3, 1.0, 9), rng.normal(-0.3, 1.0, 14)
    expected, _ = compute_eer(trials_from(bona, spoof))
    eer, _ = compute_eer(trials_from(-spoof, -bona))
    assert eer == pytest.approx(expected, abs=1e-12)


def test_roc_has_sentinels_and_one_point_per_score():
    points = roc_curve(trials_from([0.9, 0.3, 0.3], [0.1, 0.9]))
    assert [p.threshold for p in points] == [-math.inf, 0.1, 0.3, 0.9, math.inf]
    assert (points[0].far, points[0].frr) == (1.0, 0.0)
    assert (points[-1].far, points[-1].frr) == (0.0, 1.0)
    fars = [p.far for p in points]
    frrs = [p.frr for p in points]
    assert fars == sorted(fars, reverse=True)
    assert frrs == sorted(frrs)


def test_needs_both_classes():
    with pytest.raises(ShapeError):
        compute_eer(trials_from([0.1, 0.2], []))
    with pytest.raises(ShapeError):
        compute_eer([ScoredTrial(0.1, 2), ScoredTrial(0.2, SPOOF)])


def test_rejects_non_finite_scores():
    with pytest.raises(NumericalError):
        compute_eer(trials_from([float('nan')], [0.0]))


def test_write_roc_csv(tmp_path):
    points = roc_curve(trials_from([1.0], [0.0]))
    path = write_roc_csv(points, tmp_path / 'roc' / 'roc.csv')
    data = path.read_bytes()
    assert b'\r' not in data
    lines = data.decode().splitlines()
    assert lines[0] == 'threshold,far,frr'
    assert lines[1] == '-inf,1.0,0.0'
    assert len(lines) == 1 + len(points)
