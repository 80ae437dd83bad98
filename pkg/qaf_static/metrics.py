"""Equal error rate and ROC over scored trials.

Polarity is fixed: a higher score means bona fide and a trial is accepted
iff ``score >= threshold``. Scores are never flipped to "fix" a detector.
"""
import csv
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ShapeError

SPOOF = 0
BONA_FIDE = 1


class ScoredTrial(NamedTuple):
    score: float
    label: int


class RocPoint(NamedTuple):
    threshold: float
    far: float
    frr: float


def _split(trials):
    scores = np.array([float(t.score) for t in trials], dtype=np.float64)
    labels = np.array([int(t.label) for t in trials], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise NumericalError('trial scores must be finite', stage='metrics')
    if np.any((labels != SPOOF) & (labels != BONA_FIDE)):
        raise ShapeError('trial labels must be 0 (spoof) or 1 (bona fide)')
    bona = np.sort(scores[labels == BONA_FIDE])
    spoof = np.sort(scores[labels == SPOOF])
    if not len(bona) or not len(spoof):
        raise ShapeError(
            f'EER needs both classes, got {len(bona)} bona fide and {len(spoof)} spoof'
        )
    return bona, spoof


def roc_curve(trials):
    """Operating points in increasing threshold order.

    One point per distinct score plus the sentinels ``-inf`` (accept all) and
    ``+inf`` (reject all). FAR is the fraction of spoof trials accepted, FRR
    the fraction of bona fide trials rejected.
    """
    bona, spoof = _split(trials)
    thresholds = np.concatenate(
        [[-np.inf], np.unique(np.concatenate([bona, spoof])), [np.inf]]
    )
    frr = np.searchsorted(bona, thresholds, side='left') / len(bona)
    far = (len(spoof) - np.searchsorted(spoof, thresholds, side='left')) / len(spoof)
    return [RocPoint(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr)]


def compute_eer(trials):
    """Equal error rate by linear interpolation on the ROC.

    Returns:
        A tuple ``(eer, threshold)``. The threshold of an interpolated crossing
        is interpolated the same way; when one end of the bracket is an
        infinite sentinel the finite end is reported.
    """
    points = roc_curve(trials)
    for i, point in enumerate(points):
        if point.frr == point.far:
            return point.far, point.threshold
        if point.frr > point.far:
            break
    lo, hi = points[i - 1], points[i]
    gap_lo = lo.far - lo.frr
    gap_hi = hi.far - hi.frr
    weight = gap_lo / (gap_lo - gap_hi)
    eer = lo.far + weight * (hi.far - lo.far)
    if np.isinf(lo.threshold):
        threshold = hi.threshold
    elif np.isinf(hi.threshold):
        threshold = lo.threshold
    else:
        threshold = lo.threshold + weight * (hi.threshold - lo.threshold)
    return float(eer), float(threshold)


def write_roc_csv(points, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as outf:
        writer = csv.writer(outf, lineterminator='\n')
        writer.writerow(['threshold', 'far', 'frr'])
        for point in points:
            writer.writerow([repr(point.threshold), repr(point.far), repr(point.frr)])
    return path
