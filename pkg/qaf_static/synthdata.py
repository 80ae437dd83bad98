"""Synthetic trials with a spoof artifact planted at one quantizer level.

The ground-truth codec is a quantizer stack whose level-q codewords are
distinct hypercube vertices scaled by ``0.5 ** (q - 1)``. With that scale
ratio every coordinate of the residual left below level q is smaller than the
level-q half spacing, so greedy residual encoding of a noiseless latent
recovers the planted codes exactly.

Bona fide trials draw their artifact-level codes from the lower half of that
level's codebook. Spoof frames switch to the upper half with probability
``artifact_strength``. Every other level is drawn uniformly.

The SSL-like stream is a time-smoothed random linear view of the latent plus
noise. The views are blind to the offset between the two half-codebook means,
so the class cue reaches the SSL stream only through second-order structure
that the smoothing and the noise wash out.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import container
from ._inputs import option, validate_fields
from .errors import ConfigError, FormatError
from .metrics import BONA_FIDE, SPOOF, ScoredTrial
from .rvq import QuantizerStack, rvq_decode, rvq_encode

logger = logging.getLogger(__name__)

LEVEL_DECAY = 0.5
SPLITS = ('train', 'dev', 'eval')


@dataclass
class SynthConfig:
    """Shape and difficulty of a planted-artifact dataset."""

    seed: int = option(
        0, 'Seed of the whole dataset. Each split uses its own spawned stream.',
        spec={'type': 'integer', 'minimum': 0}
    )
    num_levels: int = option(
        4, 'Number of quantizer levels Q of the ground-truth codec.',
        spec={'type': 'integer', 'minimum': 1}
    )
    codebook_size: int = option(
        8, 'Codewords per level K. Must be even and at least 4 so that every '
        'level splits into a bona fide and a spoof half.',
        spec={'type': 'integer', 'minimum': 4}
    )
    codec_dim: int = option(
        8, 'Dimension of the codec latent.', spec={'type': 'integer', 'minimum': 1}
    )
    ssl_dim: int = option(
        16, 'Dimension of every SSL layer.', spec={'type': 'integer', 'minimum': 1}
    )
    ssl_layers: int = option(
        3, 'Number of SSL layers L.', spec={'type': 'integer', 'minimum': 1}
    )
    min_frames: int = option(
        20, 'Shortest trial in frames.', spec={'type': 'integer', 'minimum': 1}
    )
    max_frames: int = option(
        40, 'Longest trial in frames.', spec={'type': 'integer', 'minimum': 1}
    )
    train_trials: int = option(
        400, 'Train trials per class.', spec={'type': 'integer', 'minimum': 1}
    )
    dev_trials: int = option(
        100, 'Dev trials per class.', spec={'type': 'integer', 'minimum': 1}
    )
    eval_trials: int = option(
        200, 'Eval trials per class.', spec={'type': 'integer', 'minimum': 1}
    )
    artifact_level: int = option(
        2, 'Quantizer level q* that carries the spoof artifact (1-based). '
        '0 disables the artifact so both classes are identically distributed.',
        spec={'type': 'integer', 'minimum': 0}
    )
    artifact_strength: float = option(
        0.5, 'Probability that a spoof frame takes its artifact-level code from '
        'the spoof half of the codebook. 1 substitutes every frame.',
        spec={'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1}
    )
    ssl_smoothing: int = option(
        4, 'Moving-average window (frames) of the SSL stream.',
        spec={'type': 'integer', 'minimum': 1}
    )
    noise: float = option(
        0.05, 'Standard deviation of isotropic noise added to the codec latent.',
        spec={'type': 'number', 'minimum': 0}
    )
    ssl_noise: float = option(
        0.5, 'Standard deviation of noise added to every SSL layer.',
        spec={'type': 'number', 'minimum': 0}
    )

    def __post_init__(self):
        validate_fields(self, 'data')
        if self.codebook_size % 2:
            raise ConfigError(f'data.codebook_size must be even, got {self.codebook_size}')
        if self.codec_dim < 63 and self.codebook_size > 2 ** self.codec_dim:
            raise ConfigError(
                f'data.codebook_size {self.codebook_size} exceeds the '
                f'{2 ** self.codec_dim} hypercube vertices of data.codec_dim'
            )
        if self.artifact_level > self.num_levels:
            raise ConfigError(
                f'data.artifact_level {self.artifact_level} > data.num_levels '
                f'{self.num_levels}'
            )
        if self.min_frames > self.max_frames:
            raise ConfigError('data.min_frames must not exceed data.max_frames')

    def trials_per_class(self, split):
        return getattr(self, f'{split}_trials')


class Trial(NamedTuple):
    """One labelled trial: ``(L, T, D_ssl)`` SSL layers and a ``(T, D_codec)`` latent."""

    ssl_layers: np.ndarray
    codec_latent: np.ndarray
    label: int


class SynthDataset(NamedTuple):
    train: List[Trial]
    dev: List[Trial]
    eval: List[Trial]
    stack: QuantizerStack


def _hypercube_vertices(rng, k, dim):
    """``k`` distinct vertices of ``{-1, 1} ** dim``."""
    if dim <= 30:
        codes = rng.choice(2 ** dim, size=k, replace=False)
        bits = (codes[:, None] >> np.arange(dim)) & 1
        return 2.0 * bits - 1.0
    while True:
        signs = rng.choice([-1.0, 1.0], size=(k, dim))
        if len(np.unique(signs, axis=0)) == k:
            return signs


def ground_truth_stack(cfg, rng):
    levels = [
        LEVEL_DECAY ** q * _hypercube_vertices(rng, cfg.codebook_size, cfg.codec_dim)
        for q in range(cfg.num_levels)
    ]
    if cfg.artifact_level:
        # lower half lies below the upper half along a random direction
        direction = rng.standard_normal(cfg.codec_dim)
        artifact = levels[cfg.artifact_level - 1]
        levels[cfg.artifact_level - 1] = artifact[np.argsort(artifact @ direction, kind='stable')]
    return QuantizerStack.from_array(np.stack(levels))


def _sample_codes(cfg, rng, frames, label):
    k = cfg.codebook_size
    half = k // 2
    codes = rng.integers(0, k, size=(frames, cfg.num_levels))
    if cfg.artifact_level:
        col = cfg.artifact_level - 1
        codes[:, col] = rng.integers(0, half, size=frames)
        if label == SPOOF:
            planted = rng.random(frames) < cfg.artifact_strength
            spoof_codes = rng.integers(half, k, size=frames)
            codes[:, col] = np.where(planted, spoof_codes, codes[:, col])
    return codes


def _make_trial(cfg, rng, stack, maps, label):
    frames = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
    codes = _sample_codes(cfg, rng, frames, label)
    latent = rvq_decode(codes, stack) + cfg.noise * rng.standard_normal((frames, cfg.codec_dim))
    views = np.einsum('tc,lcs->lts', latent, maps)
    smoothed = uniform_filter1d(views, size=cfg.ssl_smoothing, axis=1, mode='nearest')
    ssl = smoothed + cfg.ssl_noise * rng.standard_normal(smoothed.shape)
    return Trial(ssl, latent, label)


def _make_split(cfg, rng, stack, maps, per_class):
    labels = [BONA_FIDE] * per_class + [SPOOF] * per_class
    trials = [_make_trial(cfg, rng, stack, maps, label) for label in labels]
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def artifact_offset(stack, artifact_level):
    """Mean of the spoof half minus mean of the bona fide half at ``artifact_level``."""
    codewords = stack.to_array()[artifact_level - 1]
    half = stack.codebook_size // 2
    return codewords[half:].mean(axis=0) - codewords[:half].mean(axis=0)


def ssl_maps(cfg, stack, rng):
    """Random ``(L, D_codec, D_ssl)`` views with the artifact offset projected out."""
    maps = rng.standard_normal((cfg.ssl_layers, cfg.codec_dim, cfg.ssl_dim))
    maps /= np.sqrt(cfg.codec_dim)
    if cfg.artifact_level:
        offset = artifact_offset(stack, cfg.artifact_level)
        energy = offset @ offset
        if energy > 0:
            blind = np.eye(cfg.codec_dim) - np.outer(offset, offset) / energy
            maps = np.einsum('ij,ljs->lis', blind, maps)
    return maps


def gen_dataset(cfg):
    """Generate class-balanced train/dev/eval splits and the ground-truth codec."""
    streams = np.random.SeedSequence(cfg.seed).spawn(1 + len(SPLITS))
    codec_rng = np.random.default_rng(streams[0])
    stack = ground_truth_stack(cfg, codec_rng)
    maps = ssl_maps(cfg, stack, codec_rng)
    splits = {}
    for name, stream in zip(SPLITS, streams[1:]):
        rng = np.random.default_rng(stream)
        splits[name] = _make_split(cfg, rng, stack, maps, cfg.trials_per_class(name))
        logger.info('generated %s split: %d trials', name, len(splits[name]))
    return SynthDataset(splits['train'], splits['dev'], splits['eval'], stack)


def oracle_scores(trials, stack, artifact_level):
    """Fraction of frames whose re-encoded artifact-level code is in the bona fide half."""
    half = stack.codebook_size // 2
    scored = []
    for trial in trials:
        indices, _ = rvq_encode(trial.codec_latent, stack)
        scored.append(
            ScoredTrial(float(np.mean(indices[:, artifact_level - 1] < half)), trial.label)
        )
    return scored


def write_trials(trials, path):
    """Store trials in a QAF1 container (values as float32)."""
    records = OrderedDict()
    records['trials.count'] = np.array(len(trials), dtype=np.uint32)
    for i, trial in enumerate(trials):
        records[f'trial{i:05d}.ssl'] = np.asarray(trial.ssl_layers, dtype=np.float32)
        records[f'trial{i:05d}.latent'] = np.asarray(trial.codec_latent, dtype=np.float32)
        records[f'trial{i:05d}.label'] = np.array(trial.label, dtype=np.uint32)
    return container.write_records(path, records)


def read_trials(path):
    """Read trials written by ``write_trials`` as float64 arrays."""
    records = container.read_records(path)
    count = records.get('trials.count')
    if count is None or count.shape != ():
        raise FormatError(f'{path}: missing trials.count header')
    count = int(count)
    if len(records) != 1 + 3 * count:
        raise FormatError(f'{path}: header announces {count} trials, found '
                          f'{len(records) - 1} trial records')
    trials = []
    shape = None
    for i in range(count):
        try:
            ssl = records[f'trial{i:05d}.ssl']
            latent = records[f'trial{i:05d}.latent']
            label = records[f'trial{i:05d}.label']
        except KeyError as missing:
            raise FormatError(f'{path}: missing record {missing}') from None
        if ssl.ndim != 3 or latent.ndim != 2 or label.shape != ():
            raise FormatError(f'{path}: trial {i} has malformed record ranks')
        if ssl.shape[1] != latent.shape[0] or ssl.shape[1] < 1:
            raise FormatError(f'{path}: trial {i} streams disagree on frame count')
        trial_shape = (ssl.shape[0], ssl.shape[2], latent.shape[1])
        if shape is None:
            shape = trial_shape
        elif trial_shape != shape:
            raise FormatError(f'{path}: trial {i} shape {trial_shape} != trial 0 {shape}')
        if int(label) not in (SPOOF, BONA_FIDE):
            raise FormatError(f'{path}: trial {i} has label {int(label)}')
        if not (np.all(np.isfinite(ssl)) and np.all(np.isfinite(latent))):
            raise FormatError(f'{path}: trial {i} has non-finite values')
        trials.append(Trial(ssl.astype(np.float64), latent.astype(np.float64), int(label)))
    return trials
