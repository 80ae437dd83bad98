"""Residual vector quantization.

A ``QuantizerStack`` is an ordered cascade of Q codebooks of K codewords in D
dimensions. Encoding walks the cascade greedily: every level quantizes the
residual left by the previous one, and the reconstruction is the sum of the
selected codewords.

Feature sequences are plain ``(T, D)`` float64 arrays and code indices are
``(T, Q)`` integer arrays.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Codebook:
    """One quantizer level: a ``(K, D)`` matrix of codewords."""

    codewords: np.ndarray

    def __post_init__(self):
        words = np.array(self.codewords, dtype=np.float64)
        if words.ndim != 2 or words.shape[0] < 1 or words.shape[1] < 1:
            raise ShapeError(f'codebook must be a non-empty KxD matrix, got {words.shape}')
        if not np.all(np.isfinite(words)):
            raise NumericalError('codebook has non-finite entries', stage='codebook')
        words.flags.writeable = False
        object.__setattr__(self, 'codewords', words)

    @property
    def size(self):
        return self.codewords.shape[0]

    @property
    def dim(self):
        return self.codewords.shape[1]


@dataclass(frozen=True)
class QuantizerStack:
    """Ordered list of codebooks that share K and D. Immutable once built."""

    levels: Tuple[Codebook, ...]

    def __post_init__(self):
        levels = tuple(
            lvl if isinstance(lvl, Codebook) else Codebook(lvl) for lvl in self.levels
        )
        if not levels:
            raise ShapeError('a quantizer stack needs at least one level')
        shape = levels[0].codewords.shape
        for q, lvl in enumerate(levels, 1):
            if lvl.codewords.shape != shape:
                raise ShapeError(
                    f'level {q} has shape {lvl.codewords.shape}, level 1 has {shape}'
                )
        object.__setattr__(self, 'levels', levels)

    @classmethod
    def from_array(cls, codewords):
        """Build a stack from a ``(Q, K, D)`` array."""
        codewords = np.asarray(codewords, dtype=np.float64)
        if codewords.ndim != 3:
            raise ShapeError(f'expected a QxKxD array, got shape {codewords.shape}')
        return cls(tuple(Codebook(level) for level in codewords))

    def to_array(self):
        """Return the codewords as a fresh ``(Q, K, D)`` array."""
        return np.stack([lvl.codewords for lvl in self.levels])

    @property
    def num_levels(self):
        return len(self.levels)

    @property
    def codebook_size(self):
        return self.levels[0].size

    @property
    def dim(self):
        return self.levels[0].dim


def _check_sequence(z, dim, stage):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f'{stage}: expected a TxD feature sequence, got shape {z.shape}')
    if z.shape[0] < 1:
        raise ShapeError(f'{stage}: empty feature sequence')
    if z.shape[1] != dim:
        raise ShapeError(f'{stage}: sequence dim {z.shape[1]} != stack dim {dim}')
    if not np.all(np.isfinite(z)):
        raise NumericalError('input sequence has non-finite entries', stage=stage)
    return z


def _check_indices(indices, stack, stage):
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != stack.num_levels:
        raise ShapeError(
            f'{stage}: expected Tx{stack.num_levels} code indices, got {indices.shape}'
        )
    if not np.issubdtype(indices.dtype, np.integer):
        raise ShapeError(f'{stage}: code indices must be integers, got {indices.dtype}')
    if indices.size and (indices.min() < 0 or indices.max() >= stack.codebook_size):
        raise ShapeError(
            f'{stage}: code index out of range [0, {stack.codebook_size})'
        )
    return indices


def _nearest(residual, codewords):
    """Index of the nearest codeword per row; ties go to the lowest index."""
    diff = residual[:, None, :] - codewords[None, :, :]
    dist = np.einsum('tkd,tkd->tk', diff, diff)
    return np.argmin(dist, axis=1)


def _residual_cascade(z, stack):
    """Greedy encode keeping every residual: ``(T, Q)`` indices, ``(Q+1, T, D)``."""
    residuals = np.empty((stack.num_levels + 1,) + z.shape)
    indices = np.empty((z.shape[0], stack.num_levels), dtype=np.int64)
    residuals[0] = z
    for q, level in enumerate(stack.levels):
        idx = _nearest(residuals[q], level.codewords)
        indices[:, q] = idx
        residuals[q + 1] = residuals[q] - level.codewords[idx]
    return indices, residuals


def rvq_encode(z, stack):
    """Encode a feature sequence with the residual recursion.

    Args:
        z: ``(T, D)`` feature sequence.
        stack: Quantizer stack with matching D.

    Returns:
        A tuple ``(indices, residual_norms)``. ``indices`` is ``(T, Q)``,
        ``residual_norms[t, q]`` is the norm of the residual after q levels
        (column 0 is the norm of the input frame).
    """
    z = _check_sequence(z, stack.dim, 'rvq_encode')
    indices, residuals = _residual_cascade(z, stack)
    return indices, np.linalg.norm(residuals, axis=2).T


def embed_level(indices, stack, q):
    """Codewords selected at level ``q`` (1-based), one row per frame."""
    indices = _check_indices(indices, stack, 'embed_level')
    if not 1 <= q <= stack.num_levels:
        raise ShapeError(f'embed_level: level {q} outside [1, {stack.num_levels}]')
    return stack.levels[q - 1].codewords[indices[:, q - 1]]


def rvq_decode(indices, stack):
    """Reconstruct ``(T, D)`` latents as the sum of the selected codewords."""
    indices = _check_indices(indices, stack, 'rvq_decode')
    out = np.zeros((indices.shape[0], stack.dim))
    for q in range(1, stack.num_levels + 1):
        out = out + embed_level(indices, stack, q)
    return out


def reconstruction_curve(z, stack):
    """Mean squared residual after 0..Q levels (entry 0 is the signal energy)."""
    z = _check_sequence(z, stack.dim, 'reconstruction_curve')
    _, residuals = _residual_cascade(z, stack)
    return np.einsum('qtd,qtd->qt', residuals, residuals).mean(axis=1)


def fit_level(frames, k, iters, rng, include_zero_codeword=True):
    """Lloyd k-means for one level.

    Codeword 0 is pinned to the zero vector when ``include_zero_codeword`` is
    set. Empty clusters are reseeded with the frames farthest from their
    current codeword, which keeps the objective non-increasing.

    Args:
        frames: ``(N, D)`` training vectors.
        k: Number of codewords.
        iters: Number of Lloyd iterations.
        rng: ``numpy.random.Generator`` used for initialization.
        include_zero_codeword: Reserve codeword 0 as the all-zeros vector.

    Returns:
        A tuple ``(codewords, objective)`` where ``objective[i]`` is the mean
        squared quantization error after iteration ``i``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n, dim = frames.shape
    if n < k:
        raise ShapeError(f'fit_level: {n} frames cannot support {k} codewords')
    offset = 1 if include_zero_codeword else 0
    free = k - offset

    distinct = np.unique(frames, axis=0)
    if include_zero_codeword:
        distinct = distinct[np.any(distinct != 0.0, axis=1)]
    if len(distinct) >= free:
        init = distinct[np.sort(rng.choice(len(distinct), size=free, replace=False))]
    else:
        logger.warning(
            'only %d distinct frames for %d free codewords; padding with duplicates',
            len(distinct), free
        )
        pool = distinct if len(distinct) else np.zeros((1, dim))
        init = pool[np.arange(free) % len(pool)]

    codewords = np.zeros((k, dim))
    codewords[offset:] = init
    objective = []
    for it in range(iters):
        assign = _nearest(frames, codewords)
        dist = np.sum((frames - codewords[assign]) ** 2, axis=1)
        counts = np.bincount(assign, minlength=k)
        taken = set()
        for j in range(offset, k):
            if counts[j]:
                codewords[j] = frames[assign == j].mean(axis=0)
                continue
            # empty cluster: move it onto the worst-served frame
            order = np.argsort(-dist, kind='stable')
            pick = next(i for i in order if i not in taken)
            taken.add(pick)
            codewords[j] = frames[pick]
            logger.debug('iteration %d: reseeded empty codeword %d', it, j)
        assign = _nearest(frames, codewords)
        objective.append(float(np.mean(np.sum((frames - codewords[assign]) ** 2, axis=1))))
        logger.debug('iteration %d: objective %.6g', it, objective[-1])
    return codewords, objective


def train_codebooks(data, num_levels, codebook_size, iters, seed,
                    include_zero_codeword=True):
    """Train a quantizer stack by level-by-level residual k-means.

    Level 1 is fit on the pooled raw frames; every later level is fit on the
    residuals left by the frozen levels before it.

    Args:
        data: List of ``(T, D)`` feature sequences.
        num_levels: Number of quantizer levels Q.
        codebook_size: Codewords per level K.
        iters: Lloyd iterations per level.
        seed: Seed for centroid initialization.
        include_zero_codeword: Reserve codeword 0 of every level as zero.

    Returns:
        The trained ``QuantizerStack``.
    """
    if iters < 1:
        raise ShapeError(f'train_codebooks: iters must be >= 1, got {iters}')
    if num_levels < 1 or codebook_size < 1:
        raise ShapeError('train_codebooks: Q and K must be >= 1')
    sequences = [np.asarray(seq, dtype=np.float64) for seq in data]
    if not sequences:
        raise ShapeError('train_codebooks: no training sequences')
    dims = {seq.shape[1] for seq in sequences if seq.ndim == 2}
    if len(dims) != 1 or any(seq.ndim != 2 for seq in sequences):
        raise ShapeError('train_codebooks: sequences must share one feature dim')
    frames = np.concatenate(sequences, axis=0)
    if not np.all(np.isfinite(frames)):
        raise NumericalError('training frames are non-finite', stage='train_codebooks')
    if frames.shape[0] < codebook_size:
        raise ShapeError(
            f'train_codebooks: {frames.shape[0]} frames < codebook size {codebook_size}'
        )

    rng = np.random.default_rng(seed)
    residual = frames
    levels = []
    for q in range(1, num_levels + 1):
        codewords, objective = fit_level(
            residual, codebook_size, iters, rng, include_zero_codeword
        )
        levels.append(Codebook(codewords))
        residual = residual - codewords[_nearest(residual, codewords)]
        logger.info(
            'level %d/%d: k-means objective %.6g -> %.6g', q, num_levels,
            objective[0], objective[-1]
        )
    return QuantizerStack(tuple(levels))
