"""Quantizer aggregation: uniform mean pooling and static softmax weighting.

A level bundle is a ``(Q, T, D)`` array holding one frame-level embedding per
quantizer. The static weighting keeps a ``(Q, D)`` logit matrix ``W`` that is
normalized across quantizers per embedding dimension with a temperature
softmax; a ``(Q, 1)`` matrix shares one weight per quantizer across all
dimensions.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import NumericalError, ShapeError


@dataclass
class QafParams:
    """Static quantizer weights ``W`` (logits) and the softmax temperature."""

    W: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ShapeError(f'W must be a QxD matrix, got shape {self.W.shape}')
        if not self.tau > 0 or not np.isfinite(self.tau):
            raise NumericalError(f'tau must be positive and finite, got {self.tau}',
                                 stage='qaf_alpha')
        if not np.all(np.isfinite(self.W)):
            raise NumericalError('W has non-finite entries', stage='qaf_alpha')

    @classmethod
    def zeros(cls, num_levels, dim, tau=1.0):
        """Uniform weights: aggregation starts out as mean pooling."""
        return cls(np.zeros((num_levels, dim)), tau)


def as_bundle(levels):
    """Stack a list of ``(T, D)`` level embeddings into a ``(Q, T, D)`` array."""
    if isinstance(levels, np.ndarray):
        bundle = np.asarray(levels, dtype=np.float64)
    else:
        levels = [np.asarray(lvl, dtype=np.float64) for lvl in levels]
        if not levels:
            raise ShapeError('level bundle is empty')
        shape = levels[0].shape
        for q, lvl in enumerate(levels, 1):
            if lvl.shape != shape:
                raise ShapeError(f'level {q} has shape {lvl.shape}, level 1 has {shape}')
        bundle = np.stack(levels)
    if bundle.ndim != 3 or 0 in bundle.shape:
        raise ShapeError(f'level bundle must be a non-empty QxTxD array, got {bundle.shape}')
    return bundle


def _check_params(bundle, params):
    q, _, d = bundle.shape
    if params.W.shape[0] != q:
        raise ShapeError(f'W has {params.W.shape[0]} quantizers, bundle has {q}')
    if params.W.shape[1] not in (1, d):
        raise ShapeError(f'W has {params.W.shape[1]} dims, bundle has {d}')


def mean_pool_levels(levels):
    """Uniform average over quantizers."""
    bundle = as_bundle(levels)
    return bundle.sum(axis=0) / bundle.shape[0]


def qaf_alpha(params):
    """Column softmax of ``W / tau``; every column sums to one."""
    return softmax(params.W / params.tau, axis=0)


def qaf_aggregate(levels, params):
    """Per-dimension convex combination of the quantizer embeddings."""
    bundle = as_bundle(levels)
    _check_params(bundle, params)
    alpha = qaf_alpha(params)
    return np.sum(alpha[:, None, :] * bundle, axis=0)


def qaf_backward(levels, params, upstream):
    """Gradients of the static aggregation.

    Args:
        levels: ``(Q, T, D)`` bundle used in the forward pass.
        params: The ``QafParams`` used in the forward pass.
        upstream: ``(T, D)`` gradient with respect to the aggregated output.

    Returns:
        A tuple ``(grad_W, grad_levels)`` shaped like ``W`` and the bundle.
    """
    bundle = as_bundle(levels)
    _check_params(bundle, params)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != bundle.shape[1:]:
        raise ShapeError(
            f'upstream gradient has shape {upstream.shape}, expected {bundle.shape[1:]}'
        )
    alpha = qaf_alpha(params)
    grad_levels = alpha[:, None, :] * upstream[None, :, :]
    g = np.stack([np.sum(upstream * level, axis=0) for level in bundle])
    if params.W.shape[1] == 1:
        g = g.sum(axis=1, keepdims=True)
    # softmax Jacobian is blind to a per-column shift; centering on level 1
    # makes identical levels give an exactly zero gradient
    g = g - g[:1]
    grad_W = alpha * (g - np.sum(alpha * g, axis=0, keepdims=True)) / params.tau
    return grad_W, grad_levels


def quantizer_contributions(params):
    """Mean weight per quantizer over embedding dimensions, shape ``(Q,)``."""
    return qaf_alpha(params).mean(axis=1)
