"""Central finite-difference checks of the analytic gradients.

Relative error per entry is ``|a - n| / (|a| + |n|)`` over entries where
``|a| + |n| > GUARD``. Every check reports two figures:

* ``strict``: the guard alone.
* ``resolved``: additionally skips entries where the two gradients agree to
  within ``ABS_FLOOR``, the float64 round-off of a central difference of an
  O(1) logit at ``STEP``.

Pass or fail is decided on ``resolved``. ``strict`` is printed next to it so a
gap between the two is visible.
"""
import logging
from collections import OrderedDict
from typing import NamedTuple

import numpy as np

from .aggregation import QafParams, qaf_aggregate, qaf_backward
from .detector import METHODS, ModelConfig, detector_backward, detector_forward, init_detector
from .rvq import QuantizerStack

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-5
GUARD = 1e-8
ABS_FLOOR = 1e-9

# tiny detector instance: T=3, D_ssl=4, D_codec=2, Q=2, K=3, H=3
TINY = {
    'frames': 3, 'ssl_dim': 4, 'codec_dim': 2, 'num_levels': 2,
    'codebook_size': 3, 'hidden_size': 3, 'd_model': 4, 'ssl_layers': 2,
}


class GradError(NamedTuple):
    strict: float
    resolved: float

    def worst(self, other):
        return GradError(max(self.strict, other.strict), max(self.resolved, other.resolved))


def relative_error(analytic, numeric, floor=0.0):
    """Largest guarded relative error between two gradient arrays.

    Entries whose absolute difference is at most ``floor`` are skipped.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.abs(analytic) + np.abs(numeric)
    checked = (scale > GUARD) & (diff > floor)
    if not np.any(checked):
        return 0.0
    return float(np.max(diff[checked] / scale[checked]))


def gradient_error(analytic, numeric):
    return GradError(
        relative_error(analytic, numeric), relative_error(analytic, numeric, ABS_FLOOR)
    )


def numeric_gradient(fn, array, step=STEP):
    """Central differences of the scalar ``fn()`` with respect to ``array`` (in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = fn()
        flat[i] = saved - step
        down = fn()
        flat[i] = saved
        out[i] = (up - down) / (2 * step)
    return grad


def check_aggregation(seed, num_levels=3, dim=2, frames=2):
    """Compare ``qaf_backward`` with finite differences of ``sum(upstream * out)``."""
    rng = np.random.default_rng(seed)
    bundle = rng.standard_normal((num_levels, frames, dim))
    upstream = rng.standard_normal((frames, dim))
    params = QafParams(rng.standard_normal((num_levels, dim)), tau=float(rng.uniform(0.5, 2.0)))

    def loss():
        return float(np.sum(upstream * qaf_aggregate(bundle, params)))

    grad_W, grad_levels = qaf_backward(bundle, params, upstream)
    return OrderedDict([
        ('aggregation/W', gradient_error(grad_W, numeric_gradient(loss, params.W))),
        ('aggregation/levels', gradient_error(grad_levels, numeric_gradient(loss, bundle))),
    ])


def tiny_instance(seed, method='qaf_static', codec_trainable=True, stream='fused',
                  shape=None):
    """A randomly filled detector and one trial at the tiny gradient-check shape.

    Returns:
        A tuple ``(model, ssl_layers, indices)``.
    """
    shape = dict(TINY, **(shape or {}))
    rng = np.random.default_rng(seed)
    stack = QuantizerStack.from_array(rng.standard_normal(
        (shape['num_levels'], shape['codebook_size'], shape['codec_dim'])
    ))
    config = ModelConfig(
        method=method, codec_trainable=codec_trainable, stream=stream,
        d_model=shape['d_model'], hidden_size=shape['hidden_size']
    )
    model = init_detector(config, stack, shape['ssl_dim'], shape['ssl_layers'], seed=seed)
    for value in model.params.values():
        value[...] = 0.5 * rng.standard_normal(value.shape)
    ssl_layers = rng.standard_normal((shape['ssl_layers'], shape['frames'], shape['ssl_dim']))
    indices = rng.integers(0, shape['codebook_size'], size=(shape['frames'], shape['num_levels']))
    return model, ssl_layers, indices


def check_detector(seed, method='qaf_static'):
    """Relative errors per parameter tensor of the full detector."""
    model, ssl_layers, indices = tiny_instance(seed, method=method)
    _, cache = detector_forward(model, ssl_layers, indices)
    grads = detector_backward(model, cache, 1.0)

    def logit():
        return detector_forward(model, ssl_layers, indices)[0]

    errors = OrderedDict()
    for name, value in model.params.items():
        errors[f'{method}/{name}'] = gradient_error(grads[name], numeric_gradient(logit, value))
    return errors


def run_gradcheck(seed=0, num_seeds=20, methods=METHODS):
    """Worst relative error per parameter group over ``num_seeds`` seeds."""
    worst = OrderedDict()
    for s in range(seed, seed + num_seeds):
        results = check_aggregation(s)
        for method in methods:
            results.update(check_detector(s, method))
        for group, error in results.items():
            worst[group] = worst[group].worst(error) if group in worst else error
        logger.debug(
            'seed %d: max relative error %.3g', s, max(e.strict for e in results.values())
        )
    return worst
