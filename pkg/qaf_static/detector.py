"""Late-fusion detector over an SSL-like stream and aggregated codec embeddings.

Forward pipeline for one trial::

    ssl layers --(softmax layer merge | last layer)--------------+
                                                                 |--concat--> Linear
    code indices --embedding lookup--> (Q, T, D) --aggregate-----+              |
                                                                           LSTM (H)
                                                                               |
                                                          mean over time --> Linear --> logit

A higher logit means bona fide. SSL features are inputs only: the pipeline
never produces a gradient for them.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy.special import softmax

from . import container
from ._inputs import format_value, option, validate_fields
from .aggregation import QafParams, mean_pool_levels, qaf_aggregate, qaf_backward
from .errors import ConfigError, FormatError, NumericalError, ShapeError, StaleCacheError
from .lstm import LstmCache, lstm_backward, lstm_forward
from .rvq import QuantizerStack

logger = logging.getLogger(__name__)

METHODS = ('mean_pool', 'qaf_static', 'qaf_scalar')
STREAMS = ('fused', 'ssl_only', 'codec_only')
EMBEDDINGS = 'codec.embeddings'


@dataclass
class ModelConfig:
    """Detector shape and variant."""

    method: str = option(
        'qaf_static', 'Quantizer aggregation: uniform mean pooling, per-dimension '
        'static weights or one static weight per quantizer.',
        spec={'type': 'string', 'enum': list(METHODS)}
    )
    codec_trainable: bool = option(
        True, 'Update the codec level-embedding table during training (codecT). '
        'When false the table stays at the codec codewords (codecF).',
        spec={'type': 'boolean'}
    )
    stream: str = option(
        'fused', 'Streams fed to the fusion layer. ssl_only and codec_only zero the '
        'other stream and are used for ablations.',
        spec={'type': 'string', 'enum': list(STREAMS)}
    )
    layer_merge: bool = option(
        True, 'Merge SSL layers with a learned softmax over layers. When false, or '
        'when there is a single layer, the last layer is used.',
        spec={'type': 'boolean'}
    )
    d_model: int = option(
        32, 'Width of the fused projection.', spec={'type': 'integer', 'minimum': 1}
    )
    hidden_size: int = option(
        32, 'LSTM hidden size.', spec={'type': 'integer', 'minimum': 1}
    )
    tau: float = option(
        1.0, 'Softmax temperature of the static quantizer weights. Fixed, not trained.',
        spec={'type': 'number', 'exclusiveMinimum': 0}
    )

    def __post_init__(self):
        validate_fields(self, 'model')


@dataclass
class DetectorModel:
    """Named parameter tensors plus the variant they implement.

    ``version`` increases on every parameter update so that stale forward
    caches can be detected.
    """

    config: ModelConfig
    stack: QuantizerStack
    ssl_dim: int
    num_ssl_layers: int
    params: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    version: int = 0

    def __post_init__(self):
        self.params = OrderedDict(
            (name, np.asarray(value, dtype=np.float64)) for name, value in self.params.items()
        )
        expected = param_shapes(self.config, self.stack, self.ssl_dim, self.num_ssl_layers)
        if list(self.params) != list(expected):
            raise ShapeError(
                f'model tensors {list(self.params)} do not match {list(expected)}'
            )
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f'{name} has shape {self.params[name].shape}, expected {shape}')

    @property
    def frozen(self):
        """Names of tensors the optimizer must leave untouched."""
        return frozenset() if self.config.codec_trainable else frozenset({EMBEDDINGS})

    def qaf_params(self):
        if self.config.method == 'mean_pool':
            return None
        return QafParams(self.params['qaf.W'], self.config.tau)

    def snapshot(self):
        """Deep copy of the parameters, keyed like ``params``."""
        return OrderedDict((name, value.copy()) for name, value in self.params.items())

    def load_snapshot(self, snapshot):
        for name, value in snapshot.items():
            self.params[name][...] = value
        self.touch()

    def touch(self):
        self.version += 1


def param_shapes(config, stack, ssl_dim, num_ssl_layers):
    """Ordered tensor names and shapes of a detector variant."""
    q, k, d_codec = stack.num_levels, stack.codebook_size, stack.dim
    hidden = config.hidden_size
    shapes = OrderedDict()
    if config.layer_merge and num_ssl_layers > 1:
        shapes['merge.logits'] = (num_ssl_layers,)
    if config.method == 'qaf_static':
        shapes['qaf.W'] = (q, d_codec)
    elif config.method == 'qaf_scalar':
        shapes['qaf.W'] = (q, 1)
    shapes[EMBEDDINGS] = (q, k, d_codec)
    shapes['fusion.weight'] = (ssl_dim + d_codec, config.d_model)
    shapes['fusion.bias'] = (config.d_model,)
    shapes['lstm.W_x'] = (config.d_model, 4 * hidden)
    shapes['lstm.W_h'] = (hidden, 4 * hidden)
    shapes['lstm.b'] = (4 * hidden,)
    shapes['classifier.weight'] = (hidden,)
    shapes['classifier.bias'] = (1,)
    return shapes


def init_detector(config, stack, ssl_dim, num_ssl_layers, seed=0):
    """Build a fresh detector.

    The embedding table starts as a copy of the codec codewords, static
    weights and merge logits start at zero (uniform), projections use a
    symmetric uniform fan-in scheme with zero biases, and the classifier
    starts at zero so the untrained model scores every trial 0.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config, stack, ssl_dim, num_ssl_layers)
    params = OrderedDict()
    for name, shape in shapes.items():
        if name == EMBEDDINGS:
            params[name] = stack.to_array()
        elif name in ('fusion.weight', 'lstm.W_x', 'lstm.W_h'):
            fan_in = shape[0] if name == 'fusion.weight' else config.hidden_size
            limit = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return DetectorModel(config, stack, ssl_dim, num_ssl_layers, params)


def count_parameters(model):
    """Return ``(trainable, frozen)`` scalar counts."""
    trainable = sum(v.size for n, v in model.params.items() if n not in model.frozen)
    frozen = sum(v.size for n, v in model.params.items() if n in model.frozen)
    return trainable, frozen


def layer_merge(layers, logits):
    """Softmax-weighted sum of ``(L, T, D)`` SSL layers."""
    layers = np.asarray(layers, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if layers.ndim != 3 or layers.shape[0] == 0:
        raise ShapeError(f'layer_merge: expected LxTxD layers, got {layers.shape}')
    if logits.shape != (layers.shape[0],):
        raise ShapeError(
            f'layer_merge: {logits.shape[0] if logits.ndim else 0} logits for '
            f'{layers.shape[0]} layers'
        )
    if not np.all(np.isfinite(logits)):
        raise NumericalError('merge logits are non-finite', stage='layer_merge')
    weights = softmax(logits)
    return np.tensordot(weights, layers, axes=1)


def layer_merge_backward(layers, logits, upstream):
    """Gradient of the merge logits. The layers themselves get none."""
    weights = softmax(logits)
    g = np.einsum('td,ltd->l', upstream, layers)
    return weights * (g - np.dot(weights, g))


def fuse(ssl, codec, weight, bias):
    """Frame-wise ``[ssl; codec] @ weight + bias``."""
    ssl = np.asarray(ssl, dtype=np.float64)
    codec = np.asarray(codec, dtype=np.float64)
    if ssl.ndim != 2 or codec.ndim != 2:
        raise ShapeError('fuse: both streams must be TxD matrices')
    if ssl.shape[0] != codec.shape[0]:
        raise ShapeError(f'fuse: ssl has {ssl.shape[0]} frames, codec has {codec.shape[0]}')
    if weight.shape[0] != ssl.shape[1] + codec.shape[1] or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f'fuse: weight {weight.shape} / bias {bias.shape} do not fit '
            f'{ssl.shape[1]} + {codec.shape[1]} input dims'
        )
    return np.concatenate([ssl, codec], axis=1) @ weight + bias


@dataclass
class DetectorCache:
    model_id: int
    version: int
    ssl_layers: np.ndarray
    indices: np.ndarray
    bundle: np.ndarray
    concat: np.ndarray
    lstm: LstmCache
    pooled: np.ndarray
    qaf: Optional[QafParams] = None


def _finite(array, stage):
    if not np.all(np.isfinite(array)):
        raise NumericalError('non-finite values', stage=stage)
    return array


def lookup_levels(embeddings, indices):
    """Gather a ``(Q, T, D)`` bundle from a ``(Q, K, D)`` table and ``(T, Q)`` codes."""
    q = embeddings.shape[0]
    return embeddings[np.arange(q)[:, None], indices.T]


def detector_forward(model, ssl_layers, indices):
    """Score one trial.

    Args:
        model: The detector.
        ssl_layers: ``(L, T, D_ssl)`` SSL features.
        indices: ``(T, Q)`` codec code indices.

    Returns:
        A tuple ``(logit, cache)``.
    """
    ssl_layers = np.asarray(ssl_layers, dtype=np.float64)
    indices = np.asarray(indices)
    cfg = model.config
    stack = model.stack
    if ssl_layers.ndim != 3 or ssl_layers.shape[0] != model.num_ssl_layers \
            or ssl_layers.shape[2] != model.ssl_dim:
        raise ShapeError(
            f'detector_forward: ssl layers {ssl_layers.shape} do not match '
            f'{model.num_ssl_layers} x T x {model.ssl_dim}'
        )
    if ssl_layers.shape[1] < 1:
        raise ShapeError('detector_forward: empty trial')
    if indices.shape != (ssl_layers.shape[1], stack.num_levels) \
            or not np.issubdtype(indices.dtype, np.integer):
        raise ShapeError(
            f'detector_forward: code indices {indices.shape} do not match '
            f'{ssl_layers.shape[1]} x {stack.num_levels}'
        )
    if indices.min() < 0 or indices.max() >= stack.codebook_size:
        raise ShapeError('detector_forward: code index outside the embedding table')
    _finite(ssl_layers, 'ssl input')
    p = model.params

    if 'merge.logits' in p:
        ssl = layer_merge(ssl_layers, p['merge.logits'])
    else:
        ssl = ssl_layers[-1]

    bundle = lookup_levels(p[EMBEDDINGS], indices)
    qaf = model.qaf_params()
    if qaf is None:
        codec = mean_pool_levels(bundle)
    else:
        codec = qaf_aggregate(bundle, qaf)
    _finite(codec, 'aggregation')

    if cfg.stream == 'ssl_only':
        codec = np.zeros_like(codec)
    elif cfg.stream == 'codec_only':
        ssl = np.zeros_like(ssl)

    concat = np.concatenate([ssl, codec], axis=1)
    fused = _finite(fuse(ssl, codec, p['fusion.weight'], p['fusion.bias']), 'fusion')
    hidden, lstm_cache = lstm_forward(fused, p['lstm.W_x'], p['lstm.W_h'], p['lstm.b'])
    _finite(hidden, 'lstm')
    pooled = hidden.mean(axis=0)
    logit = float(pooled @ p['classifier.weight'] + p['classifier.bias'][0])
    if not np.isfinite(logit):
        raise NumericalError('non-finite logit', stage='classifier')
    cache = DetectorCache(
        model_id=id(model), version=model.version, ssl_layers=ssl_layers,
        indices=indices, bundle=bundle, concat=concat, lstm=lstm_cache,
        pooled=pooled, qaf=qaf
    )
    return logit, cache


def detector_backward(model, cache, dlogit):
    """Gradients of ``dlogit * logit`` for every tensor in ``model.params``.

    The embedding-table gradient is all zeros when the codec is frozen.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError(
            f'cache from model version {cache.version} used with version {model.version}'
        )
    cfg = model.config
    p = model.params
    grads = OrderedDict((name, np.zeros_like(value)) for name, value in p.items())
    steps = cache.concat.shape[0]
    ssl_dim = model.ssl_dim

    grads['classifier.weight'] = dlogit * cache.pooled
    grads['classifier.bias'] = np.array([dlogit], dtype=np.float64)
    d_hidden = np.tile(dlogit * p['classifier.weight'] / steps, (steps, 1))
    dx, grads['lstm.W_x'], grads['lstm.W_h'], grads['lstm.b'] = lstm_backward(
        d_hidden, cache.lstm, p['lstm.W_x'], p['lstm.W_h']
    )
    grads['fusion.weight'] = cache.concat.T @ dx
    grads['fusion.bias'] = dx.sum(axis=0)
    d_concat = dx @ p['fusion.weight'].T

    if 'merge.logits' in p and cfg.stream != 'codec_only':
        grads['merge.logits'] = layer_merge_backward(
            cache.ssl_layers, p['merge.logits'], d_concat[:, :ssl_dim]
        )

    if cfg.stream != 'ssl_only':
        d_codec = d_concat[:, ssl_dim:]
        if cache.qaf is None:
            q = cache.bundle.shape[0]
            d_bundle = np.broadcast_to(d_codec / q, cache.bundle.shape)
        else:
            grads['qaf.W'], d_bundle = qaf_backward(cache.bundle, cache.qaf, d_codec)
        if cfg.codec_trainable:
            q = cache.bundle.shape[0]
            np.add.at(grads[EMBEDDINGS], (np.arange(q)[:, None], cache.indices.T), d_bundle)
    return grads


def score(model, ssl_layers, indices):
    """Logit of one trial without keeping the backward cache."""
    return detector_forward(model, ssl_layers, indices)[0]


_CONFIG_PREFIX = 'config.'
_SHAPE_PREFIX = 'shape.'


def save_model(model, path):
    """Write the model to a QAF1 container plus a text manifest next to it."""
    path = Path(path)
    cfg = model.config
    records = OrderedDict()
    records[_CONFIG_PREFIX + 'method'] = np.array(METHODS.index(cfg.method), dtype=np.uint32)
    records[_CONFIG_PREFIX + 'stream'] = np.array(STREAMS.index(cfg.stream), dtype=np.uint32)
    records[_CONFIG_PREFIX + 'codec_trainable'] = np.array(cfg.codec_trainable, dtype=np.uint32)
    records[_CONFIG_PREFIX + 'layer_merge'] = np.array(cfg.layer_merge, dtype=np.uint32)
    records[_CONFIG_PREFIX + 'd_model'] = np.array(cfg.d_model, dtype=np.uint32)
    records[_CONFIG_PREFIX + 'hidden_size'] = np.array(cfg.hidden_size, dtype=np.uint32)
    records[_CONFIG_PREFIX + 'tau'] = np.array(cfg.tau, dtype=np.float32)
    records[_SHAPE_PREFIX + 'ssl'] = np.array(
        [model.num_ssl_layers, model.ssl_dim], dtype=np.uint32
    )
    records.update(container.stack_records(model.stack))
    for name, value in model.params.items():
        records['param.' + name] = value
    container.write_records(path, records)
    manifest = manifest_path(path)
    manifest.write_text(model_manifest(model), encoding='utf-8')
    return path


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + '.manifest.txt')


def model_manifest(model):
    """Plain-text listing of the tensors and variant of a model."""
    cfg = model.config
    lines = [
        f'method={cfg.method}',
        f'codec_trainable={format_value(cfg.codec_trainable)}',
        f'stream={cfg.stream}',
        f'layer_merge={format_value(cfg.layer_merge)}',
        f'tau={format_value(cfg.tau)}',
        f'stack=stack.codewords {"x".join(map(str, model.stack.to_array().shape))}',
    ]
    for name, value in model.params.items():
        flag = ' frozen' if name in model.frozen else ''
        lines.append(f'tensor={name} {"x".join(map(str, value.shape)) or "scalar"}{flag}')
    return '\n'.join(lines) + '\n'


def load_model(path):
    """Read a model written by ``save_model``."""
    path = Path(path)
    records = container.read_records(path)

    def scalar(name):
        key = _CONFIG_PREFIX + name
        if key not in records or records[key].size != 1:
            raise FormatError(f'{path}: missing or malformed record {key!r}')
        return records[key].reshape(()).item()

    try:
        config = ModelConfig(
            method=METHODS[scalar('method')],
            stream=STREAMS[scalar('stream')],
            codec_trainable=bool(scalar('codec_trainable')),
            layer_merge=bool(scalar('layer_merge')),
            d_model=int(scalar('d_model')),
            hidden_size=int(scalar('hidden_size')),
            tau=float(scalar('tau')),
        )
    except (IndexError, ConfigError) as error:
        raise FormatError(f'{path}: bad model config ({error})') from None
    shape = records.get(_SHAPE_PREFIX + 'ssl')
    if shape is None or shape.shape != (2,):
        raise FormatError(f'{path}: missing or malformed record {"shape.ssl"!r}')
    stack = container.stack_from_records(records, source=str(path))
    params = OrderedDict(
        (name[len('param.'):], value.astype(np.float64))
        for name, value in records.items() if name.startswith('param.')
    )
    try:
        return DetectorModel(config, stack, int(shape[1]), int(shape[0]), params)
    except ShapeError as error:
        raise FormatError(f'{path}: {error}') from None
