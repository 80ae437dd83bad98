"""Binary cross-entropy, Adam and the epoch loop with dev-EER early stopping."""
import csv
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

import numpy as np
from scipy.special import expit

from ._inputs import format_value, option, validate_fields
from .aggregation import qaf_alpha
from .detector import detector_backward, detector_forward, score
from .errors import NumericalError, ShapeError
from .metrics import BONA_FIDE, SPOOF, ScoredTrial, compute_eer
from .rvq import rvq_encode

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimization settings, shared by every method variant."""

    learning_rate: float = option(
        1e-3, 'Adam step size.', spec={'type': 'number', 'exclusiveMinimum': 0}
    )
    beta1: float = option(
        0.9, 'Adam first-moment decay.',
        spec={'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1}
    )
    beta2: float = option(
        0.999, 'Adam second-moment decay.',
        spec={'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1}
    )
    epsilon: float = option(
        1e-8, 'Adam denominator offset.', spec={'type': 'number', 'exclusiveMinimum': 0}
    )
    batch_size: int = option(
        16, 'Trials per optimizer step. Gradients are averaged over the batch.',
        spec={'type': 'integer', 'minimum': 1}
    )
    max_epochs: int = option(
        100, 'Upper bound on training epochs.', spec={'type': 'integer', 'minimum': 1}
    )
    patience: int = option(
        5, 'Epochs without a strict dev-EER improvement before stopping.',
        spec={'type': 'integer', 'minimum': 1}
    )
    seed: int = option(
        0, 'Seed for parameter initialization and batch shuffling.',
        spec={'type': 'integer', 'minimum': 0}
    )

    def __post_init__(self):
        validate_fields(self, 'train')


@dataclass
class AdamState:
    """Per-tensor moment estimates and the shared step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class EncodedTrial(NamedTuple):
    """A trial ready for the detector: SSL layers, code indices and label."""

    ssl_layers: np.ndarray
    indices: np.ndarray
    label: int


@dataclass
class TrainReport:
    """What happened during ``train``."""

    train_loss: List[float] = field(default_factory=list)
    dev_eer: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_eer: float = float('inf')
    stop_reason: str = ''
    alpha: Optional[np.ndarray] = None
    config: Optional[TrainConfig] = None

    @property
    def epochs(self):
        return len(self.train_loss)

    def quantizer_contributions(self):
        """Mean alpha per quantizer, or None for mean pooling."""
        return None if self.alpha is None else self.alpha.mean(axis=1)

    def write_csv(self, path):
        path = Path(path)
        with path.open('w', newline='', encoding='utf-8') as outf:
            writer = csv.writer(outf, lineterminator='\n')
            writer.writerow(['epoch', 'train_loss', 'dev_eer'])
            for epoch, (loss, eer) in enumerate(zip(self.train_loss, self.dev_eer), 1):
                writer.writerow([epoch, repr(loss), repr(eer)])
        return path

    def summary(self):
        lines = [
            f'epochs={self.epochs}',
            f'best_epoch={self.best_epoch}',
            f'best_dev_eer={self.best_dev_eer!r}',
            f'stop_reason={self.stop_reason}',
        ]
        if self.config is not None:
            lines.extend(
                f'{fld.name}={format_value(getattr(self.config, fld.name))}'
                for fld in fields(self.config)
            )
        contributions = self.quantizer_contributions()
        if contributions is not None:
            lines.extend(
                f'alpha_q{q}={value!r}' for q, value in enumerate(contributions, 1)
            )
        return '\n'.join(lines) + '\n'


def bce_loss(logit, label):
    """Binary cross-entropy on a logit, label 1 = bona fide.

    Returns:
        A tuple ``(loss, dlogit)``.
    """
    logit = float(logit)
    if not np.isfinite(logit):
        raise NumericalError(f'non-finite logit {logit}', stage='bce_loss')
    loss = float(np.logaddexp(0.0, logit) - label * logit)
    return loss, float(expit(logit) - label)


def adam_step(params, grads, state, cfg, frozen=()):
    """One bias-corrected Adam update, in place.

    Tensors named in ``frozen`` keep their values and moments.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f'adam_step: gradient for unknown tensor {name!r}')
        if grad.shape != params[name].shape:
            raise ShapeError(
                f'adam_step: {name} gradient {grad.shape} != parameter {params[name].shape}'
            )
    state.step += 1
    correction1 = 1.0 - cfg.beta1 ** state.step
    correction2 = 1.0 - cfg.beta2 ** state.step
    for name, grad in grads.items():
        if name in frozen:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return params, state


def encode_trials(trials, stack):
    """Quantize the codec latent of every trial against ``stack``."""
    return [
        EncodedTrial(
            np.asarray(t.ssl_layers, dtype=np.float64),
            rvq_encode(t.codec_latent, stack)[0],
            int(t.label),
        )
        for t in trials
    ]


def score_trials(model, trials):
    """Scores in trial order."""
    return [ScoredTrial(score(model, t.ssl_layers, t.indices), t.label) for t in trials]


def evaluate_eer(model, trials):
    """EER of ``model`` on encoded trials; the same path serves dev and eval."""
    return compute_eer(score_trials(model, trials))[0]


def _check_dev(trials):
    labels = {t.label for t in trials}
    if not {SPOOF, BONA_FIDE} <= labels:
        raise ShapeError('dev set must contain both bona fide and spoof trials')


def _run_epoch(model, train_set, order, state, cfg):
    """One pass over ``train_set`` in ``order``; returns the mean loss."""
    total = 0.0
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        grads = {name: np.zeros_like(value) for name, value in model.params.items()}
        for i in batch:
            trial = train_set[i]
            logit, cache = detector_forward(model, trial.ssl_layers, trial.indices)
            loss, dlogit = bce_loss(logit, trial.label)
            total += loss
            for name, grad in detector_backward(model, cache, dlogit).items():
                grads[name] += grad
        for grad in grads.values():
            grad /= len(batch)
        adam_step(model.params, grads, state, cfg, frozen=model.frozen)
        model.touch()
    return total / len(train_set)


def train(model, train_set, dev_set, cfg):
    """Train ``model`` in place and restore the best dev-EER snapshot.

    Args:
        model: A ``DetectorModel``; its parameters end at the best snapshot.
        train_set: List of ``EncodedTrial``.
        dev_set: List of ``EncodedTrial`` with both classes present.
        cfg: ``TrainConfig``.

    Returns:
        A tuple ``(model, report)``.
    """
    if not train_set:
        raise ShapeError('training set is empty')
    _check_dev(dev_set)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    report = TrainReport(config=cfg)
    best = model.snapshot()
    waited = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        try:
            mean_loss = _run_epoch(model, train_set, order, state, cfg)
            if not np.isfinite(mean_loss):
                raise NumericalError(f'mean loss is {mean_loss}')
            eer = evaluate_eer(model, dev_set)
        except NumericalError as error:
            raise NumericalError(
                f'training diverged at epoch {epoch}: {error}', stage='train'
            ) from error
        report.train_loss.append(mean_loss)
        report.dev_eer.append(eer)
        if eer < report.best_dev_eer:
            report.best_dev_eer = eer
            report.best_epoch = epoch
            best = model.snapshot()
            waited = 0
        else:
            waited += 1
        logger.info(
            'epoch %d: train_loss=%.6f dev_eer=%.4f%% patience=%d/%d',
            epoch, mean_loss, 100 * eer, waited, cfg.patience
        )
        if waited >= cfg.patience:
            report.stop_reason = f'no dev EER improvement for {cfg.patience} epochs'
            break
    else:
        report.stop_reason = f'reached max_epochs={cfg.max_epochs}'
    logger.info('stopping: %s; best epoch %d', report.stop_reason, report.best_epoch)
    model.load_snapshot(best)
    qaf = model.qaf_params()
    report.alpha = None if qaf is None else qaf_alpha(qaf)
    return model, report
