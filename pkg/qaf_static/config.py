"""Plain-text ``key=value`` run configuration.

Keys are ``<section>.<field>`` with sections ``data`` (``SynthConfig``),
``model`` (``ModelConfig``) and ``train`` (``TrainConfig``)::

    # planted artifact at the second quantizer
    data.artifact_level = 2
    model.method = qaf_static
    train.patience = 5

Unknown keys are errors, and every section is re-validated after overrides.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ._inputs import format_value, parse_value
from .detector import ModelConfig
from .errors import ConfigError
from .synthdata import SynthConfig
from .training import TrainConfig

SECTIONS = ('data', 'model', 'train')


@dataclass
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_text(cls, text, source='<config>'):
        pairs = []
        seen = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f'{source}:{lineno}: expected key=value, got {raw!r}')
            key, value = (part.strip() for part in line.split('=', 1))
            if key in seen:
                raise ConfigError(
                    f'{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})'
                )
            seen[key] = lineno
            pairs.append((key, value, f'{source}:{lineno}'))
        return cls().with_overrides(pairs)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f'{path}: config file not found')
        return cls.from_text(path.read_text(encoding='utf-8'), source=str(path))

    def with_overrides(self, pairs):
        """Return a copy with ``(key, value[, where])`` text pairs applied."""
        updates = {name: {} for name in SECTIONS}
        for pair in pairs:
            key, value = pair[0], pair[1]
            where = f'{pair[2]}: ' if len(pair) > 2 else ''
            section, _, name = key.partition('.')
            if section not in updates:
                raise ConfigError(f'{where}unknown config key {key!r}')
            current = getattr(self, section)
            match = [fld for fld in fields(current) if fld.name == name]
            if not match:
                raise ConfigError(f'{where}unknown config key {key!r}')
            updates[section][name] = parse_value(match[0], value, section)
        return RunConfig(**{
            name: replace(getattr(self, name), **updates[name]) for name in SECTIONS
        })

    def to_text(self):
        """Render a config file that parses back to an equal ``RunConfig``."""
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for fld in fields(section):
                lines.append(f'{name}.{fld.name}={format_value(getattr(section, fld.name))}')
        return '\n'.join(lines) + '\n'


def parse_assignment(text):
    """Split a ``key=value`` command-line override."""
    if '=' not in text:
        raise ConfigError(f'override {text!r} must look like key=value')
    key, value = text.split('=', 1)
    return key.strip(), value.strip()
