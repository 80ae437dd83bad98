"""Declarative config inputs.

Config fields are declared with a default, a description and a small
JSON schema, then checked with ``jsonschema``::

    patience: int = option(
        5, 'Epochs without strict dev-EER improvement before stopping.',
        spec={'type': 'integer', 'minimum': 1}
    )
"""
import math
from dataclasses import field, fields

from jsonschema import Draft7Validator, ValidationError, validators

from .errors import ConfigError

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def option(default, description, spec=None):
    """Declare a config field."""
    return field(
        default=default, metadata={'description': description, 'spec': spec or {}}
    )


def parse_value(fld, text, section=None):
    """Parse the text form of a config value according to the field spec."""
    spec = fld.metadata.get('spec', {})
    kind = spec.get('type', 'string')
    key = f'{section}.{fld.name}' if section else fld.name
    text = text.strip()
    try:
        if kind == 'integer':
            return int(text)
        if kind == 'number':
            return float(text)
        if kind == 'boolean':
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f'{key}: cannot parse {text!r} as {kind}') from None
    return text


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _is_integer(checker, instance):
    return isinstance(instance, int) and not isinstance(instance, bool)


def _is_finite_number(checker, instance):
    return isinstance(instance, (int, float)) and not isinstance(instance, bool) \
        and math.isfinite(instance)


# integers are never floats and numbers are always finite
FieldValidator = validators.extend(
    Draft7Validator,
    type_checker=Draft7Validator.TYPE_CHECKER.redefine_many(
        {'integer': _is_integer, 'number': _is_finite_number}
    ),
)


def validate_fields(obj, section=None):
    """Check every field of a config dataclass against its declared JSON schema."""
    for fld in fields(obj):
        spec = fld.metadata.get('spec')
        if not spec:
            continue
        value = getattr(obj, fld.name)
        key = f'{section}.{fld.name}' if section else fld.name
        try:
            FieldValidator(spec).validate(value)
        except ValidationError as error:
            raise ConfigError(f'{key}: {error.message}') from None

