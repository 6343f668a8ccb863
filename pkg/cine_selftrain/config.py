"""Declarative INI configuration.

One file configures a whole pipeline. Each section maps onto one config
dataclass and each key onto one of its fields::

    [phantom]       PhantomConfig (without the geometry)
    [structures]    StructureGeometry
    [corruption]    CorruptionConfig
    [training]      TrainConfig
    [selftrain]     SelfTrainConfig (without the training settings)

Missing keys keep their defaults, tuples are comma separated and unknown
sections or keys are rejected.
"""

import dataclasses
from configparser import ConfigParser, Error as ConfigParserError
from enum import Enum
from io import StringIO
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type

from cine_selftrain.errors import (
    InvalidConfigKeys,
    InvalidConfigValue,
    InvalidOperation,
    InvalidVolume,
)
from cine_selftrain.foundation import CorruptionConfig
from cine_selftrain.grid import GridShape, Spacing
from cine_selftrain.phantom import PhantomConfig, StructureGeometry
from cine_selftrain.selftrain import SelfTrainConfig
from cine_selftrain.student.model import TrainConfig

#: Fields filled from another section rather than from their own key.
_NESTED = {'geometry', 'train_cfg'}


@dataclasses.dataclass(frozen=True)
class ToolkitConfig:
    phantom: PhantomConfig = PhantomConfig()
    corruption: CorruptionConfig = CorruptionConfig()
    training: TrainConfig = TrainConfig()
    selftrain: SelfTrainConfig = SelfTrainConfig()

    @property
    def structures(self) -> StructureGeometry:
        return self.phantom.geometry

    def seeds(self) -> Dict[str, int]:
        return {
            'phantom': self.phantom.seed,
            'corruption': self.corruption.seed,
            'training': self.training.seed,
            'selftrain': self.selftrain.seed,
        }


SECTIONS: Dict[str, Type] = {
    'phantom': PhantomConfig,
    'structures': StructureGeometry,
    'corruption': CorruptionConfig,
    'training': TrainConfig,
    'selftrain': SelfTrainConfig,
}


def _keys(cls: Type) -> List[dataclasses.Field]:
    return [f for f in dataclasses.fields(cls) if f.name not in _NESTED]


def _default(field: dataclasses.Field) -> Any:
    if field.default is not dataclasses.MISSING:
        return field.default
    return field.default_factory()


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'yes', 'true', 'on'):
        return True
    if value in ('0', 'no', 'false', 'off'):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_tuple(raw: str, length: int) -> Tuple[float, ...]:
    values = tuple(float(part) for part in raw.split(','))
    if len(values) != length:
        raise ValueError(
            f"expected {length} comma-separated values, got {len(values)}"
        )
    return values


def parse_value(raw: str, default: Any) -> Any:
    """Parse `raw` into the type of `default`."""
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, Enum):
        return type(default)(raw.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, GridShape):
        values = _parse_tuple(raw, 3)
        if any(v != int(v) for v in values):
            raise ValueError(f"expected integers, got {raw!r}")
        return GridShape(*(int(v) for v in values))
    if isinstance(default, Spacing):
        return Spacing(*_parse_tuple(raw, 3))
    if isinstance(default, tuple):
        return _parse_tuple(raw, len(default))
    return raw.strip()


def format_value(value: Any) -> str:
    """Inverse of :func:`parse_value`."""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, GridShape):
        return f'{value.nx}, {value.ny}, {value.nz}'
    if isinstance(value, Spacing):
        return ', '.join(repr(d) for d in (value.dx, value.dy, value.dz))
    if isinstance(value, tuple):
        return ', '.join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build(
    cls: Type, section: str, values: Mapping[str, str], **nested: Any
) -> Any:
    kwargs = dict(nested)
    for field in _keys(cls):
        if field.name not in values:
            continue
        try:
            kwargs[field.name] = parse_value(
                values[field.name], _default(field)
            )
        except (ValueError, InvalidVolume) as e:
            raise InvalidConfigValue(f'{section}.{field.name}', str(e)) from e
    return cls(**kwargs)


def parse_config(text: str) -> ToolkitConfig:
    """Build a :class:`ToolkitConfig` from INI text.

    :raises InvalidConfigKeys: Naming every unknown section or key.
    :raises InvalidConfigValue: Naming the first value that does not parse
        or breaks a constraint.
    """
    parser = ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except ConfigParserError as e:
        raise InvalidOperation(f"Unreadable configuration: {e}") from e

    unknown = []
    for section in parser.sections():
        if section not in SECTIONS:
            unknown.append(section)
            continue
        known = {f.name for f in _keys(SECTIONS[section])}
        unknown.extend(
            f'{section}.{key}' for key in parser[section] if key not in known
        )
    if unknown:
        raise InvalidConfigKeys(unknown)

    def _values(section: str) -> Mapping[str, str]:
        return parser[section] if parser.has_section(section) else {}

    geometry = _build(StructureGeometry, 'structures', _values('structures'))
    phantom = _build(
        PhantomConfig, 'phantom', _values('phantom'), geometry=geometry
    )
    corruption = _build(CorruptionConfig, 'corruption', _values('corruption'))
    training = _build(TrainConfig, 'training', _values('training'))
    selftrain = _build(
        SelfTrainConfig, 'selftrain', _values('selftrain'), train_cfg=training
    )
    return ToolkitConfig(phantom, corruption, training, selftrain)


def load_config(path: Optional[str] = None) -> ToolkitConfig:
    """Read the configuration file at `path`; defaults if `path` is None.

    :raises InvalidOperation: If the file cannot be read.
    """
    if path is None:
        return ToolkitConfig()
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise InvalidOperation(
            f"Cannot read configuration '{path}': {e.strerror}"
        ) from e
    return parse_config(text)


def config_sections(cfg: ToolkitConfig) -> Dict[str, Dict[str, str]]:
    """Every effective setting as strings, section by section."""
    objects = {
        'phantom': cfg.phantom,
        'structures': cfg.structures,
        'corruption': cfg.corruption,
        'training': cfg.training,
        'selftrain': cfg.selftrain,
    }
    return {
        section: {
            f.name: format_value(getattr(obj, f.name))
            for f in _keys(type(obj))
        }
        for section, obj in objects.items()
    }


def config_to_ini(cfg: ToolkitConfig) -> str:
    """The configuration in the format :func:`parse_config` reads."""
    parser = ConfigParser(interpolation=None)
    for section, values in config_sections(cfg).items():
        parser[section] = values
    out = StringIO()
    parser.write(out)
    return out.getvalue()
