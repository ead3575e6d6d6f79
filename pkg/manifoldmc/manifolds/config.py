"""
Run configuration for the management commands.

Config files are flat `key = value` text with dotted section names, read
with python-dotenv:

    # torus marginals
    manifold.name = torus
    manifold.R = 1.0
    manifold.r = 0.5
    sampler.s = 0.5
    sampler.n_steps = 1e6
    sampler.stride = 100
    run.seed = 12345

Every key is declared in SCHEMA. Unknown keys, unparsable values and
non-positive numbers raise ConfigError.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Tuple

from dotenv import dotenv_values

from manifolds.exceptions import ConfigError, DomainError
from manifolds.utils.core import NewtonParams

logger = logging.getLogger(__name__)

MODES = ('sample', 'integrate', 'analyze-nu', 'validate')


@dataclass(frozen=True)
class Field:
    kind: str
    default: Any = None
    # numbers must be > 0 (or >= 0 with allow_zero)
    positive: bool = True
    allow_zero: bool = False
    choices: Optional[Tuple[str, ...]] = None


SCHEMA = {
    'run.mode': Field('str', None, choices=MODES),
    'run.seed': Field('int', 0, allow_zero=True),
    'run.out': Field('str', None),

    'manifold.name': Field('str', None),
    'manifold.density': Field('str', 'uniform', choices=('uniform', 'rigidity', 'exp-cos')),
    'manifold.R': Field('float', 1.0),
    'manifold.r': Field('float', 0.5),
    'manifold.n': Field('int', 3),
    'manifold.N': Field('int', 4),
    'manifold.dim': Field('int', 2),
    'manifold.edges': Field('str', None),

    'sampler.s': Field('float', None),
    'sampler.n_steps': Field('int', 100_000, allow_zero=True),
    'sampler.stride': Field('int', 100),
    'sampler.tol': Field('float', 1e-12),
    'sampler.nmax': Field('int', 10),
    'sampler.reverse_check': Field('bool', True),
    'sampler.reverse_match_tol': Field('float', None),
    'sampler.observables': Field('strs', None),
    'sampler.bins': Field('int', 50),

    'integrate.n_t': Field('int', 100_000),
    'integrate.k': Field('int', 2),
    'integrate.n_initial': Field('int', 10_000),
    'integrate.initial_stride': Field('int', 5),
    'integrate.burn_in': Field('float', 0.01, allow_zero=True),
    'integrate.n_probe': Field('int', 100_000),
    'integrate.pair_steps': Field('int', 5_000),
    'integrate.angle_tol_factor': Field('float', 1e-3),
    'integrate.probe_start': Field('float', 0.5),
    'integrate.stage_step_fraction': Field('float', None),
    'integrate.n_k': Field('int', None),
    'integrate.x0': Field('floats', None, positive=False),
    'integrate.r0': Field('float', None),
    'integrate.rk': Field('float', None),
    'integrate.parallel': Field('bool', False),
    'integrate.workers': Field('int', 4),

    'analyze.d': Field('ints', (1, 2, 3, 4, 5)),
    'analyze.nu_min': Field('float', 1.1),
    'analyze.nu_max': Field('float', 100.0),
    'analyze.points': Field('int', 200),

    'validate.suite': Field('str', 'all'),
    'validate.scale': Field('float', 1.0),
}

MANIFOLD_PARAM_KEYS = ('R', 'r', 'n', 'N', 'dim', 'edges', 'density')

TRUE_VALUES = ('1', 'true', 'yes', 'on')
FALSE_VALUES = ('0', 'false', 'no', 'off')


def _parse_int(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"{raw!r} is not an integer")
    return int(value)


def parse_value(key: str, raw: Optional[str]) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    if raw is None:
        raise ConfigError(f"config key {key!r} has no value")
    spec = SCHEMA[key]
    raw = raw.strip()
    try:
        if spec.kind == 'int':
            value = _parse_int(raw)
        elif spec.kind == 'float':
            value = float(raw)
        elif spec.kind == 'bool':
            lowered = raw.lower()
            if lowered not in TRUE_VALUES + FALSE_VALUES:
                raise ValueError(f"{raw!r} is not a boolean")
            value = lowered in TRUE_VALUES
        elif spec.kind == 'floats':
            value = tuple(float(token) for token in raw.split(','))
        elif spec.kind == 'ints':
            value = tuple(_parse_int(token) for token in raw.split(','))
        elif spec.kind == 'strs':
            value = tuple(token.strip() for token in raw.split(',') if token.strip())
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {exc}") from exc

    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"{key} must be one of {', '.join(spec.choices)}, got {value!r}")
    if spec.positive and spec.kind in ('int', 'float', 'ints', 'floats'):
        numbers = value if isinstance(value, tuple) else (value,)
        for number in numbers:
            if number < 0 or (number == 0 and not spec.allow_zero):
                raise ConfigError(f"{key} must be {'non-negative' if spec.allow_zero else 'positive'}, got {number}")
    return value


def parse_override(text: str) -> Tuple[str, str]:
    if '=' not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split('=', 1)
    return key.strip(), raw


class RunConfig:
    """Resolved run configuration: schema defaults, then file values, then overrides."""

    def __init__(self, values: dict, source: Optional[Path] = None):
        self.values = values
        self.source = source

    @classmethod
    def load(
        cls,
        path=None,
        overrides: Iterable[str] = (),
        seed: Optional[int] = None,
        out: Optional[str] = None,
        mode: Optional[str] = None,
    ) -> 'RunConfig':
        raw = {}
        source = None
        if path is not None:
            source = Path(path)
            if not source.is_file():
                raise ConfigError(f"config file {source} does not exist")
            raw.update(dotenv_values(source, interpolate=False))
        for text in overrides:
            key, value = parse_override(text)
            raw[key] = value

        values = {key: spec.default for key, spec in SCHEMA.items()}
        for key, value in raw.items():
            values[key] = parse_value(key, value)
        if seed is not None:
            if seed < 0:
                raise ConfigError(f"seed must be non-negative, got {seed}")
            values['run.seed'] = seed
        if out is not None:
            values['run.out'] = out
        if mode is not None:
            values['run.mode'] = mode

        config = cls(values, source)
        logger.debug(f"Loaded config from {source or '<defaults>'} (hash {config.config_hash})")
        return config

    def __getitem__(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        value = self.values.get(key)
        return default if value is None else value

    @property
    def seed(self) -> int:
        return int(self.values['run.seed'])

    @property
    def mode(self) -> Optional[str]:
        return self.values['run.mode']

    def output_dir(self, fallback: Path) -> Path:
        out = self.values['run.out']
        return Path(out) if out else Path(fallback)

    @property
    def config_hash(self) -> str:
        """md5 of the resolved config, ignoring the seed and the output directory."""
        relevant = {key: value for key, value in self.values.items() if key not in ('run.seed', 'run.out')}
        canonical = json.dumps(relevant, sort_keys=True, default=str)
        return hashlib.md5(canonical.encode()).hexdigest()

    def manifold_name(self) -> str:
        name = self.values['manifold.name']
        if not name:
            raise ConfigError("manifold.name is required")
        return name

    def manifold_params(self) -> dict:
        params = {key: self.values[f"manifold.{key}"] for key in MANIFOLD_PARAM_KEYS}
        edges = params.get('edges')
        if edges and self.source is not None and not Path(edges).is_absolute():
            params['edges'] = str(self.source.parent / edges)
        if edges is None:
            params.pop('edges')
        return params

    def newton_params(self) -> NewtonParams:
        try:
            return NewtonParams(tol=self.values['sampler.tol'], nmax=self.values['sampler.nmax'])
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    def as_dict(self) -> dict:
        return {key: (list(value) if isinstance(value, tuple) else value) for key, value in self.values.items()}
