"""
Run settings: defaults, environment overrides and the validated RunConfig
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional

from backend.errors import ConfigError
from backend.strategy import GUIDED_STRATEGY

logger = logging.getLogger(__name__)

MODES = ('run', 'explore', 'abstract', 'replay')
FORMATS = ('text', 'json')

DEFAULT_SETTINGS = {
    'depth_bound': 200,
    'state_bound': 100000,
    'alias_depth': 3,
    'output_format': 'text',
    'workers': 1,
    'strategy': GUIDED_STRATEGY,
}

ENV_OVERRIDES = {
    'SCOOPLOCK_DEPTH': 'depth_bound',
    'SCOOPLOCK_STATES': 'state_bound',
    'SCOOPLOCK_ALIAS_DEPTH': 'alias_depth',
    'SCOOPLOCK_WORKERS': 'workers',
}


def apply_environment(settings: Dict, environ=None) -> Dict:
    """Overlay SCOOPLOCK_* variables; SCOOPLOCK_SEED is accepted and ignored"""
    environ = os.environ if environ is None else environ
    merged = dict(settings)
    for variable, key in ENV_OVERRIDES.items():
        value = environ.get(variable)
        if value is None or value == '':
            continue
        try:
            merged[key] = int(value)
        except ValueError:
            raise ConfigError(f"{variable} must be an integer, got {value!r}") from None
    if environ.get('SCOOPLOCK_SEED'):
        logger.debug("SCOOPLOCK_SEED is set but exploration is deterministic; ignoring it")
    return merged


@dataclass(frozen=True)
class RunConfig:
    input_path: str
    mode: str
    strategy: str = GUIDED_STRATEGY
    depth_bound: int = DEFAULT_SETTINGS['depth_bound']
    state_bound: int = DEFAULT_SETTINGS['state_bound']
    alias_depth: int = DEFAULT_SETTINGS['alias_depth']
    output_format: str = DEFAULT_SETTINGS['output_format']
    deadlock_check: Optional[bool] = None
    workers: int = DEFAULT_SETTINGS['workers']
    trace_path: Optional[str] = None
    output_path: Optional[str] = None

    def validate(self) -> "RunConfig":
        """
        Raises:
            ConfigError: unknown mode or format, non-positive bounds, replay without a trace
        """
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r} (expected one of {', '.join(MODES)})")
        if self.output_format not in FORMATS:
            raise ConfigError(f"unknown format {self.output_format!r} (expected text or json)")
        for name in ('depth_bound', 'state_bound', 'alias_depth', 'workers'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.mode == 'replay' and not self.trace_path:
            raise ConfigError("replay needs a trace file")
        return self

    @staticmethod
    def from_settings(settings: Dict, **overrides) -> "RunConfig":
        values = {
            'strategy': settings.get('strategy', GUIDED_STRATEGY),
            'depth_bound': settings.get('depth_bound', DEFAULT_SETTINGS['depth_bound']),
            'state_bound': settings.get('state_bound', DEFAULT_SETTINGS['state_bound']),
            'alias_depth': settings.get('alias_depth', DEFAULT_SETTINGS['alias_depth']),
            'output_format': settings.get('output_format', DEFAULT_SETTINGS['output_format']),
            'workers': settings.get('workers', DEFAULT_SETTINGS['workers']),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**values).validate()
