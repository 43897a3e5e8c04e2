"""
Configuration Manager for Gridshare Simulator

Handles solver tolerances, verification thresholds, sweep, output and
logging settings persisted as YAML in the user's configuration directory.
"""
import os
import copy
import yaml
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Any, Optional

from core.errors import ConfigError


TOLERANCE_ENV_VAR = "GRIDSHARE_TOL"

DEFAULT_CONFIG: Dict[str, Any] = {
    'version': '1.0.0',
    'solver': {
        'tol_pf': 1e-10,
        'max_iter_pf': 200,
        'dual_tol': 1e-8,
        'residual_tol': 1e-8,
        'max_iter_dual': 20000,
        'polish_every': 25,
        'polish_rounds': 50,
        'mu_tol': 1e-10,
        'mu_expansions': 40,
        'envelope_tol': 1e-10,
    },
    'verification': {
        'tol': 1e-6,
    },
    'network': {
        'feasibility_tol': 1e-7,
    },
    'sweep': {
        'workers': 1,
    },
    'output': {
        'directory': 'results',
        'float_format': '%.10g',
    },
    'logging': {
        'enabled': True,
        'level': 'INFO',
    },
}


@dataclass(frozen=True)
class SolverSettings:
    """Numerical settings threaded through the solvers."""

    tol_pf: float = 1e-10
    max_iter_pf: int = 200
    dual_tol: float = 1e-8
    residual_tol: float = 1e-8
    max_iter_dual: int = 20000
    polish_every: int = 25
    polish_rounds: int = 50
    mu_tol: float = 1e-10
    mu_expansions: int = 40
    envelope_tol: float = 1e-10
    feasibility_tol: float = 1e-7

    def __post_init__(self):
        for name in ('tol_pf', 'dual_tol', 'residual_tol', 'mu_tol',
                     'envelope_tol', 'feasibility_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", field=f"solver.{name}")
        for name in ('max_iter_pf', 'max_iter_dual', 'polish_every', 'polish_rounds'):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be at least 1", field=f"solver.{name}")
        if int(self.mu_expansions) < 0:
            raise ConfigError("must be non-negative", field="solver.mu_expansions")


class ConfigManager:
    """Manages simulator configuration."""

    def __init__(self, config_dir: Optional[Path] = None):
        """Initialize configuration manager.

        Args:
            config_dir: Custom configuration directory path
        """
        if config_dir:
            self.config_dir = Path(config_dir)
        else:
            # Default to user's home directory
            self.config_dir = Path.home() / ".gridshare"

        self.config_dir.mkdir(parents=True, exist_ok=True)
        self.config_file = self.config_dir / "config.yaml"

        self._config = None

    def initialize(self):
        """Create the configuration file with defaults when missing."""
        if not self.config_file.exists():
            self._create_default_config()

    def _create_default_config(self):
        """Create default configuration file."""
        with open(self.config_file, 'w') as f:
            yaml.dump(DEFAULT_CONFIG, f, default_flow_style=False)

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from file, merged over the defaults.

        Returns:
            Configuration dictionary
        """
        if self._config is None:
            loaded: Dict[str, Any] = {}
            if self.config_file.exists():
                try:
                    with open(self.config_file, 'r') as f:
                        loaded = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"cannot parse {self.config_file}: {e}")
                if not isinstance(loaded, dict):
                    raise ConfigError(f"{self.config_file} must hold a mapping")
            self._config = _merge(copy.deepcopy(DEFAULT_CONFIG), loaded)
        return self._config

    def save_config(self, config: Dict[str, Any]):
        """Save configuration to file.

        Args:
            config: Configuration dictionary to save
        """
        with open(self.config_file, 'w') as f:
            yaml.dump(config, f, default_flow_style=False)
        self._config = config

    def get_setting(self, path: str, default: Any = None) -> Any:
        """Get configuration setting by dot-notation path.

        Args:
            path: Setting path (e.g., 'solver.dual_tol')
            default: Default value if not found

        Returns:
            Setting value
        """
        config = self.load_config()
        keys = path.split('.')
        value = config

        for key in keys:
            if isinstance(value, dict):
                value = value.get(key)
                if value is None:
                    return default
            else:
                return default

        return value

    def set_setting(self, path: str, value: Any):
        """Set configuration setting by dot-notation path.

        Args:
            path: Setting path (e.g., 'verification.tol')
            value: Value to set
        """
        config = self.load_config()
        keys = path.split('.')
        current = config

        for key in keys[:-1]:
            if key not in current:
                current[key] = {}
            current = current[key]

        current[keys[-1]] = value
        self.save_config(config)

    def solver_settings(self) -> SolverSettings:
        """Build solver settings from the ``solver`` and ``network`` sections."""
        solver = self.get_setting('solver', {})
        try:
            return SolverSettings(
                tol_pf=float(solver['tol_pf']),
                max_iter_pf=int(solver['max_iter_pf']),
                dual_tol=float(solver['dual_tol']),
                residual_tol=float(solver['residual_tol']),
                max_iter_dual=int(solver['max_iter_dual']),
                polish_every=int(solver['polish_every']),
                polish_rounds=int(solver['polish_rounds']),
                mu_tol=float(solver['mu_tol']),
                mu_expansions=int(solver['mu_expansions']),
                envelope_tol=float(solver['envelope_tol']),
                feasibility_tol=float(self.get_setting('network.feasibility_tol', 1e-7)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid solver settings: {e}", field="solver")

    def verification_tolerance(self) -> float:
        """Tolerance for equilibrium and KKT checks.

        The ``GRIDSHARE_TOL`` environment variable overrides the file value.
        """
        raw = os.environ.get(TOLERANCE_ENV_VAR)
        source = TOLERANCE_ENV_VAR
        if raw is None:
            raw = self.get_setting('verification.tol', 1e-6)
            source = "verification.tol"
        try:
            tol = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"not a number: {raw!r}", field=source)
        if not tol > 0:
            raise ConfigError(f"must be positive, got {tol}", field=source)
        return tol


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base
