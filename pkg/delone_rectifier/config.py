"""
Configuration management for the Delone Rectifier.
Handles loading/saving config from JSON or YAML and provides access to config values.
"""

import copy
import json
import logging
import os
from typing import Any, Dict, Optional

import yaml

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = 'DELONE_OUTPUT_DIR'
ENV_CONFIG = 'DELONE_CONFIG'


class Config:
    """Configuration management for the Delone Rectifier."""

    DEFAULT_CONFIG = {
        'generation': {
            'max_tiles': 2_000_000
        },
        'geometry': {
            'snap_tol': 1e-9
        },
        'spectral': {
            'power_tol': 1e-12,
            'power_max_iter': 100000,
            'pisot_margin': 1e-8,
            'poly_max_n': 12
        },
        'counting': {
            'min_translates': 100,
            'fit_min_sizes': 3,
            'patch_snap': 1e-6,
            'repetitivity_grid_step': 0.5
        },
        'hierarchy': {
            'regions': 50,
            'region_cells': 64,
            'ball_trials': 200,
            'alpha_crosscheck': 0.02
        },
        'flattener': {
            'blend_width': 0.125,
            'volume_resolution': 64,
            'lipschitz_pairs': 10000
        },
        'rectifier': {
            'bisect_resolution': 1e-3,
            'd_cap': 64.0,
            'window_fraction': 0.25,
            'density_mismatch': 0.02,
            'bilip_pairs': 20000
        },
        'reporting': {
            'format': 'json',
            'svg': False
        },
        'run': {
            'seed': 0,
            'jobs': 1,
            'output_dir': 'output'
        }
    }

    def __init__(self, config_file: Optional[str] = None):
        """Initialize configuration, optionally loading from file."""
        self.config = copy.deepcopy(self.DEFAULT_CONFIG)
        self.config_file = config_file

        if config_file and os.path.exists(config_file):
            self.load_config(config_file)
        elif config_file:
            logger.debug(f"Config file {config_file} not found; using defaults")

    def load_config(self, config_file: str) -> None:
        """Load configuration from a .json, .yaml or .yml file."""
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                if config_file.endswith(('.yaml', '.yml')):
                    loaded_config = yaml.safe_load(f) or {}
                else:
                    loaded_config = json.load(f)
            if not isinstance(loaded_config, dict):
                raise ValueError("top level must be a mapping")
            self._merge_config(self.config, loaded_config)
            logger.info(f"Configuration loaded from {config_file}")
        except (OSError, ValueError, yaml.YAMLError) as e:
            logger.error(f"Error loading config file {config_file}: {e}")

    def save_config(self, config_file: Optional[str] = None) -> None:
        """Save current configuration to file."""
        file_to_save = config_file or self.config_file or "config.json"

        try:
            with open(file_to_save, 'w', encoding='utf-8') as f:
                if file_to_save.endswith(('.yaml', '.yml')):
                    yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=True)
                else:
                    json.dump(self.config, f, indent=2, sort_keys=True)
            logger.info(f"Configuration saved to {file_to_save}")
        except OSError as e:
            logger.error(f"Error saving config file {file_to_save}: {e}")

    def _merge_config(self, base: Dict, update: Dict) -> Dict:
        """Recursively merge configuration dictionaries."""
        for key, value in update.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._merge_config(base[key], value)
            else:
                base[key] = value
        return base

    def get(self, section: Optional[str] = None, key: Optional[str] = None, default: Any = None) -> Any:
        """Get configuration value."""
        if section is None:
            return self.config

        if key is None:
            return self.config.get(section, {})

        return self.config.get(section, {}).get(key, default)

    def set(self, section: str, key: Optional[str] = None, value: Any = None) -> None:
        """Set configuration value."""
        if key is None:
            if isinstance(value, dict):
                self.config[section] = value
        else:
            if section not in self.config:
                self.config[section] = {}
            self.config[section][key] = value

    def resolve(self, section: str, key: str, flag: Any = None, env: Optional[str] = None) -> Any:
        """
        Run-time value: CLI flag, then environment variable, then config file, then default.

        Args:
            section: Config section
            key: Key within the section
            flag: Value given on the command line (None if absent)
            env: Environment variable consulted when no flag is given
        """
        if flag is not None:
            return flag
        if env and os.environ.get(env):
            return os.environ[env]
        return self.get(section, key)
