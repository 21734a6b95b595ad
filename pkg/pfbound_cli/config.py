"""Configuration management for pfbound (pfbound.yaml)."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from .logger import Logger

logger = Logger()

CONFIG_FILENAME = "pfbound.yaml"
LOCAL_OVERRIDE_FILENAME = "pfbound.local.yaml"

DEFAULTS: Dict[str, Any] = {
    "version": "1.0",
    "training": {
        "method": "spfb",
        "eta0": 1.0,
        "lambda": 0.1,
        "rank": None,
        "batch_size": 1000,
        "epochs": 5,
        "seed": 0,
        "schedule": "inv_t",
        "eval_every": None,
        "feature_map": "block_one_hot",
    },
    "data": {
        "test_frac": 0.2,
        "scale": "unit_norm",
        "categoricals": "error",
    },
    "grids": {
        "eta0": [0.01, 0.1, 1.0, 10.0, 100.0],
        "lambda": {
            "synthetic": 0.1,
            "adult": 0.001,
            "kmnist": 0.001,
            "fashion": 0.001,
        },
    },
    "compare": {
        "seeds": 10,
        "epsilon": 0.01,
        "tune_seeds": 2,
        "max_workers": 4,
        "reference_tol": 1.0e-10,
        "reference_max_iter": 20000,
    },
    "rate": {
        "data": "synth:{d: 10, n: 3, T: 5000, separation: 1.0, noise: 0.0, seed: 0}",
        "lambda": 0.1,
        "eta0_factor": 1.5,
        "seeds": 10,
        "batch_sizes": [1, 1000],
        "t_min": 100,
        "t_max": 10000,
        "points": 25,
        "curvatures": ["same", "independent"],
    },
    "check": {
        "seed": 0,
        "bound_validity": {"trials": 1000, "points": 50, "max_d": 20, "max_n": 10},
        "tangency": {"trials": 100, "max_d": 20, "max_n": 10},
        "beta_range": {"trials": 1000, "max_d": 20, "max_n": 10},
        "lowrank_domination": {"trials": 500, "points": 100, "max_d": 15, "max_n": 8, "ranks": [1, 3, 5]},
        "woodbury": {"trials": 200, "max_k": 5, "max_d": 30},
        "cross_term": {"trials": 200, "max_d": 30},
        "preconditioner_spectrum": {"trials": 200, "lambda": 0.1, "eta0": 0.01, "n": 3, "p": 5},
        "tolerances": {
            "enumeration": 1.0e-12,
            "bound_slack": 1.0e-10,
            "finite_difference": 1.0e-5,
            "domination": 1.0e-8,
            "linear_algebra": 1.0e-8,
            "residual": 1.0e-10,
        },
    },
    "recipes": {
        "synthetic": {
            "data": "synth:{d: 10, n: 3, T: 5000, separation: 1.0, noise: 0.0, seed: 0}",
            "format": "synth",
            "lambda": 0.1,
            "batch_size": 1000,
            "epochs": 10,
            "ranks": [1, 5, 10],
        },
        "adult": {
            "data": "data/adult.csv",
            "format": "csv",
            "label_col": -1,
            "categoricals": "integer",
            "lambda": 0.001,
            "batch_size": 1000,
            "epochs": 10,
            "ranks": [1, 5, 10, 100],
        },
        "kmnist": {
            "data": "data/kmnist_train.csv",
            "format": "csv",
            "label_col": 0,
            "lambda": 0.001,
            "batch_size": 1000,
            "epochs": 5,
            "ranks": [1, 5, 10, 100],
        },
        "fashion": {
            "data": "data/fashion_train.csv",
            "format": "csv",
            "label_col": 0,
            "lambda": 0.001,
            "batch_size": 1000,
            "epochs": 5,
            "ranks": [1, 5, 10, 100],
        },
    },
}


class Config:
    """Read pfbound configuration sourced from pfbound.yaml over built-in defaults."""

    def __init__(
        self,
        config_file: Optional[str] = None,
        base_path: Optional[Path] = None,
    ):
        """
        Initialize configuration loader.

        Args:
            config_file: Explicit path to pfbound.yaml (overrides base_path)
            base_path: Directory containing pfbound.yaml (defaults to CWD)
        """
        if config_file:
            self.config_path = Path(config_file)
        else:
            base = Path(base_path) if base_path else Path.cwd()
            self.config_path = base / CONFIG_FILENAME

        self.config: Dict[str, Any] = self._load_config()

    # --------------------------------------------------------------------- #
    # Internal helpers
    # --------------------------------------------------------------------- #
    def _deep_merge(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """Deep merge override dict into base dict."""
        result = base.copy()
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = value
        return result

    def _read_mapping(self, path: Path) -> Dict[str, Any]:
        try:
            with path.open("r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            logger.error(f"Failed to parse {path.name}: {exc}")
            return {}
        except OSError as exc:
            logger.error(f"Failed to read {path.name}: {exc}")
            return {}
        if not isinstance(loaded, dict):
            logger.warning(f"{path.name} did not contain a mapping; ignoring it")
            return {}
        return loaded

    def _load_config(self) -> Dict[str, Any]:
        """Load pfbound.yaml and pfbound.local.yaml (if present) over the defaults."""
        config_data = copy.deepcopy(DEFAULTS)

        if self.config_path.exists():
            config_data = self._deep_merge(config_data, self._read_mapping(self.config_path))
        else:
            logger.debug(f"{CONFIG_FILENAME} not found at {self.config_path}; using defaults")

        local_path = self.config_path.parent / LOCAL_OVERRIDE_FILENAME
        if local_path.exists():
            config_data = self._deep_merge(config_data, self._read_mapping(local_path))
            logger.debug(f"Loaded local overrides from {local_path}")

        return config_data

    def reload(self) -> bool:
        """
        Reload pfbound.yaml and local overrides from disk.

        Returns:
            True if reload succeeded, False otherwise
        """
        try:
            self.config = self._load_config()
            logger.info(f"Configuration reloaded from {self.config_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to reload configuration: {e}", exc_info=True)
            return False

    # --------------------------------------------------------------------- #
    # Public accessors
    # --------------------------------------------------------------------- #
    def get(self, key: str, default: Any = None) -> Any:
        """Retrieve a dotted-path value from configuration."""
        if not key:
            return self.config

        value: Any = self.config
        for part in key.split("."):
            if isinstance(value, dict) and part in value:
                value = value[part]
            else:
                return default
        return value

    def _section(self, key: str) -> Dict[str, Any]:
        section = self.get(key, {})
        return copy.deepcopy(section) if isinstance(section, dict) else {}

    def get_training_defaults(self) -> Dict[str, Any]:
        """Default training hyperparameters."""
        return self._section("training")

    def get_data_defaults(self) -> Dict[str, Any]:
        """Default preprocessing options."""
        return self._section("data")

    def get_eta0_grid(self) -> List[float]:
        """Learning-rate grid searched when a method spec gives no eta0."""
        grid = self.get("grids.eta0", [])
        return [float(v) for v in grid] if isinstance(grid, list) else []

    def get_lambda_for(self, dataset_name: str, default: Optional[float] = None) -> Optional[float]:
        """Regularization coefficient configured for a named dataset."""
        value = self.get(f"grids.lambda.{dataset_name}", default)
        return float(value) if value is not None else None

    def get_compare_settings(self) -> Dict[str, Any]:
        """Settings for the compare command."""
        return self._section("compare")

    def get_max_workers(self) -> int:
        """Maximum concurrent runs for compare."""
        return int(self.get("compare.max_workers", 4))

    def get_rate_settings(self) -> Dict[str, Any]:
        """Settings for the rate command."""
        return self._section("rate")

    def get_check_settings(self) -> Dict[str, Any]:
        """Per-suite sizes and the tolerance ladder for the check command."""
        return self._section("check")

    def get_recipe(self, name: str) -> Optional[Dict[str, Any]]:
        """Named reproduction recipe, or None."""
        recipe = self.get(f"recipes.{name}")
        return copy.deepcopy(recipe) if isinstance(recipe, dict) else None

    def get_recipe_names(self) -> List[str]:
        recipes = self.get("recipes", {})
        return sorted(recipes) if isinstance(recipes, dict) else []
