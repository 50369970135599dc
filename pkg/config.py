"""
Configuration management system for the Reading-Order Restoration system.
Centralizes every processing threshold in a single place with validation,
config-file loading and environment overrides.
"""

import os
import sys
import json
import yaml
import logging
import argparse
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ValidationError, validator

from modules.errors import ConfigError
from modules.grouping import GroupingParams
from modules.mask import HoughParams
from modules.rescore import RescoreParams

logger = logging.getLogger("ConfigSystem")

ENV_PREFIX = "READORDER_"
CONFIG_PATH_ENV = "READORDER_CONFIG"
FLAT_EXTENSIONS = ('.conf', '.cfg', '.txt')


# Define configuration schemas using Pydantic models
class MaskConfig(BaseModel):
    min_area: float = 50  # mask-scale pixels
    scale: int = 4  # page pixels per mask pixel
    threshold: int = 1  # 8-bit value at or above which a mask pixel is a line pixel

    class Config:
        extra = "forbid"

    @validator('min_area')
    def validate_min_area(cls, v):
        if v < 0:
            raise ValueError(f"min_area must be non-negative, got {v}")
        return v

    @validator('scale')
    def validate_scale(cls, v):
        if v < 1:
            raise ValueError(f"scale must be at least 1, got {v}")
        return v

    @validator('threshold')
    def validate_threshold(cls, v):
        if not 1 <= v <= 255:
            raise ValueError(f"threshold must be between 1 and 255, got {v}")
        return v


class LayoutConfig(BaseModel):
    slope_deg: float = 45.0
    right_to_left: bool = True

    class Config:
        extra = "forbid"

    @validator('slope_deg')
    def validate_slope(cls, v):
        if not 0 < v <= 90:
            raise ValueError(f"slope_deg must be within (0, 90], got {v}")
        return v


class MetricsConfig(BaseModel):
    dist_threshold: float = 50.0  # summed over both endpoints
    iou_thresholds: List[float] = [0.5, 0.6, 0.7]

    class Config:
        extra = "forbid"

    @validator('dist_threshold')
    def validate_distance(cls, v):
        if v <= 0:
            raise ValueError(f"dist_threshold must be positive, got {v}")
        return v

    @validator('iou_thresholds')
    def validate_thresholds(cls, v):
        if not v or any(not 0 < t <= 1 for t in v):
            raise ValueError(f"iou_thresholds must be a non-empty list within (0, 1], got {v}")
        return v


class WindowConfig(BaseModel):
    nms_iou: float = 0.5
    window_size: int = 1024
    overlap: int = 100

    class Config:
        extra = "forbid"

    @validator('nms_iou')
    def validate_iou(cls, v):
        if not 0 <= v <= 1:
            raise ValueError(f"nms_iou must be within [0, 1], got {v}")
        return v

    @validator('overlap')
    def validate_overlap(cls, v, values):
        size = values.get('window_size')
        if v < 0 or (size is not None and v >= size):
            raise ValueError(f"overlap must be within [0, window_size), got {v}")
        return v


class PipelineConfig(BaseModel):
    workers: int = 1

    class Config:
        extra = "forbid"

    @validator('workers')
    def validate_workers(cls, v):
        if v < 1:
            raise ValueError(f"workers must be at least 1, got {v}")
        return v


class AppConfig(BaseModel):
    mask: MaskConfig = MaskConfig()
    hough: HoughParams = HoughParams()
    layout: LayoutConfig = LayoutConfig()
    grouping: GroupingParams = GroupingParams()
    rescore: RescoreParams = RescoreParams()
    metrics: MetricsConfig = MetricsConfig()
    windows: WindowConfig = WindowConfig()
    pipeline: PipelineConfig = PipelineConfig()
    debug_mode: bool = False

    class Config:
        extra = "forbid"


SECTIONS = tuple(name for name in AppConfig.__fields__ if name != "debug_mode")


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_flat_config(text: str, source: str = "<text>") -> Dict[str, Any]:
    """
    Parse the flat key-value format: one `section.key = value` per line,
    `#` starts a comment, values are YAML scalars or lists.
    """
    data: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{number}: expected 'section.key = value', got {raw.strip()!r}")
        name, value = (part.strip() for part in line.split('=', 1))
        try:
            parsed = yaml.safe_load(value) if value else None
        except yaml.YAMLError as e:
            raise ConfigError(f"{source}:{number}: cannot parse value {value!r}: {e}")
        if '.' in name:
            section, key = name.split('.', 1)
            data.setdefault(section, {})[key] = parsed
        else:
            data[name] = parsed
    return data


def format_flat_config(config_dict: Dict[str, Any]) -> str:
    lines = []
    for name, value in config_dict.items():
        if isinstance(value, dict):
            for key, item in value.items():
                lines.append(f"{name}.{key} = {json.dumps(item)}")
        else:
            lines.append(f"{name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


class ConfigManager:
    """
    Manages application configuration with support for:
    - Default configuration
    - Configuration file (YAML, JSON or flat key-value)
    - Environment variables
    - Command-line overrides
    """

    def __init__(self):
        self.config = AppConfig()
        self.config_file_path = None

    @classmethod
    def from_sources(cls, file_path: Optional[str] = None, use_environment: bool = True) -> "ConfigManager":
        """Defaults, then the config file (explicit or READORDER_CONFIG), then environment overrides."""
        manager = cls()
        file_path = file_path or os.environ.get(CONFIG_PATH_ENV)
        if file_path:
            manager.load_config_file(file_path)
        if use_environment:
            manager.load_environment_variables()
        return manager

    def _apply(self, data: Dict[str, Any], source: str) -> None:
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: configuration must be a mapping, got {type(data).__name__}")
        try:
            self.config = AppConfig.parse_obj(_merge(self.config.dict(), data))
        except ValidationError as e:
            raise ConfigError(f"{source}: invalid configuration: {e}")

    def load_config_file(self, file_path: str) -> None:
        """Load configuration from a YAML, JSON or flat key-value file."""
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read configuration file {file_path}: {e}")

        if file_path.endswith(('.yaml', '.yml')):
            try:
                config_data = yaml.safe_load(text) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{file_path}: malformed YAML: {e}")
        elif file_path.endswith('.json'):
            try:
                config_data = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{file_path}: malformed JSON: {e}")
        elif file_path.endswith(FLAT_EXTENSIONS):
            config_data = parse_flat_config(text, file_path)
        else:
            raise ConfigError(f"Unsupported file format: {file_path}")

        self._apply(config_data, file_path)
        self.config_file_path = file_path
        logger.info(f"Loaded configuration from {file_path}")

    def load_environment_variables(self) -> None:
        """
        Load configuration from environment variables.
        Environment variables should be in the format:
        READORDER_SECTION_KEY=value

        For example:
        READORDER_HOUGH_MERGE_INTERCEPT_PX=150
        READORDER_DEBUG_MODE=true
        """
        overrides: Dict[str, Any] = {}
        for name, value in sorted(os.environ.items()):
            if not name.startswith(ENV_PREFIX) or name == CONFIG_PATH_ENV:
                continue
            parts = name[len(ENV_PREFIX):].lower().split('_', 1)
            if parts == ['debug', 'mode']:
                overrides['debug_mode'] = yaml.safe_load(value)
                continue
            if len(parts) != 2 or parts[0] not in SECTIONS:
                logger.warning(f"Ignoring unrecognized environment variable {name}")
                continue
            section, key = parts
            overrides.setdefault(section, {})[key] = yaml.safe_load(value)
        if overrides:
            self._apply(overrides, "environment")
            logger.debug(f"Applied environment overrides for {', '.join(sorted(overrides))}")

    def set_value(self, section: str, key: str, value: Any) -> None:
        """Apply one override, e.g. from a command-line flag."""
        self._apply({section: {key: value}}, f"override {section}.{key}")

    def save_config(self, file_path: Optional[str] = None) -> bool:
        """Save the current configuration to a file."""
        if file_path is None:
            if self.config_file_path is None:
                logger.error("No configuration file path specified")
                return False
            file_path = self.config_file_path
        return self._write(self.config, file_path, "Saved configuration")

    def get_config(self) -> AppConfig:
        """Get the current configuration."""
        return self.config

    def generate_default_config(self, file_path: str) -> bool:
        """Generate a default configuration file."""
        return self._write(AppConfig(), file_path, "Generated default configuration")

    def _write(self, config: AppConfig, file_path: str, action: str) -> bool:
        config_dict = config.dict()
        try:
            if file_path.endswith(('.yaml', '.yml')):
                text = yaml.safe_dump(config_dict, default_flow_style=False, sort_keys=False)
            elif file_path.endswith('.json'):
                text = json.dumps(config_dict, indent=2) + "\n"
            elif file_path.endswith(FLAT_EXTENSIONS):
                text = format_flat_config(config_dict)
            else:
                logger.error(f"Unsupported file format: {file_path}")
                return False
            with open(file_path, 'w', encoding='utf-8') as f:
                f.write(text)
            logger.info(f"{action} at {file_path}")
            return True

        except Exception as e:
            logger.error(f"Error writing configuration file: {str(e)}")
            return False


# Command-line tool for configuration management
def main():
    """Command-line tool for managing configuration."""
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    parser = argparse.ArgumentParser(description='Reading-Order Restoration Configuration Manager')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    # Generate default config
    generate_parser = subparsers.add_parser('generate', help='Generate default configuration')
    generate_parser.add_argument('output', help='Output file path (.yaml, .json or .conf)')

    # Validate config file
    validate_parser = subparsers.add_parser('validate', help='Validate configuration file')
    validate_parser.add_argument('config_file', help='Configuration file to validate')

    # Convert config format
    convert_parser = subparsers.add_parser('convert', help='Convert configuration file format')
    convert_parser.add_argument('input', help='Input configuration file')
    convert_parser.add_argument('output', help='Output configuration file')

    # Parse arguments
    args = parser.parse_args()

    # Create config manager
    config_manager = ConfigManager()

    # Execute command
    if args.command == 'generate':
        if config_manager.generate_default_config(args.output):
            print(f"Generated default configuration at {args.output}")
        else:
            print("Failed to generate default configuration")
            sys.exit(1)

    elif args.command == 'validate':
        try:
            config_manager.load_config_file(args.config_file)
        except ConfigError as e:
            print(f"Configuration file {args.config_file} is invalid: {e}")
            sys.exit(1)
        print(f"Configuration file {args.config_file} is valid")

    elif args.command == 'convert':
        try:
            config_manager.load_config_file(args.input)
        except ConfigError as e:
            print(f"Failed to load configuration from {args.input}: {e}")
            sys.exit(1)
        if config_manager.save_config(args.output):
            print(f"Converted configuration from {args.input} to {args.output}")
        else:
            print(f"Failed to save configuration to {args.output}")
            sys.exit(1)

    else:
        parser.print_help()


if __name__ == "__main__":
    main()
