"""Experiment harness: run configuration, orchestration commands and CLI."""
from modelock.harness.config import ConfigError, config_hash, default_config, load_config

__all__ = ["ConfigError", "config_hash", "default_config", "load_config"]
