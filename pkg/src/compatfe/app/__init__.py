"""Configuration, drivers, output formats and the command line interface."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .expr import ExpressionError, compile_expression

__all__ = ["ConfigError", "ExpressionError", "RunConfig", "compile_expression", "load_config", "parse_config"]
