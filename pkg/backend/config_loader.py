import os
import re
import typing
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from filter_errors import ConfigurationError
from models import ExperimentConfig


class ConfigLoader:
    """Reads flat `key = value` experiment files into an ExperimentConfig"""

    line_pattern = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$')

    def read_file(self, file_path: str) -> str:
        """Read a config file with UTF-8 encoding"""
        try:
            with open(file_path, 'r', encoding='utf-8') as file:
                return file.read()
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file {file_path}: {e}") from e

    def parse_text(self, text: str) -> Dict[str, str]:
        """
        Parse `key = value` lines. Blank lines and `#` comments are skipped;
        a later line overrides an earlier one.
        """
        values: Dict[str, str] = {}
        for number, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.split('#', 1)[0].strip()
            if not line:
                continue
            match = self.line_pattern.match(line)
            if not match:
                raise ConfigurationError(f"line {number}: expected 'key = value', got '{raw_line.strip()}'")
            key, value = match.groups()
            values[key] = value
        return values

    def apply_overrides(self, values: Dict[str, str], overrides: Sequence[str]) -> Dict[str, str]:
        """Apply `key=value` overrides on top of parsed values"""
        merged = dict(values)
        for override in overrides:
            match = self.line_pattern.match(override)
            if not match:
                raise ConfigurationError(f"override must look like key=value, got '{override}'")
            key, value = match.groups()
            merged[key] = value
        return merged

    def build(self, values: Dict[str, str]) -> ExperimentConfig:
        """Coerce string values into a validated ExperimentConfig"""
        coerced = {}
        for key, value in values.items():
            field = ExperimentConfig.model_fields.get(key)
            if field is not None and typing.get_origin(field.annotation) is list:
                coerced[key] = self._split_list(value)
            else:
                coerced[key] = value
        try:
            return ExperimentConfig(**coerced)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid experiment configuration: {e}") from e

    def load(self, file_path: Optional[str] = None, overrides: Sequence[str] = (),
             seed: Optional[int] = None, threads: Optional[int] = None,
             out: Optional[str] = None) -> ExperimentConfig:
        """
        Load an experiment configuration.

        Args:
            file_path: flat config file, or None for the defaults
            overrides: `key=value` strings applied after the file
            seed: root seed (the --seed flag)
            threads: worker threads (the --threads flag)
            out: output directory (the --out flag)

        Returns:
            Validated ExperimentConfig
        """
        values = self.parse_text(self.read_file(file_path)) if file_path else {}
        values = self.apply_overrides(values, overrides)
        flags = {"root_seed": seed, "threads": threads, "output_dir": out}
        for key, value in flags.items():
            if value is not None:
                values[key] = str(value)
        return self.build(values)

    def format_config(self, config: ExperimentConfig) -> str:
        """Render every field in declaration order, in the same format load() reads"""
        lines = ["# resolved experiment configuration"]
        for key in ExperimentConfig.model_fields:
            lines.append(f"{key} = {self._format_value(getattr(config, key))}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, config: ExperimentConfig, output_dir: str, name: str = "resolved.cfg") -> str:
        """Write the resolved config next to the results and return its path"""
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, name)
        with open(path, 'w', encoding='utf-8') as file:
            file.write(self.format_config(config))
        return path

    @staticmethod
    def _split_list(value: str) -> List[str]:
        return [item.strip() for item in value.split(',') if item.strip()]

    @classmethod
    def _format_value(cls, value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (list, tuple)):
            return ", ".join(cls._format_value(item) for item in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)


def load_config(file_path: Optional[str] = None, **kwargs) -> ExperimentConfig:
    return ConfigLoader().load(file_path, **kwargs)
