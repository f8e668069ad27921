"""
Run configuration

Settings come from a sectioned key=value file ([model], [train], [data],
[run]) with command-line overrides on top. Environment variables are not read.
"""

import configparser
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from ..exceptions import ConfigError
from ..models import ModelConfig, TrainConfig

SECTIONS = ("model", "train", "data", "run")

_config_path: ContextVar[Optional[Path]] = ContextVar("pgmotion_config_path", default=None)


class DataSettings(BaseModel):
    """Where windows come from"""
    model_config = ConfigDict(extra="forbid")

    root: Optional[str] = Field(default=None, description="Corpus directory holding manifest.json")
    train_split: str = "train"
    val_split: str = "val"
    test_split: str = "test"
    stride: int = Field(default=1, ge=1)


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out: str = "runs/default"
    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)

    @field_validator("log_level")
    @classmethod
    def validate_level(cls, v):
        if v.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level '{v}'")
        return v.upper()


class IniConfigSource(PydanticBaseSettingsSource):
    """Reads the file named by the active load() call"""

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self._read().get(field_name), field_name, False

    def _read(self) -> Dict[str, Dict[str, str]]:
        path = _config_path.get()
        if path is None:
            return {}
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read '{path}': {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError("config", f"malformed config '{path}': {exc}") from exc
        unknown = [s for s in parser.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigError(unknown[0], f"unknown section [{unknown[0]}] in '{path}'")
        return {section: dict(parser.items(section)) for section in parser.sections()}

    def __call__(self) -> Dict[str, Any]:
        return self._read()


class RunSettings(BaseSettings):
    """Everything one CLI invocation needs"""
    model_config = SettingsConfigDict(extra="forbid", case_sensitive=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataSettings = Field(default_factory=DataSettings)
    run: RunSection = Field(default_factory=RunSection)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, IniConfigSource(settings_cls)

    @classmethod
    def load(cls, path: Optional[Path] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> "RunSettings":
        """Defaults < file at `path` < overrides"""
        token = _config_path.set(Path(path) if path else None)
        try:
            return cls(**(overrides or {}))
        except ValidationError as exc:
            error = exc.errors()[0]
            location = ".".join(str(part) for part in error["loc"])
            raise ConfigError(location or "config", error["msg"]) from exc
        finally:
            _config_path.reset(token)


def parse_overrides(assignments: Iterable[str]) -> Dict[str, Dict[str, str]]:
    """["train.epochs=0", "model.features=8"] -> {"train": {"epochs": "0"}, "model": {"features": "8"}}"""
    overrides: Dict[str, Dict[str, str]] = {}
    for item in assignments:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(item, "overrides take the form section.key=value")
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section '{section}'")
        overrides.setdefault(section, {})[name] = value.strip()
    return overrides


def merge_overrides(*layers: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    merged: Dict[str, Dict[str, Any]] = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(values)
    return merged
