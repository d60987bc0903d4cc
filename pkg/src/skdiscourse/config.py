"""Pipeline configuration: one YAML file validated against the schema
shipped with the package.

Paths inside the config resolve relative to the config file location.
Every command records the config hash in its run manifest so results
trace back to the exact configuration that produced them. The only
environment variable the package reads is SKDISCOURSE_DEVICE (compute
device); everything else must come through the config file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import yaml


def _schema() -> dict:
    data = resources.files("skdiscourse.data").joinpath("config_schema.json")
    return json.loads(data.read_text(encoding="utf-8"))


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    source_path: Path | None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        validate_config(raw)
        return cls(raw=raw, base_dir=path.parent.resolve(), source_path=path)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        validate_config(raw)
        return cls(raw=raw, base_dir=Path(base_dir).resolve(), source_path=None)

    # -- accessors ------------------------------------------------------

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.raw.get(key, default)

    def section(self, name: str) -> dict:
        value = self.raw.get(name, {})
        return dict(value) if isinstance(value, dict) else {}

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def workdir(self) -> Path:
        return self.resolve(self.raw.get("workdir", "runs/default"))

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_config(raw: dict) -> None:
    """Validate against the published schema; collect every violation
    into one error with JSON-path locations."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for error in errors:
            location = "$" + "".join(
                f"[{p!r}]" if isinstance(p, str) else f"[{p}]"
                for p in error.absolute_path
            )
            lines.append(f"  {location}: {error.message}")
        raise ConfigError("invalid configuration:\n" + "\n".join(lines))


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(
    config: PipelineConfig,
    command: str,
    inputs: dict[str, str | Path],
    outputs: list[str | Path],
) -> Path:
    """Record what a command ran from and produced. The manifest links
    outputs to the config hash and fingerprints every input file."""
    import skdiscourse

    manifest_dir = config.workdir / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config.config_hash(),
        "config_path": str(config.source_path) if config.source_path else None,
        "seed": config.seed,
        "inputs": {
            name: {
                "path": str(path),
                "sha256": file_sha256(path) if Path(path).is_file() else None,
            }
            for name, path in inputs.items()
        },
        "outputs": [str(p) for p in outputs],
        "versions": {
            "skdiscourse": getattr(skdiscourse, "__version__", "0"),
        },
    }
    path = manifest_dir / f"{command}.json"
    path.write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return path
