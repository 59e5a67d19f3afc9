"""Run manifests: enough provenance to re-execute a CLI run byte for byte."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


def _tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("rdecusum")
    except Exception:
        return "unknown"


def config_hash(command: str, parameters: dict) -> str:
    """SHA-256 over the command and every output-affecting parameter.

    Timestamps never enter the hash; two runs with equal hashes must produce
    byte-identical output files.
    """
    payload = json.dumps(
        {"command": command, "parameters": parameters, "tool_version": _tool_version()},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    parameters: dict
    base_seed: int | None
    tool_version: str
    config_sha256: str
    created_at: str
    outputs: dict = field(default_factory=dict)  # filename -> sha256

    @classmethod
    def build(
        cls,
        command: str,
        parameters: dict,
        base_seed: int | None,
        output_paths: dict[str, Path] | None = None,
    ) -> "RunManifest":
        outputs = {
            name: file_sha256(path) for name, path in (output_paths or {}).items()
        }
        return cls(
            command=command,
            parameters=parameters,
            base_seed=base_seed,
            tool_version=_tool_version(),
            config_sha256=config_hash(command, parameters),
            created_at=datetime.now(timezone.utc).isoformat(),
            outputs=outputs,
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def load_manifest(path: str | Path) -> RunManifest:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunManifest(**data)


def manifest_path_for(output_path: str | Path) -> Path:
    return Path(str(output_path) + ".manifest.json")
