"""Plain-text data files: tab-separated manifests, key=value configs, run manifests."""

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataError


def read_manifest(path) -> list[tuple[str, ...]]:
    """Rows of tab-separated columns; '#' lines and blanks skipped.

    All data rows must agree on column count.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    rows: list[tuple[str, ...]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = tuple(part.strip() for part in line.split("\t"))
        if rows and len(row) != len(rows[0]):
            raise DataError(
                f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(row)}"
            )
        rows.append(row)
    return rows


def write_manifest(path, rows, header=None) -> None:
    lines = []
    if header is not None:
        lines.append("# " + "\t".join(header))
    for row in rows:
        lines.append("\t".join(str(c) for c in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config(path) -> dict[str, str]:
    """key=value per line; '#' comments and blank lines ignored; keys unique."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise DataError(f"{path}:{lineno}: empty key")
        if key in out:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k}={v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def coerce_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot read {text!r} as a boolean")


@dataclass
class RunManifest:
    """Reproducibility record written beside every command's outputs.

    Deliberately timestamp-free so identical runs write identical bytes.
    """

    subcommand: str
    version: str
    seed: int | None = None
    config_path: str | None = None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = ["# run manifest", f"tool demoire {self.version}", f"command {self.subcommand}"]
        if self.seed is not None:
            lines.append(f"seed {self.seed}")
        if self.config_path is not None:
            lines.append(f"config {self.config_path}")
        lines.extend(f"input {p}" for p in self.inputs)
        lines.extend(f"output {p}" for p in self.outputs)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.render(), encoding="utf-8")
