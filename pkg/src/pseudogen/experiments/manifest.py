"""Run manifest: ``key: value`` lines plus one hash line per emitted file."""
from __future__ import annotations

import hashlib
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__

MANIFEST_NAME = "manifest.txt"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_text: str
    seed: int
    threads: int
    wall_clock_s: float = 0.0
    warnings: list[str] = field(default_factory=list)
    files: list[tuple[str, str]] = field(default_factory=list)

    @property
    def versions(self) -> dict[str, str]:
        return {"pseudogen": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version()}

    def add_files(self, out_dir, names) -> None:
        for name in names:
            self.files.append((name, sha256_file(Path(out_dir) / name)))

    def render(self) -> str:
        lines = [
            f"command: {self.command}",
            f"config: {self.config_path}",
            f"config_sha256: {hashlib.sha256(self.config_text.encode()).hexdigest()}",
            f"seed: {self.seed}",
            f"threads: {self.threads}",
        ]
        lines += [f"version_{k}: {v}" for k, v in self.versions.items()]
        lines.append(f"wall_clock_s: {self.wall_clock_s:.3f}")
        lines += [f"warning: {w}" for w in self.warnings]
        lines += [f"file: {name} sha256={digest}" for name, digest in self.files]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(self.render())
        return path


def read_manifest_hashes(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("file: "):
            name, digest = line[len("file: "):].rsplit(" sha256=", 1)
            out[name] = digest
    return out
