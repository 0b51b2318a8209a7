"""Work-directory layout and locking.

One domain's artifacts live under <workdir>/<domain>/: stage image
directories, stage manifests, model checkpoints, and reports. All paths in
manifests are relative to the domain root so manifests are byte-portable
across machines.
"""

import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from .errors import StageError


@dataclass(frozen=True)
class Workspace:
    workdir: Path
    domain: str

    def __post_init__(self):
        object.__setattr__(self, "workdir", Path(self.workdir))

    @property
    def root(self) -> Path:
        return self.workdir / self.domain

    def stage_dir(self, stage: str) -> Path:
        path = self.root / stage
        path.mkdir(parents=True, exist_ok=True)
        return path

    def manifest_path(self, stage: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / f"{stage}.manifest.jsonl"

    def errors_path(self, stage: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / f"{stage}.errors.jsonl"

    @property
    def models_dir(self) -> Path:
        path = self.root / "models"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def embeddings_dir(self) -> Path:
        path = self.root / "embeddings"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def relpath(self, path: Path) -> str:
        return os.path.relpath(path, self.root)

    @contextmanager
    def lock(self):
        """One stage at a time per workdir."""
        self.workdir.mkdir(parents=True, exist_ok=True)
        lock_path = self.workdir / ".lock"
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError(
                f"workdir {self.workdir} is locked by another stage run "
                f"(remove {lock_path} if that run crashed)"
            )
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock_path.unlink(missing_ok=True)
