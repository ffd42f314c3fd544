"""Small shared helpers: atomic output, fingerprints, config loading."""

from __future__ import annotations

import hashlib
import os
import shutil
import tempfile
from contextlib import contextmanager, suppress
from pathlib import Path

import numpy as np
import yaml

from cascadekit.errors import ConfigError


def fmt_float(value: float) -> str:
    """Shortest decimal string that parses back to exactly this float."""
    return repr(float(value))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text through a same-directory temp file and a final rename.

    A failure part-way never leaves a truncated file at the target path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with suppress(OSError):
            os.unlink(tmp)
        raise


@contextmanager
def staged_dir(target: str | Path):
    """Build a directory's contents in a staging area, promote on success.

    The target must not already exist with content; on any error the
    staging area is removed and the target is left untouched.
    """
    target = Path(target)
    if target.exists() and any(target.iterdir()):
        raise ConfigError(f"output directory {target} already exists and is not empty")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}."))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        target.rmdir()
    os.replace(tmp, target)


@contextmanager
def staged_files(directory: str | Path):
    """Stage several flat files, then move them into directory together.

    Nothing lands in the directory unless every staged file was written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=directory, prefix=".stage."))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for item in sorted(tmp.iterdir()):
        os.replace(item, directory / item.name)
    tmp.rmdir()


def read_yaml(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"top level of {path} must be a mapping")
    return raw


def array_fingerprint(*arrays: np.ndarray) -> str:
    """Content hash over dtype, shape, and bytes of the given arrays."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        digest.update(str(arr.dtype).encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()
