"""
Run bookkeeping: canonical JSON, input digests, run manifests and locks.

Author: EgoLeak Team
Version: 1.0.0
"""

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Union

from config import Config
from utils.constants import LOCK_FILE
from utils.error_handling import RunLockError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RUN_MANIFEST_SUFFIX = ".run.json"


def canonical_json(payload: Any) -> str:
    """Sorted keys, 2-space indent, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_digest(config_echo: Mapping[str, Any]) -> str:
    """run_id: first 12 hex chars of the sha256 of the canonical config echo."""
    return hashlib.sha256(canonical_json(dict(config_echo)).encode("utf-8")).hexdigest()[:12]


def sha256_path(path: PathLike) -> str:
    """
    Digest of a file, or of a directory's visible files in name order.

    Hidden files (the lock file among them) are skipped.
    """
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            relative = child.relative_to(path)
            if any(part.startswith(".") for part in relative.parts):
                continue
            digest.update(relative.as_posix().encode("utf-8"))
            digest.update(child.read_bytes())
    else:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def utc_timestamp(pinned: bool = False) -> Optional[str]:
    """
    ISO-8601 UTC time from SOURCE_DATE_EPOCH when set.

    Without SOURCE_DATE_EPOCH, ``pinned=True`` returns None and otherwise the wall clock.
    """
    epoch = Config.SOURCE_DATE_EPOCH or os.getenv("SOURCE_DATE_EPOCH")
    if epoch:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    elif pinned:
        return None
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def run_manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + RUN_MANIFEST_SUFFIX)


def write_run_manifest(output: PathLike, command: str, arguments: Mapping[str, Any],
                       inputs: Mapping[str, PathLike], seed: Optional[int] = None) -> Path:
    """
    Write ``<output>.run.json`` with everything needed to reproduce a run.

    Args:
        output: the run's primary output path
        command: subcommand name
        arguments: full argument echo
        inputs: flag name -> input path; each is recorded with its sha256
        seed: the run's seed, when one applies
    """
    manifest = {
        "command": command,
        "arguments": dict(arguments),
        "seed": seed,
        "version": Config.APP_VERSION,
        "inputs": {name: {"path": str(path), "sha256": sha256_path(path)} for name, path in sorted(inputs.items())},
        "created": utc_timestamp(),
    }
    path = run_manifest_path(output)
    path.write_text(canonical_json(manifest), encoding="utf-8")
    return path


@contextmanager
def run_lock(directory: PathLike) -> Iterator[Path]:
    """
    Exclusive ownership of a run directory for the duration of the block.

    Raises:
        RunLockError: another process holds the lock
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_FILE
    try:
        handle = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockError(f"{directory} is locked by another run ({lock} exists)")
    try:
        os.write(handle, str(os.getpid()).encode("ascii"))
        os.close(handle)
        yield lock
    finally:
        try:
            lock.unlink()
        except FileNotFoundError:
            logger.warning(f"lock file {lock} disappeared before release")


def inputs_digest(inputs: Mapping[str, PathLike]) -> Dict[str, str]:
    return {name: sha256_path(path) for name, path in sorted(inputs.items())}
