"""
Artifact persistence for the virtual drive test QoE pipeline.

This module handles every file the pipeline stages exchange: JSON documents,
CSV frames and the manifest that records which stage produced which file with
which content hash. Stages never recompute upstream data; they ask the store
for their inputs and get a MissingArtifactError or StaleArtifactError when the
manifest cannot vouch for them.
"""

import hashlib
import itertools
import json
import logging
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set

import pandas as pd

from .config import get_settings
from .constants import ARTIFACT_FORMAT_VERSION, CSV_FLOAT_FORMAT
from .exceptions import ArtifactIOError, MissingArtifactError, StaleArtifactError

# Set up logger
logger = logging.getLogger(__name__)

_counters: Dict[str, "itertools.count[int]"] = defaultdict(lambda: itertools.count(1))
_counter_lock = threading.Lock()


def _next_operation_id(operation: str) -> str:
    with _counter_lock:
        return f"{operation}-{next(_counters[operation])}"


class OperationContext:
    """
    Context for tracking pipeline operations with correlation IDs.

    IDs are ``<operation>-<counter>`` so that no entropy source is touched;
    the monotonic duration only ever reaches log records.
    """

    def __init__(self, operation: str, target: str, user_context: Optional[Dict] = None, log: Optional[logging.Logger] = None):
        self.operation_id = _next_operation_id(operation)
        self.operation = operation
        self.target = target
        self.user_context = user_context or {}
        self.start_time = time.monotonic()
        self._logger = log or logger
        self.metadata: Dict[str, Any] = {
            "operation_id": self.operation_id,
            "operation": operation,
            "target": target,
            "user_context": self.user_context,
        }

    def log_start(self, message: str, **kwargs):
        """Log operation start."""
        self.metadata.update(kwargs)
        self._logger.info(f"[{self.operation_id}] {message}", extra=self.metadata)

    def log_success(self, message: str, **kwargs):
        """Log operation success."""
        duration = time.monotonic() - self.start_time
        self.metadata.update({"duration_seconds": duration, "status": "success", **kwargs})
        self._logger.info(f"[{self.operation_id}] {message} (took {duration:.3f}s)", extra=self.metadata)

    def log_error(self, message: str, error: Exception, **kwargs):
        """Log operation error."""
        duration = time.monotonic() - self.start_time
        self.metadata.update({
            "duration_seconds": duration,
            "status": "error",
            "error_type": type(error).__name__,
            "error_message": str(error),
            **kwargs
        })
        self._logger.error(f"[{self.operation_id}] {message}: {error} (took {duration:.3f}s)", extra=self.metadata)

    def log_warning(self, message: str, **kwargs):
        """Log operation warning."""
        self.metadata.update(kwargs)
        self._logger.warning(f"[{self.operation_id}] {message}", extra=self.metadata)

    def log_debug(self, message: str, **kwargs):
        """Log debug information."""
        self.metadata.update(kwargs)
        self._logger.debug(f"[{self.operation_id}] {message}", extra=self.metadata)


def dumps_canonical(payload: Any) -> str:
    """Serialize JSON with sorted keys and fixed indentation."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def hash_file(filepath: Path) -> str:
    """
    SHA-256 of a file's bytes.

    Raises:
        ArtifactIOError: If the file cannot be read
    """
    digest = hashlib.sha256()
    try:
        with open(filepath, "rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                digest.update(chunk)
    except OSError as e:
        raise ArtifactIOError(f"Failed to hash {filepath}: {e}", "hash", str(filepath), e) from e
    return digest.hexdigest()


class ArtifactStore:
    """
    File store for pipeline artifacts.

    This class provides a clean interface for all artifact operations,
    abstracting away the details of JSON and CSV handling, and maintains the
    manifest that enforces the stage DAG.
    """

    def __init__(self, out_dir: Optional[Path] = None) -> None:
        """
        Initialize the artifact store.

        Args:
            out_dir: Artifact directory; defaults to Settings.OUT_DIR
        """
        self.settings = get_settings()
        self.out_dir = Path(out_dir or self.settings.OUT_DIR)
        self._lock = threading.RLock()
        if not self.settings.ensure_out_directory(self.out_dir):
            raise ArtifactIOError("Failed to create artifact directory", "initialize", str(self.out_dir))

    def path(self, filename: str) -> Path:
        """Full path of an artifact inside the store."""
        return self.settings.get_artifact_path(filename, self.out_dir)

    def exists(self, filename: str) -> bool:
        return self.path(filename).exists()

    def file_hash(self, filename: str) -> str:
        """SHA-256 of an artifact's bytes."""
        return hash_file(self.path(filename))

    def save_text(self, filename: str, text: str) -> str:
        """
        Write a text artifact.

        Args:
            filename: Artifact name
            text: Content, written as UTF-8 with newline translation disabled

        Returns:
            Content hash of the written file

        Raises:
            ArtifactIOError: If the file cannot be written
        """
        with self._lock:
            context = OperationContext("save_text", filename)
            context.log_start(f"Saving {filename}", size=len(text))
            filepath = self.path(filename)
            try:
                with open(filepath, "w", encoding="utf-8", newline="\n") as f:
                    f.write(text)
            except OSError as e:
                context.log_error("Save operation failed", e)
                raise ArtifactIOError(f"Failed to save {filename}: {e}", "write", filename, e) from e
            file_hash = self.file_hash(filename)
            context.log_success(f"Saved {filename}", sha256=file_hash)
            return file_hash

    def save_json(self, filename: str, payload: Any) -> str:
        """
        Save a JSON artifact with sorted keys.

        Returns:
            Content hash of the written file
        """
        try:
            text = dumps_canonical(payload)
        except (TypeError, ValueError) as e:
            raise ArtifactIOError(f"Failed to serialize {filename}: {e}", "write", filename, e) from e
        return self.save_text(filename, text)

    def load_json(self, filename: str) -> Any:
        """
        Load a JSON artifact.

        Raises:
            MissingArtifactError: If the file does not exist
            ArtifactIOError: If the file cannot be read or parsed
        """
        context = OperationContext("load_json", filename)
        context.log_start(f"Loading {filename}")
        filepath = self.path(filename)
        if not filepath.exists():
            error = MissingArtifactError(f"missing upstream artifact: {filename}", filename)
            context.log_error("Artifact not found", error)
            raise error
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            context.log_error("JSON decode failed", e, line=e.lineno, column=e.colno)
            raise ArtifactIOError(f"Invalid JSON in {filename}: {e}", "read", filename, e) from e
        except OSError as e:
            context.log_error("Read failed", e)
            raise ArtifactIOError(f"Failed to load {filename}: {e}", "read", filename, e) from e
        context.log_success(f"Loaded {filename}")
        return data

    def save_frame(self, filename: str, frame: pd.DataFrame, columns: Optional[List[str]] = None) -> str:
        """
        Save a CSV artifact with the fixed float format.

        Args:
            filename: Artifact name
            frame: Data to write
            columns: Column order (defaults to the frame's own)

        Returns:
            Content hash of the written file
        """
        if columns is not None:
            frame = frame.loc[:, columns]
        text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="", lineterminator="\n")
        return self.save_text(filename, text)

    def load_frame(self, filename: str, dtype: Optional[Dict[str, Any]] = None) -> pd.DataFrame:
        """
        Load a CSV artifact.

        Raises:
            MissingArtifactError: If the file does not exist
            ArtifactIOError: If the file cannot be parsed
        """
        filepath = self.path(filename)
        if not filepath.exists():
            raise MissingArtifactError(f"missing upstream artifact: {filename}", filename)
        try:
            return pd.read_csv(filepath, dtype=dtype, keep_default_na=False, na_values=[""])
        except (OSError, ValueError, pd.errors.ParserError) as e:
            raise ArtifactIOError(f"Failed to load {filename}: {e}", "read", filename, e) from e

    # -- manifest -------------------------------------------------------------

    def load_manifest(self) -> Dict[str, Any]:
        """Current manifest, or an empty one when none was written yet."""
        if not self.exists(self.settings.MANIFEST_FILE):
            return {"version": ARTIFACT_FORMAT_VERSION, "stages": {}}
        return self.load_json(self.settings.MANIFEST_FILE)

    def record_stage(
        self,
        stage: str,
        config_hash: str,
        outputs: Iterable[str],
        inputs: Optional[Dict[str, str]] = None
    ) -> Dict[str, Any]:
        """
        Record a finished stage in the manifest.

        Args:
            stage: Stage name
            config_hash: RunConfig content hash
            outputs: Artifact names the stage wrote
            inputs: Consumed artifact name -> hash

        Returns:
            The manifest entry written for the stage
        """
        with self._lock:
            manifest = self.load_manifest()
            entry = {
                "config_hash": config_hash,
                "outputs": {name: self.file_hash(name) for name in sorted(outputs)},
                "inputs": dict(sorted((inputs or {}).items())),
            }
            manifest["stages"][stage] = entry
            self.save_json(self.settings.MANIFEST_FILE, manifest)
            logger.info(f"Recorded stage {stage} with {len(entry['outputs'])} outputs")
            return entry

    def producer_of(self, filename: str) -> Optional[str]:
        """Stage whose manifest entry lists the artifact as output."""
        for stage, entry in self.load_manifest()["stages"].items():
            if filename in entry.get("outputs", {}):
                return stage
        return None

    def require_inputs(self, stage: str, filenames: Iterable[str]) -> Dict[str, str]:
        """
        Verify upstream artifacts before a stage runs.

        Each artifact must match its own manifest record, and the stage that
        produced it must have consumed the currently recorded version of every
        one of its own inputs, all the way up the stage graph.

        Args:
            stage: Consuming stage (for diagnostics)
            filenames: Required artifact names

        Returns:
            Mapping of artifact name to its verified hash

        Raises:
            MissingArtifactError: If an artifact is absent or was never recorded
            StaleArtifactError: If an artifact's hash differs from its manifest record,
                or it was built from an upstream artifact that has since changed
        """
        context = OperationContext("require_inputs", stage)
        names = list(filenames)
        context.log_start(f"Checking {len(names)} upstream artifacts for {stage}", inputs=names)
        stages = self.load_manifest()["stages"]
        verified: Dict[str, str] = {}
        checked: Set[str] = set()
        try:
            for name in names:
                verified[name] = self._verify_artifact(name, stage, stages)
                self._verify_lineage(name, stage, stages, checked)
        except MissingArtifactError as error:
            context.log_error("Upstream check failed", error)
            raise
        context.log_success(f"Upstream artifacts verified for {stage}")
        return verified

    def _verify_artifact(self, name: str, stage: str, stages: Dict[str, Any]) -> str:
        """Current hash of an artifact that exists and matches its manifest record."""
        if not self.exists(name):
            raise MissingArtifactError(f"missing upstream artifact: {name}", name, stage)
        recorded = _recorded_output(stages, name)
        if recorded is None:
            raise MissingArtifactError(f"missing upstream artifact: {name} has no manifest record", name, stage)
        actual = self.file_hash(name)
        if actual != recorded:
            raise StaleArtifactError(f"stale upstream artifact: {name}", name, recorded, actual)
        return actual

    def _verify_lineage(self, name: str, stage: str, stages: Dict[str, Any], checked: Set[str]) -> None:
        """Walk the producers above an artifact; every consumed hash must still be current."""
        pending = [name]
        while pending:
            current = pending.pop()
            if current in checked:
                continue
            checked.add(current)
            producer = next((entry for entry in stages.values() if current in entry.get("outputs", {})), None)
            for upstream, consumed in (producer or {}).get("inputs", {}).items():
                actual = self._verify_artifact(upstream, stage, stages)
                if actual != consumed:
                    raise StaleArtifactError(
                        f"stale upstream artifact: {current} was built from an older {upstream}", upstream, consumed, actual
                    )
                pending.append(upstream)


def _recorded_output(stages: Dict[str, Any], name: str) -> Optional[str]:
    return next((entry["outputs"][name] for entry in stages.values() if name in entry.get("outputs", {})), None)
