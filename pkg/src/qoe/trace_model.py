"""
CSV ingestion and serialization of drive-test sessions.

The trace CSV has the fixed columns ``session_id,t,rsrp,rsrq,snr,prb,mos``.
Each row carries KPI values, a MOS value, or both; empty cells are absent
values. Session metadata and dataset provenance travel in a JSON sidecar
next to the CSV because the column set is fixed.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.artifacts import OperationContext, dumps_canonical
from ..core.constants import (
    CSV_FLOAT_FORMAT,
    KPI_NAMES,
    MIN_MOS_SAMPLES,
    MOS_COLUMN,
    SESSION_DURATION_CAP_S,
    SESSION_ID_COLUMN,
    TIME_COLUMN,
    TRACE_COLUMNS,
    VALIDATION_ERROR_MESSAGES,
    kpi_range_message,
    validate_kpi_value,
    validate_mos_value,
)
from ..core.exceptions import ArtifactIOError, DataValidationError
from .models import Dataset, IngestReport, KpiSample, MosSample, RowRejection, Session

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".meta.json"


def sidecar_path(path: Path) -> Path:
    """Location of the metadata sidecar for a trace CSV."""
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def default_schema() -> Dict[str, str]:
    """Identity column map."""
    return {column: column for column in TRACE_COLUMNS}


def _read_sidecar(path: Path) -> Tuple[str, Dict[str, Dict[str, str]]]:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        return str(path), {}
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"Failed to read metadata sidecar {meta_path}: {e}", "read", str(meta_path), e) from e
    sessions = {str(k): {str(mk): str(mv) for mk, mv in v.items()} for k, v in payload.get("sessions", {}).items()}
    return str(payload.get("provenance", str(path))), sessions


class _RowBuffer:
    """Accepted rows of one session before sorting and MOS ordering checks."""

    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        self.rows: List[Tuple[float, int, Optional[Dict[str, Optional[float]]], Optional[float]]] = []

    def add(self, t: float, line: int, kpis: Optional[Dict[str, Optional[float]]], mos: Optional[float]) -> None:
        self.rows.append((t, line, kpis, mos))

    def build(self, meta: Dict[str, str]) -> Tuple[Optional[Session], List[RowRejection]]:
        """Sort stably by t, drop non-increasing MOS rows, build the Session."""
        rejections: List[RowRejection] = []
        # KPI-only rows sort before MOS-bearing rows at equal t
        ordered = sorted(self.rows, key=lambda r: (r[0], r[3] is not None))
        kpi_samples: List[KpiSample] = []
        mos_samples: List[MosSample] = []
        last_mos_t: Optional[float] = None
        for t, line, kpis, mos in ordered:
            if mos is not None and last_mos_t is not None and t <= last_mos_t:
                rejections.append(RowRejection(line=line, session_id=self.session_id, reason=VALIDATION_ERROR_MESSAGES["mos_order"]))
                continue
            if kpis is not None:
                kpi_samples.append(KpiSample.model_construct(t=t, **kpis))
            if mos is not None:
                mos_samples.append(MosSample.model_construct(t=t, mos=mos))
                last_mos_t = t
        if not kpi_samples and not mos_samples:
            return None, rejections
        try:
            session = Session(id=self.session_id, kpi=tuple(kpi_samples), mos=tuple(mos_samples), meta=meta)
        except ValidationError as e:
            raise DataValidationError(f"invalid session {self.session_id}: {e.errors()[0]['msg']}", field="session", value=self.session_id) from e
        return session, rejections


def _parse_numeric(frame: pd.DataFrame, column: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parsed values, empty-cell mask and not-a-number mask for one column."""
    raw = frame[column].astype(str).str.strip()
    empty = (raw == "").to_numpy()
    values = pd.to_numeric(raw.where(~empty, None), errors="coerce").to_numpy(dtype=float)
    invalid = ~empty & ~np.isfinite(values)
    return values, empty, invalid


def ingest_csv_with_report(path: Path, schema: Optional[Dict[str, str]] = None) -> Tuple[Dataset, IngestReport]:
    """
    Ingest a trace CSV and account for every row.

    Args:
        path: CSV file
        schema: Canonical column name -> file column name (identity by default)

    Returns:
        The validated Dataset and its IngestReport

    Raises:
        ArtifactIOError: If the file cannot be read
        DataValidationError: If a schema column is missing, a session id
            reappears after another session, or no valid session remains
    """
    path = Path(path)
    schema = {**default_schema(), **(schema or {})}
    context = OperationContext("ingest_csv", str(path))
    context.log_start(f"Ingesting {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        context.log_error("Read failed", e)
        raise ArtifactIOError(f"Failed to read {path}: {e}", "read", str(path), e) from e

    for canonical in TRACE_COLUMNS:
        if schema[canonical] not in frame.columns:
            error = DataValidationError(
                VALIDATION_ERROR_MESSAGES["missing_column"].format(column=schema[canonical]),
                field=canonical,
                validation_rule="schema",
            )
            context.log_error("Schema check failed", error)
            raise error

    provenance, session_meta = _read_sidecar(path)
    session_ids = frame[schema[SESSION_ID_COLUMN]].astype(str).str.strip().to_numpy()
    parsed = {name: _parse_numeric(frame, schema[name]) for name in [TIME_COLUMN] + KPI_NAMES + [MOS_COLUMN]}

    rejections: List[RowRejection] = []
    buffers: Dict[str, _RowBuffer] = {}
    order: List[str] = []
    current: Optional[str] = None

    for i in range(len(frame)):
        line = i + 2
        sid = session_ids[i]

        def reject(reason: str) -> None:
            rejections.append(RowRejection(line=line, session_id=sid or None, reason=reason))

        if not sid:
            reject("session_id missing")
            continue
        if sid != current:
            if sid in buffers:
                error = DataValidationError(
                    f"{VALIDATION_ERROR_MESSAGES['duplicate_session']}: {sid}",
                    field=SESSION_ID_COLUMN,
                    value=sid,
                    validation_rule="session ids unique",
                )
                context.log_error("Duplicate session id", error, line=line)
                raise error
            buffers[sid] = _RowBuffer(sid)
            order.append(sid)
            current = sid

        t_values, t_empty, t_invalid = parsed[TIME_COLUMN]
        if t_empty[i] or t_invalid[i]:
            reject(VALIDATION_ERROR_MESSAGES["not_a_number"].format(column=TIME_COLUMN))
            continue
        t = float(t_values[i])
        if t < 0:
            reject(VALIDATION_ERROR_MESSAGES["negative_time"])
            continue
        if t > SESSION_DURATION_CAP_S:
            reject(VALIDATION_ERROR_MESSAGES["time_cap"])
            continue

        kpis: Dict[str, Optional[float]] = {}
        reason: Optional[str] = None
        for kpi in KPI_NAMES:
            values, empty, invalid = parsed[kpi]
            if invalid[i]:
                reason = VALIDATION_ERROR_MESSAGES["not_a_number"].format(column=kpi)
                break
            value = None if empty[i] else float(values[i])
            if not validate_kpi_value(kpi, value):
                reason = kpi_range_message(kpi)
                break
            kpis[kpi] = value
        if reason is None:
            mos_values, mos_empty, mos_invalid = parsed[MOS_COLUMN]
            if mos_invalid[i]:
                reason = VALIDATION_ERROR_MESSAGES["not_a_number"].format(column=MOS_COLUMN)
            elif not mos_empty[i] and not validate_mos_value(float(mos_values[i])):
                reason = VALIDATION_ERROR_MESSAGES["mos_range"]
        if reason is not None:
            reject(reason)
            continue

        mos = None if parsed[MOS_COLUMN][1][i] else float(parsed[MOS_COLUMN][0][i])
        has_kpi = any(v is not None for v in kpis.values())
        if not has_kpi and mos is None:
            reject(VALIDATION_ERROR_MESSAGES["empty_row"])
            continue
        buffers[sid].add(t, line, kpis if has_kpi else None, mos)

    sessions: List[Session] = []
    for sid in order:
        session, late_rejections = buffers[sid].build(session_meta.get(sid, {}))
        rejections.extend(late_rejections)
        if session is not None:
            sessions.append(session)

    if not sessions:
        error = DataValidationError(VALIDATION_ERROR_MESSAGES["no_sessions"], validation_rule="non-empty dataset")
        context.log_error("No valid sessions", error, total_rows=len(frame))
        raise error

    rejections.sort(key=lambda r: r.line)
    report = IngestReport(
        source=str(path),
        total_rows=len(frame),
        accepted_rows=len(frame) - len(rejections),
        rejected_rows=len(rejections),
        n_sessions=len(sessions),
        rejections=tuple(rejections),
    )
    if rejections:
        context.log_warning(f"Rejected {len(rejections)} rows", rejected_rows=len(rejections))
    context.log_success(
        f"Ingested {len(sessions)} sessions",
        total_rows=report.total_rows,
        accepted_rows=report.accepted_rows,
        rejected_rows=report.rejected_rows,
    )
    return Dataset(sessions=tuple(sessions), provenance=provenance), report


def ingest_csv(path: Path, schema: Optional[Dict[str, str]] = None) -> Dataset:
    """
    Ingest a trace CSV into a validated Dataset.

    Row-level rejections are logged; use ingest_csv_with_report to get them.
    """
    dataset, _ = ingest_csv_with_report(path, schema)
    return dataset


def filter_model_eligible(d: Dataset, min_mos_samples: int = MIN_MOS_SAMPLES) -> Dataset:
    """Keep sessions with at least ``min_mos_samples`` MOS samples, in order."""
    kept = tuple(s for s in d.sessions if s.is_eligible(min_mos_samples))
    logger.debug(f"Eligible sessions: {len(kept)} of {len(d.sessions)}")
    return Dataset(sessions=kept, provenance=d.provenance)


def dataset_frame(d: Dataset) -> pd.DataFrame:
    """Dataset as a frame in trace CSV layout; KPI rows precede MOS rows at equal t."""
    records: List[Dict[str, Any]] = []
    for session in d.sessions:
        merged: List[Tuple[float, int, Dict[str, Any]]] = []
        for sample in session.kpi:
            row = {kpi: sample.value(kpi) for kpi in KPI_NAMES}
            merged.append((sample.t, 0, row))
        for sample in session.mos:
            merged.append((sample.t, 1, {MOS_COLUMN: sample.mos}))
        for t, _, values in sorted(merged, key=lambda item: (item[0], item[1])):
            records.append({SESSION_ID_COLUMN: session.id, TIME_COLUMN: t, **values})
    frame = pd.DataFrame.from_records(records, columns=TRACE_COLUMNS)
    for column in TRACE_COLUMNS[1:]:
        frame[column] = frame[column].astype(float)
    return frame


def write_csv(d: Dataset, path: Path) -> None:
    """
    Write a Dataset as trace CSV plus metadata sidecar.

    Floats are written with 6 fractional digits; absent values are empty
    cells.

    Raises:
        ArtifactIOError: If the path cannot be written
    """
    path = Path(path)
    context = OperationContext("write_csv", str(path))
    context.log_start(f"Writing {len(d.sessions)} sessions to {path}")
    frame = dataset_frame(d)
    sidecar = {
        "provenance": d.provenance,
        "sessions": {s.id: dict(s.meta) for s in d.sessions},
    }
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="", lineterminator="\n"))
        with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps_canonical(sidecar))
    except OSError as e:
        context.log_error("Write failed", e)
        raise ArtifactIOError(f"Failed to write {path}: {e}", "write", str(path), e) from e
    context.log_success(f"Wrote {len(frame)} rows to {path}", rows=len(frame))
