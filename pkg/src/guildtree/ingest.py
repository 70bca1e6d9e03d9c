"""Community CSV ingestion and export.

One row per site.  Response columns are named by the declared species
list, predictor columns by the declared predictor list; a ``period``
column (labels 1..T) and a ``holdout`` column (0/1) are optional.  Any
other column is rejected, as are malformed values, with the offending
file line and column named.  Predictors are centered and standardized by
default, with the constants recorded for the run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import csv

import numpy as np
import pandas as pd

from guildtree.core import CommunityData

__all__ = [
    "StandardizationRecord",
    "ingest",
    "read_community_csv",
    "write_community_csv",
]

_PERIOD_COL = "period"
_HOLDOUT_COL = "holdout"


@dataclass(frozen=True)
class StandardizationRecord:
    """Predictor scaling applied at ingestion: x -> (x - center) / scale."""

    applied: bool
    center: tuple[float, ...]
    scale: tuple[float, ...]


def _read_frame(path) -> pd.DataFrame:
    try:
        # round_trip: the default parser can be off by one ulp, which would
        # break the exact write/read guarantee.
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: file is empty") from None
    if frame.shape[0] == 0:
        raise ValueError(f"{path}: no data rows")
    return frame


def _line(path, idx: int) -> str:
    # +2: header line plus 1-based counting.
    return f"{path} line {idx + 2}"


def _check_columns(path, frame: pd.DataFrame, species, predictors) -> None:
    declared = set(species) | set(predictors) | {_PERIOD_COL, _HOLDOUT_COL}
    unknown = [c for c in frame.columns if c not in declared]
    if unknown:
        raise ValueError(f"{path}: unknown columns {unknown}")
    missing = [c for c in [*species, *predictors] if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")


def _numeric(path, frame: pd.DataFrame, col: str) -> np.ndarray:
    values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(
            f"{_line(path, int(bad[0]))}, column {col!r}: "
            f"missing or non-numeric value {frame[col].iloc[int(bad[0])]!r}"
        )
    return values


def _check_responses(path, col: str, values: np.ndarray, family: str) -> None:
    if family == "probit":
        bad = np.flatnonzero(~np.isin(values, (0.0, 1.0)))
        if bad.size:
            raise ValueError(
                f"{_line(path, int(bad[0]))}, column {col!r}: presence-absence "
                f"value must be 0 or 1, got {values[int(bad[0])]!r}"
            )
    else:
        bad = np.flatnonzero((values < 0) | (values != np.floor(values)))
        if bad.size:
            raise ValueError(
                f"{_line(path, int(bad[0]))}, column {col!r}: count must be a "
                f"nonnegative integer, got {values[int(bad[0])]!r}"
            )


def read_community_csv(path, species, predictors, family: str) -> dict:
    """Parse and validate one CSV; returns raw column arrays."""
    frame = _read_frame(path)
    _check_columns(path, frame, species, predictors)
    responses = np.column_stack([_numeric(path, frame, s) for s in species])
    for j, s in enumerate(species):
        _check_responses(path, s, responses[:, j], family)
    design = np.column_stack([_numeric(path, frame, p) for p in predictors])

    period = None
    if _PERIOD_COL in frame.columns:
        vals = _numeric(path, frame, _PERIOD_COL)
        bad = np.flatnonzero((vals < 1) | (vals != np.floor(vals)))
        if bad.size:
            raise ValueError(
                f"{_line(path, int(bad[0]))}, column 'period': label must be a "
                f"positive integer, got {vals[int(bad[0])]!r}"
            )
        period = vals.astype(int)

    holdout = None
    if _HOLDOUT_COL in frame.columns:
        vals = _numeric(path, frame, _HOLDOUT_COL)
        bad = np.flatnonzero(~np.isin(vals, (0.0, 1.0)))
        if bad.size:
            raise ValueError(
                f"{_line(path, int(bad[0]))}, column 'holdout': flag must be "
                f"0 or 1, got {vals[int(bad[0])]!r}"
            )
        holdout = vals.astype(bool)

    return {
        "responses": responses,
        "predictors": design,
        "period": period,
        "holdout": holdout,
    }


def ingest(
    paths,
    species,
    predictors,
    family: str,
    standardize: bool = True,
    holdout_paths=(),
) -> tuple[CommunityData, StandardizationRecord]:
    """Build validated CommunityData from one or more CSVs.

    Rows from every file are concatenated in order; files listed in
    ``holdout_paths`` have all their sites flagged as holdout regardless
    of any ``holdout`` column.  Standardization constants are computed
    over all ingested sites and returned for the manifest.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [(p, read_community_csv(p, species, predictors, family), False) for p in paths]
    parts += [
        (p, read_community_csv(p, species, predictors, family), True)
        for p in holdout_paths
    ]
    if not parts:
        raise ValueError("no input files")

    responses = np.vstack([part["responses"] for _, part, _ in parts])
    design = np.vstack([part["predictors"] for _, part, _ in parts])

    has_period = [part["period"] is not None for _, part, _ in parts]
    if any(has_period) and not all(has_period):
        raise ValueError("period column must appear in every file or in none")
    period = (
        np.concatenate([part["period"] for _, part, _ in parts])
        if all(has_period)
        else None
    )

    masks = []
    for _, part, forced in parts:
        n = part["responses"].shape[0]
        if forced:
            masks.append(np.ones(n, dtype=bool))
        elif part["holdout"] is not None:
            masks.append(part["holdout"])
        else:
            masks.append(np.zeros(n, dtype=bool))
    holdout = np.concatenate(masks)
    if not holdout.any():
        holdout = None

    record = StandardizationRecord(
        applied=False,
        center=tuple(0.0 for _ in predictors),
        scale=tuple(1.0 for _ in predictors),
    )
    if standardize:
        center = design.mean(axis=0)
        scale = design.std(axis=0)
        flat = np.flatnonzero(scale == 0)
        if flat.size:
            raise ValueError(
                f"predictor {predictors[int(flat[0])]!r} is constant; "
                "cannot standardize"
            )
        design = (design - center) / scale
        record = StandardizationRecord(
            applied=True,
            center=tuple(float(c) for c in center),
            scale=tuple(float(s) for s in scale),
        )

    data = CommunityData(
        responses=responses,
        predictors=design,
        species_names=tuple(species),
        predictor_names=tuple(predictors),
        period_index=period,
        holdout_mask=holdout,
    )
    data.validate_for(family)
    return data, record


def write_community_csv(path, data: CommunityData) -> None:
    """Write data in the ingestion schema.

    Floats are written with repr so a read-back (without standardization)
    reproduces the arrays bit for bit; integer-valued responses are
    written as integers.
    """
    header = list(data.species_names) + list(data.predictor_names)
    if data.period_index is not None:
        header.append(_PERIOD_COL)
    if data.holdout_mask is not None:
        header.append(_HOLDOUT_COL)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n_sites):
            row = [
                int(v) if v == int(v) else repr(float(v))
                for v in data.responses[i]
            ]
            row += [repr(float(v)) for v in data.predictors[i]]
            if data.period_index is not None:
                row.append(int(data.period_index[i]))
            if data.holdout_mask is not None:
                row.append(int(data.holdout_mask[i]))
            writer.writerow(row)
