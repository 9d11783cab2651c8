"""Report emission: incidence tables, rate tables, audit records.

Three table layouts mirror the standard presentation: statutory tax plus its
first-stage destinations, final incidence by component with an all-components
total column, and effective rates with ND masking.  Every writer is
deterministic (fixed column order, fixed line endings, no timestamps) so that
identical inputs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .accounts import COMPONENT_ORDER, DEFAULT_REPORT_COMPONENTS, DemandComponent
from .engine import CoefficientSystem, IncidenceResult
from .margins import MarginAdjustment
from .rates import RateReport

ND = "ND"

MONEY_PRECISION = 2
RATE_PRECISION = 1


def format_number(value: float, precision: int = 0, *, grouped: bool = False) -> str:
    """Format one number, plain ('59917') or thousands-grouped ('59.917').

    Grouped style uses dots for thousands and a comma before any decimals,
    matching the source-country convention for published tables.
    """
    plain = f"{value:,.{precision}f}"
    if not grouped:
        return plain.replace(",", "")
    return plain.translate(str.maketrans({",": ".", ".": ","}))


def _cell(value: float, precision: int, grouped: bool) -> str:
    return format_number(float(value), precision, grouped=grouped)


def _component_columns(
    components: tuple[DemandComponent, ...],
) -> tuple[list[int], list[str]]:
    indices = [c.column for c in COMPONENT_ORDER if c in components]
    names = [COMPONENT_ORDER[i].value for i in indices]
    return indices, names


def _write_rows(
    path: Path, header: list[str], rows: list[list[str]], *, delimiter: str, fmt: str
) -> Path:
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    elif fmt == "json":
        records = [dict(zip(header, row)) for row in rows]
        path.write_text(
            json.dumps({"columns": header, "rows": records}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    return path


def write_first_stage_table(
    result: IncidenceResult,
    path: str | Path,
    *,
    components: tuple[DemandComponent, ...] = DEFAULT_REPORT_COMPONENTS,
    precision: int = MONEY_PRECISION,
    delimiter: str = ",",
    grouped: bool = False,
    fmt: str = "csv",
) -> Path:
    """Statutory tax and its first-stage split: intermediate vs final demand."""
    idx, names = _component_columns(components)
    header = ["code", "label", "statutory", "intermediate"] + names
    statutory = result.first_stage_intermediate + result.first_stage_final.sum(axis=1)
    rows = []
    for i, activity in enumerate(result.activities):
        rows.append(
            [activity.code, activity.label]
            + [_cell(statutory[i], precision, grouped)]
            + [_cell(result.first_stage_intermediate[i], precision, grouped)]
            + [_cell(result.first_stage_final[i, j], precision, grouped) for j in idx]
        )
    rows.append(
        ["Total", ""]
        + [_cell(statutory.sum(), precision, grouped)]
        + [_cell(result.first_stage_intermediate.sum(), precision, grouped)]
        + [
            _cell(result.first_stage_final[:, j].sum(), precision, grouped)
            for j in idx
        ]
    )
    return _write_rows(Path(path), header, rows, delimiter=delimiter, fmt=fmt)


def write_final_incidence_table(
    result: IncidenceResult,
    path: str | Path,
    *,
    components: tuple[DemandComponent, ...] = DEFAULT_REPORT_COMPONENTS,
    precision: int = MONEY_PRECISION,
    delimiter: str = ",",
    grouped: bool = False,
    fmt: str = "csv",
) -> Path:
    """Final incidence by component.

    The total column always sums all six components, even when only a subset
    is shown, so hidden components remain visible in the totals.
    """
    idx, names = _component_columns(components)
    header = ["code", "label"] + names + ["total"]
    matrix = result.final_incidence
    row_totals = matrix.sum(axis=1)
    rows = []
    for i, activity in enumerate(result.activities):
        rows.append(
            [activity.code, activity.label]
            + [_cell(matrix[i, j], precision, grouped) for j in idx]
            + [_cell(row_totals[i], precision, grouped)]
        )
    rows.append(
        ["Total", ""]
        + [_cell(matrix[:, j].sum(), precision, grouped) for j in idx]
        + [_cell(row_totals.sum(), precision, grouped)]
    )
    return _write_rows(Path(path), header, rows, delimiter=delimiter, fmt=fmt)


def write_rates_table(
    report: RateReport,
    path: str | Path,
    *,
    components: tuple[DemandComponent, ...] = DEFAULT_REPORT_COMPONENTS,
    precision: int = RATE_PRECISION,
    delimiter: str = ",",
    grouped: bool = False,
    fmt: str = "csv",
) -> Path:
    """Effective rates with ND where masked; trailing all-components column."""
    idx, names = _component_columns(components)
    columns = idx + [report.rates.shape[1] - 1]
    header = ["code", "label"] + names + ["total"]

    def cell(i: int, j: int) -> str:
        if report.masked[i, j]:
            return ND
        return _cell(report.rates[i, j], precision, grouped)

    rows = []
    for i, activity in enumerate(report.activities):
        rows.append([activity.code, activity.label] + [cell(i, j) for j in columns])
    rows.append(
        ["Total", ""]
        + [
            ND if report.total_masked[j] else _cell(report.total_rates[j], precision, grouped)
            for j in columns
        ]
    )
    return _write_rows(Path(path), header, rows, delimiter=delimiter, fmt=fmt)


def write_margin_audit(
    adjustment: MarginAdjustment, path: str | Path, *, delimiter: str = ","
) -> Path:
    """Net supply and tax deltas per (activity, destination), nonzero cells only."""
    path = Path(path)
    supply_delta = adjustment.supply_delta
    tax_delta = adjustment.tax_delta
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["activity", "destination", "supply_delta", "tax_delta"])
        for i, code in enumerate(adjustment.activity_codes):
            for j, dest in enumerate(adjustment.destination_labels):
                if supply_delta[i, j] == 0 and tax_delta[i, j] == 0:
                    continue
                writer.writerow(
                    [code, dest, repr(float(supply_delta[i, j])), repr(float(tax_delta[i, j]))]
                )
    return path


def _array_digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=float).tobytes()).hexdigest()


def write_system_digest(system: CoefficientSystem, path: str | Path) -> Path:
    """Checkable summary of a coefficient system (shapes, totals, checksums)."""
    rowsums = system.intermediate_shares.sum(axis=1) + system.final_shares.sum(axis=1)
    supplyless = [
        a.code
        for a, total in zip(system.activities, rowsums)
        if total == 0
    ]
    digest = {
        "activities": len(system.activities),
        "zero_share_rows": supplyless,
        "share_row_sums": {
            "min": float(rowsums.min()),
            "max": float(rowsums.max()),
        },
        "first_stage": {
            "intermediate_total": float(system.intermediate_tax.sum()),
            "final_totals": {
                c.value: float(system.final_tax[:, c.column].sum())
                for c in COMPONENT_ORDER
            },
            "statutory_total": system.statutory_total,
        },
        "sha256": {
            "intermediate_shares": _array_digest(system.intermediate_shares),
            "final_shares": _array_digest(system.final_shares),
            "intermediate_tax": _array_digest(system.intermediate_tax),
            "final_tax": _array_digest(system.final_tax),
        },
    }
    path = Path(path)
    path.write_text(json.dumps(digest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def result_record(result: IncidenceResult, *, tolerances: dict | None = None) -> dict:
    """Structured form of a result with its audit metadata."""
    record = {
        "method": result.method,
        "stages": result.stages,
        "converged": result.converged,
        "series_residual": result.series_residual,
        "conservation": {
            "residual": result.conservation_residual,
            "relative": result.conservation_relative,
            "rtol": result.conservation_rtol,
            "within_tolerance": result.conserved,
        },
        "totals": {
            "statutory": result.statutory_total,
            "final_incidence": result.grand_total,
            "by_component": {
                c.value: float(result.component_totals[c.column])
                for c in COMPONENT_ORDER
            },
        },
        "activities": [a.code for a in result.activities],
        "components": [c.value for c in COMPONENT_ORDER],
        "first_stage_intermediate": result.first_stage_intermediate.tolist(),
        "first_stage_final": result.first_stage_final.tolist(),
        "subsequent_stage": result.subsequent_stage.tolist(),
        "final_incidence": result.final_incidence.tolist(),
    }
    if tolerances:
        record["tolerances"] = tolerances
    return record


def write_result_json(
    result: IncidenceResult, path: str | Path, *, tolerances: dict | None = None
) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(result_record(result, tolerances=tolerances), indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    return path


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bundle_digests(manifest_path: str | Path) -> dict:
    """sha256 of the manifest and of every table file it references."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    files = {"manifest": {"path": manifest_path.name, "sha256": file_digest(manifest_path)}}
    for name, rel in sorted(manifest.get("tables", {}).items()):
        target = manifest_path.parent / rel
        entry = {"path": rel}
        if target.exists():
            entry["sha256"] = file_digest(target)
        files[name] = entry
    return files
