"""Input-output accounts: data model, bundle ingestion, validation.

A bundle is a manifest (JSON) plus delimited-text tables keyed by activity
code.  Loading aligns every table to the manifest's activity order, checks the
accounting identities, and returns an immutable :class:`IOAccounts`.

Provides:
    - DemandComponent: the six final-demand components, in canonical column
      order used by every matrix in the package.
    - Activity, BundleMetadata, TaxDestinationTable, IOAccounts: value types.
    - load_bundle / save_bundle: manifest-driven ingestion and serialization.
    - validate: diagnostic checks that never raise, as a ValidationReport.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

# Relative tolerance for the row balance supply = flows + final demand and for
# statutory-vs-destination consistency.  Published tables are rounded to
# currency millions; this absorbs rounding while still catching structural
# errors.
BALANCE_RTOL = 1e-6


class BundleError(ValueError):
    """Raised when a bundle cannot be loaded or fails its invariants."""


class DemandComponent(Enum):
    """Final-demand components, in canonical column order."""

    EXPORTS = "exports"
    GOVERNMENT = "government"
    HOUSEHOLDS = "households"
    ISFLSF = "isflsf"
    GFCF = "gfcf"
    INVENTORY = "inventory"

    @property
    def column(self) -> int:
        return _COMPONENT_INDEX[self]


COMPONENT_ORDER: tuple[DemandComponent, ...] = tuple(DemandComponent)
_COMPONENT_INDEX = {c: i for i, c in enumerate(COMPONENT_ORDER)}
N_COMPONENTS = len(COMPONENT_ORDER)

# Default component subset for reports: nonprofit consumption and inventory
# change are folded into totals but not shown as columns.
DEFAULT_REPORT_COMPONENTS: tuple[DemandComponent, ...] = (
    DemandComponent.EXPORTS,
    DemandComponent.GOVERNMENT,
    DemandComponent.HOUSEHOLDS,
    DemandComponent.GFCF,
)

# Header names with a fixed meaning in bundle tables; activity codes must not
# collide with them (or with component names).
_RESERVED_HEADERS = frozenset(
    {"statutory", "supply", "marginshare"} | {c.value for c in COMPONENT_ORDER}
)


def _frozen_array(values, dtype=float, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Activity:
    """One producing activity (row/column of the accounts)."""

    index: int
    code: str
    label: str = ""


@dataclass(frozen=True)
class BundleMetadata:
    """Descriptive bundle metadata; not used in any computation."""

    year: int | None = None
    currency: str = ""
    source: str = ""
    # Optional per-tax revenue listing (name, amount), descriptive only.
    tax_revenue: tuple[tuple[str, float], ...] = ()

    @classmethod
    def from_mapping(cls, data: dict) -> "BundleMetadata":
        revenue = tuple(
            (str(name), float(amount)) for name, amount in data.get("tax_revenue", [])
        )
        year = data.get("year")
        return cls(
            year=int(year) if year is not None else None,
            currency=str(data.get("currency", "")),
            source=str(data.get("source", "")),
            tax_revenue=revenue,
        )

    def to_mapping(self) -> dict:
        return {
            "year": self.year,
            "currency": self.currency,
            "source": self.source,
            "tax_revenue": [[name, amount] for name, amount in self.tax_revenue],
        }


@dataclass(frozen=True)
class TaxDestinationTable:
    """Where each activity's statutory tax lands at the first stage.

    ``dest`` has one row per taxed activity and n+6 columns: the n
    intermediate-use columns (by purchasing activity) followed by the six
    final-demand components in canonical order.  ``statutory`` is carried
    separately and must agree with the row sums within BALANCE_RTOL; entries
    are net of subsidies and may be negative.
    """

    dest: np.ndarray
    statutory: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dest", _frozen_array(self.dest, ndim=2))
        object.__setattr__(self, "statutory", _frozen_array(self.statutory, ndim=1))
        n = self.statutory.shape[0]
        if self.dest.shape != (n, n + N_COMPONENTS):
            raise ValueError(
                f"destination table must be {n}x{n + N_COMPONENTS}, got {self.dest.shape}"
            )

    @property
    def n(self) -> int:
        return self.statutory.shape[0]

    @property
    def intermediate(self) -> np.ndarray:
        """Columns destined to intermediate use, shape (n, n)."""
        return self.dest[:, : self.n]

    @property
    def final(self) -> np.ndarray:
        """Columns destined to final demand, shape (n, 6)."""
        return self.dest[:, self.n :]


@dataclass(frozen=True)
class IOAccounts:
    """An aligned, immutable input-output accounts bundle.

    All matrices are row-indexed by supplying activity; ``finaldemand`` and the
    final block of the destination table are column-indexed by
    :data:`COMPONENT_ORDER`.  Arrays are float64 and marked read-only.
    """

    activities: tuple[Activity, ...]
    flows: np.ndarray  # (n, n) intermediate deliveries, supplier by user
    finaldemand: np.ndarray  # (n, 6)
    supply: np.ndarray  # (n,)
    taxdest: TaxDestinationTable
    marginshares: np.ndarray  # (n,) in [0, 1]; > 0 marks a margin activity
    metadata: BundleMetadata = field(default_factory=BundleMetadata)

    def __post_init__(self) -> None:
        object.__setattr__(self, "activities", tuple(self.activities))
        object.__setattr__(self, "flows", _frozen_array(self.flows, ndim=2))
        object.__setattr__(self, "finaldemand", _frozen_array(self.finaldemand, ndim=2))
        object.__setattr__(self, "supply", _frozen_array(self.supply, ndim=1))
        object.__setattr__(self, "marginshares", _frozen_array(self.marginshares, ndim=1))
        n = len(self.activities)
        if n == 0:
            raise ValueError("accounts need at least one activity")
        codes = [a.code for a in self.activities]
        if len(set(codes)) != n:
            dupes = sorted({c for c in codes if codes.count(c) > 1})
            raise ValueError(f"duplicate activity codes: {', '.join(dupes)}")
        if self.flows.shape != (n, n):
            raise ValueError(f"flows must be {n}x{n}, got {self.flows.shape}")
        if self.finaldemand.shape != (n, N_COMPONENTS):
            raise ValueError(
                f"final demand must be {n}x{N_COMPONENTS}, got {self.finaldemand.shape}"
            )
        if self.supply.shape != (n,):
            raise ValueError(f"supply must have length {n}, got {self.supply.shape}")
        if self.taxdest.n != n:
            raise ValueError(
                f"destination table is for {self.taxdest.n} activities, accounts have {n}"
            )
        if self.marginshares.shape != (n,):
            raise ValueError(
                f"margin shares must have length {n}, got {self.marginshares.shape}"
            )

    @property
    def n(self) -> int:
        return len(self.activities)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(a.code for a in self.activities)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one validation check."""

    name: str
    passed: bool
    residual: float = 0.0  # worst offending magnitude, 0 when clean
    failures: tuple[str, ...] = ()  # human-readable rows/cells that failed


@dataclass(frozen=True)
class ValidationReport:
    """All validation checks for one bundle; never raises."""

    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def to_records(self) -> list[dict]:
        return [
            {
                "check": c.name,
                "passed": c.passed,
                "residual": c.residual,
                "failures": list(c.failures),
            }
            for c in self.checks
        ]

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(
            json.dumps(self.to_records(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return path


def validate(accounts: IOAccounts, *, balance_rtol: float = BALANCE_RTOL) -> ValidationReport:
    """Run every accounting check and report diagnostics without raising.

    Checks: per-row supply balance, sign rules (flows and supply nonnegative,
    final demand nonnegative except inventory change), margin-share range, and
    statutory-vs-destination consistency per row and in total.
    """
    codes = accounts.codes
    checks: list[CheckResult] = []

    rowsums = accounts.flows.sum(axis=1) + accounts.finaldemand.sum(axis=1)
    residual = np.abs(accounts.supply - rowsums)
    allowed = balance_rtol * np.maximum(1.0, np.abs(accounts.supply))
    bad = residual > allowed
    checks.append(
        CheckResult(
            "row_balance",
            passed=not bad.any(),
            residual=float(residual.max(initial=0.0)),
            failures=tuple(
                f"{codes[i]}: supply {accounts.supply[i]:.6f} vs row total "
                f"{rowsums[i]:.6f} (residual {residual[i]:.6f})"
                for i in np.flatnonzero(bad)
            ),
        )
    )

    neg = accounts.flows < 0
    checks.append(
        CheckResult(
            "flow_signs",
            passed=not neg.any(),
            residual=max(0.0, float(-accounts.flows.min(initial=0.0))),
            failures=tuple(
                f"{codes[i]} -> {codes[j]}: {accounts.flows[i, j]}"
                for i, j in zip(*np.nonzero(neg))
            ),
        )
    )

    # Inventory change may legitimately be negative (stock drawdowns).
    inventory = DemandComponent.INVENTORY.column
    fd = accounts.finaldemand
    neg = fd < 0
    neg[:, inventory] = False
    checks.append(
        CheckResult(
            "finaldemand_signs",
            passed=not neg.any(),
            residual=max(0.0, float(-np.delete(fd, inventory, axis=1).min(initial=0.0))),
            failures=tuple(
                f"{codes[i]} / {COMPONENT_ORDER[j].value}: {fd[i, j]}"
                for i, j in zip(*np.nonzero(neg))
            ),
        )
    )

    neg = accounts.supply < 0
    checks.append(
        CheckResult(
            "supply_signs",
            passed=not neg.any(),
            residual=max(0.0, float(-accounts.supply.min(initial=0.0))),
            failures=tuple(
                f"{codes[i]}: {accounts.supply[i]}" for i in np.flatnonzero(neg)
            ),
        )
    )

    mu = accounts.marginshares
    bad = (mu < 0) | (mu > 1)
    checks.append(
        CheckResult(
            "margin_share_range",
            passed=not bad.any(),
            residual=max(0.0, float(np.maximum(-mu, mu - 1).max(initial=0.0))),
            failures=tuple(f"{codes[i]}: {mu[i]}" for i in np.flatnonzero(bad)),
        )
    )

    destsums = accounts.taxdest.dest.sum(axis=1)
    statutory = accounts.taxdest.statutory
    residual = np.abs(statutory - destsums)
    allowed = balance_rtol * np.maximum(1.0, np.abs(statutory))
    bad = residual > allowed
    checks.append(
        CheckResult(
            "statutory_rows",
            passed=not bad.any(),
            residual=float(residual.max(initial=0.0)),
            failures=tuple(
                f"{codes[i]}: statutory {statutory[i]:.6f} vs destination sum "
                f"{destsums[i]:.6f}"
                for i in np.flatnonzero(bad)
            ),
        )
    )

    total = float(statutory.sum())
    dest_total = float(accounts.taxdest.dest.sum())
    residual_total = abs(total - dest_total)
    checks.append(
        CheckResult(
            "statutory_total",
            passed=residual_total <= balance_rtol * max(1.0, abs(total)),
            residual=residual_total,
            failures=()
            if residual_total <= balance_rtol * max(1.0, abs(total))
            else (f"statutory total {total:.6f} vs destination total {dest_total:.6f}",),
        )
    )

    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# Bundle ingestion
# ---------------------------------------------------------------------------

_TABLE_NAMES = ("flows", "finaldemand", "supply", "taxdest", "marginshares")


def _read_delimited(path: Path, delimiter: str) -> tuple[list[str], dict[str, list[float]]]:
    """Read one table: header row, then one row per activity keyed by code."""
    try:
        text = path.read_text(encoding="utf-8-sig")
    except FileNotFoundError:
        raise BundleError(f"table file not found: {path}") from None
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise BundleError(f"{path}: empty table")
    header = [cell.strip() for cell in rows[0]]
    data: dict[str, list[float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        cells = [cell.strip() for cell in row]
        if len(cells) != len(header):
            raise BundleError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}"
            )
        code = cells[0]
        if code in data:
            raise BundleError(f"{path}:{lineno}: duplicate activity code {code!r}")
        try:
            data[code] = [float(cell) for cell in cells[1:]]
        except ValueError as exc:
            raise BundleError(f"{path}:{lineno}: {exc}") from None
    return header[1:], data


def _align_rows(
    table: str, path: Path, data: dict[str, list[float]], codes: tuple[str, ...]
) -> np.ndarray:
    missing = [c for c in codes if c not in data]
    if missing:
        raise BundleError(f"{path}: missing rows for activities: {', '.join(missing)}")
    extra = [c for c in data if c not in set(codes)]
    if extra:
        raise BundleError(f"{path}: unknown activity rows: {', '.join(extra)}")
    return np.array([data[c] for c in codes], dtype=float)


def _column_permutation(table: str, path: Path, header: list[str], wanted: list[str]) -> list[int]:
    if sorted(header) != sorted(wanted):
        raise BundleError(
            f"{path}: {table} columns {header} do not match expected {wanted}"
        )
    return [header.index(name) for name in wanted]


def load_bundle(manifest_path: str | Path, *, check: bool = True) -> IOAccounts:
    """Load and align a bundle; raise :class:`BundleError` on any defect.

    The manifest is JSON with keys ``activities`` (list of codes or
    ``{code, label}`` objects, defining row order), ``components`` (the six
    component names in the order used by this bundle's files), ``tables``
    (mapping of table name to file path, relative to the manifest), and
    optionally ``delimiter`` ("," default, or ";") and ``metadata`` (inline
    object, or a path under ``tables``).

    With ``check=False`` only structural alignment is enforced; accounting
    invariants are skipped so that diagnostic callers can obtain a report via
    :func:`validate` instead.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BundleError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{manifest_path}: invalid JSON ({exc})") from None

    for key in ("activities", "components", "tables"):
        if key not in manifest:
            raise BundleError(f"{manifest_path}: manifest missing key {key!r}")

    activities = []
    for i, entry in enumerate(manifest["activities"]):
        if isinstance(entry, str):
            activities.append(Activity(i, entry))
        else:
            activities.append(Activity(i, str(entry["code"]), str(entry.get("label", ""))))
    codes = tuple(a.code for a in activities)
    if len(set(codes)) != len(codes):
        dupes = sorted({c for c in codes if codes.count(c) > 1})
        raise BundleError(f"{manifest_path}: duplicate activity codes: {', '.join(dupes)}")
    clashes = sorted(set(codes) & _RESERVED_HEADERS)
    if clashes:
        raise BundleError(
            f"{manifest_path}: activity codes collide with reserved column names: "
            f"{', '.join(clashes)}"
        )

    components = [str(c) for c in manifest["components"]]
    canonical = [c.value for c in COMPONENT_ORDER]
    if sorted(components) != sorted(canonical):
        raise BundleError(
            f"{manifest_path}: components must be exactly {canonical}, got {components}"
        )

    delimiter = manifest.get("delimiter", ",")
    if delimiter not in (",", ";"):
        raise BundleError(f"{manifest_path}: delimiter must be ',' or ';', got {delimiter!r}")

    tables = manifest["tables"]
    missing = [t for t in _TABLE_NAMES if t not in tables]
    if missing:
        raise BundleError(f"{manifest_path}: tables missing entries: {', '.join(missing)}")
    paths = {t: manifest_path.parent / tables[t] for t in _TABLE_NAMES}

    header, data = _read_delimited(paths["flows"], delimiter)
    perm = _column_permutation("flows", paths["flows"], header, list(codes))
    flows = _align_rows("flows", paths["flows"], data, codes)[:, perm]

    header, data = _read_delimited(paths["finaldemand"], delimiter)
    perm = _column_permutation("finaldemand", paths["finaldemand"], header, canonical)
    finaldemand = _align_rows("finaldemand", paths["finaldemand"], data, codes)[:, perm]

    header, data = _read_delimited(paths["supply"], delimiter)
    if len(header) != 1:
        raise BundleError(f"{paths['supply']}: supply table must have one value column")
    supply = _align_rows("supply", paths["supply"], data, codes)[:, 0]

    header, data = _read_delimited(paths["taxdest"], delimiter)
    wanted = ["statutory"] + list(codes) + canonical
    perm = _column_permutation("taxdest", paths["taxdest"], header, wanted)
    aligned = _align_rows("taxdest", paths["taxdest"], data, codes)[:, perm]
    taxdest = TaxDestinationTable(dest=aligned[:, 1:], statutory=aligned[:, 0])

    header, data = _read_delimited(paths["marginshares"], delimiter)
    if len(header) != 1:
        raise BundleError(
            f"{paths['marginshares']}: margin-share table must have one value column"
        )
    marginshares = _align_rows("marginshares", paths["marginshares"], data, codes)[:, 0]

    meta_source = manifest.get("metadata", {})
    if "metadata" in tables:
        meta_path = manifest_path.parent / tables["metadata"]
        try:
            meta_source = json.loads(meta_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise BundleError(f"metadata file not found: {meta_path}") from None
    metadata = BundleMetadata.from_mapping(meta_source)

    try:
        accounts = IOAccounts(
            activities=tuple(activities),
            flows=flows,
            finaldemand=finaldemand,
            supply=supply,
            taxdest=taxdest,
            marginshares=marginshares,
            metadata=metadata,
        )
    except ValueError as exc:
        raise BundleError(str(exc)) from None

    if check:
        report = validate(accounts)
        if not report.ok:
            lines = []
            for result in report.failed():
                lines.append(f"{result.name}: {len(result.failures) or 1} failure(s)")
                lines.extend(f"  {f}" for f in result.failures[:10])
                if len(result.failures) > 10:
                    lines.append(f"  ... {len(result.failures) - 10} more")
            raise BundleError(
                f"bundle at {manifest_path} failed validation:\n" + "\n".join(lines)
            )
    return accounts


def save_bundle(
    accounts: IOAccounts, directory: str | Path, *, delimiter: str = ","
) -> Path:
    """Serialize accounts as a manifest plus delimited tables; returns the manifest path.

    Numbers are written with ``repr`` so that a reload reproduces the arrays
    bit for bit.
    """
    if delimiter not in (",", ";"):
        raise ValueError(f"delimiter must be ',' or ';', got {delimiter!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    codes = list(accounts.codes)
    canonical = [c.value for c in COMPONENT_ORDER]

    def write_table(name: str, header: list[str], matrix: np.ndarray) -> str:
        filename = f"{name}.csv"
        rows = matrix.reshape(len(codes), -1)
        with open(directory / filename, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(["code"] + header)
            for code, row in zip(codes, rows):
                writer.writerow([code] + [repr(float(v)) for v in row])
        return filename

    tables = {
        "flows": write_table("flows", codes, accounts.flows),
        "finaldemand": write_table("finaldemand", canonical, accounts.finaldemand),
        "supply": write_table("supply", ["supply"], accounts.supply),
        "taxdest": write_table(
            "taxdest",
            ["statutory"] + codes + canonical,
            np.column_stack([accounts.taxdest.statutory, accounts.taxdest.dest]),
        ),
        "marginshares": write_table("marginshares", ["marginshare"], accounts.marginshares),
    }
    manifest = {
        "activities": [{"code": a.code, "label": a.label} for a in accounts.activities],
        "components": canonical,
        "delimiter": delimiter,
        "tables": tables,
        "metadata": accounts.metadata.to_mapping(),
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return manifest_path
