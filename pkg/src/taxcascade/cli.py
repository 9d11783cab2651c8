"""Command-line interface: validate bundles, compute incidence, diff runs.

Exit codes: 0 on success, 1 when validation, computation, or convergence
fails, 2 on usage errors.  All outputs are deterministic: rerunning the same
command on the same bundle reproduces every output file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .accounts import (
    BundleError,
    COMPONENT_ORDER,
    DEFAULT_REPORT_COMPONENTS,
    DemandComponent,
    IOAccounts,
    load_bundle,
    save_bundle,
    validate,
)
from .engine import (
    SingularSystemError,
    apply_scenario,
    build_system,
    propagate_closed_form,
    propagate_truncated,
    CONSERVATION_RTOL,
    CONDITION_LIMIT,
)
from .margins import MarginError, redistribute_margins
from .rates import DISPLAY_THRESHOLD, effective_rates
from .reporting import (
    ND,
    bundle_digests,
    result_record,
    write_final_incidence_table,
    write_first_stage_table,
    write_margin_audit,
    write_rates_table,
    write_result_json,
    write_system_digest,
)

#: Environment variable giving the default output directory.
OUTPUT_DIR_ENV = "TAXCASCADE_OUT"


def _default_out() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "taxcascade-out")


def _components_arg(text: str) -> tuple[DemandComponent, ...]:
    by_value = {c.value: c for c in COMPONENT_ORDER}
    chosen = []
    for name in text.split(","):
        name = name.strip().lower()
        if name not in by_value:
            raise argparse.ArgumentTypeError(
                f"unknown component {name!r}; choose from "
                + ", ".join(by_value)
            )
        chosen.append(by_value[name])
    return tuple(chosen)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taxcascade",
        description="Final incidence of indirect taxes from input-output accounts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a bundle and write a validation report")
    p.add_argument("--manifest", required=True, help="path to the bundle manifest")
    p.add_argument("--out", default=_default_out(), help="output directory")

    p = sub.add_parser("compute", help="run the full incidence pipeline")
    p.add_argument("--manifest", required=True, help="path to the bundle manifest")
    p.add_argument(
        "--method",
        choices=("closed-form", "truncated"),
        default="closed-form",
        help="propagation method (default: closed-form)",
    )
    p.add_argument("--tol", type=float, help="truncation tolerance (truncated method)")
    p.add_argument(
        "--maxstages", type=int, help="stage limit (truncated method)"
    )
    p.add_argument(
        "--threshold",
        type=float,
        default=DISPLAY_THRESHOLD,
        help="mask rates when expenditure is at or below this (default: %(default)s)",
    )
    p.add_argument(
        "--scenario",
        help="CSV of per-activity tax scale factors (code,scale); omitted codes keep 1.0",
    )
    p.add_argument(
        "--skip-margins",
        action="store_true",
        help="propagate without redistributing margin shares",
    )
    p.add_argument(
        "--allow-residual",
        action="store_true",
        help="exit 0 even if the truncated series did not converge",
    )
    p.add_argument(
        "--components",
        type=_components_arg,
        default=DEFAULT_REPORT_COMPONENTS,
        help="comma-separated component columns to show "
        "(default: exports,government,households,gfcf)",
    )
    p.add_argument("--out", default=_default_out(), help="output directory")
    p.add_argument(
        "--format",
        choices=("csv", "json"),
        default="csv",
        help="table output format (default: csv)",
    )

    p = sub.add_parser("diff", help="compare two compute runs")
    p.add_argument("--baseline", required=True, help="output directory of the baseline run")
    p.add_argument("--scenario", required=True, help="output directory of the scenario run")
    p.add_argument("--out", default=_default_out(), help="output directory")

    return parser


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        print(f"usage error: manifest not found: {manifest}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        accounts = load_bundle(manifest, check=False)
    except BundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = validate(accounts)
    path = report.write_json(out / "validation_report.json")
    for check in report.checks:
        status = "ok" if check.passed else "FAIL"
        print(f"{check.name}: {status}" + ("" if check.passed else f" ({len(check.failures)} failure(s))"))
        for failure in check.failures[:5]:
            print(f"  {failure}")
    print(f"wrote {path}")
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# compute
# ---------------------------------------------------------------------------


def _read_scenario(path: Path, accounts: IOAccounts) -> np.ndarray:
    scale = np.ones(accounts.n)
    index = {code: i for i, code in enumerate(accounts.codes)}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"{path}: empty scenario file")
    for lineno, row in enumerate(rows[1:], start=2):
        code = row[0].strip()
        if code not in index:
            raise ValueError(f"{path}:{lineno}: unknown activity code {code!r}")
        scale[index[code]] = float(row[1])
    return scale


def cmd_compute(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        print(f"usage error: manifest not found: {manifest}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []

    try:
        accounts = load_bundle(manifest)
        print(f"loaded {accounts.n} activities from {manifest}")

        scenario_scale = None
        if args.scenario:
            scenario_scale = _read_scenario(Path(args.scenario), accounts)
            accounts = apply_scenario(accounts, scenario_scale)
            print(f"applied scenario scales from {args.scenario}")

        adjustment = None
        if args.skip_margins:
            engine_input = accounts
        else:
            engine_input, adjustment = redistribute_margins(accounts)
            print(
                f"margins: moved supply {adjustment.total_supply_moved:.2f}, "
                f"tax {adjustment.total_tax_moved:.2f}"
            )

        bundle_dir = out / "post_margin_bundle"
        save_bundle(engine_input, bundle_dir)
        outputs.append(f"{bundle_dir.name}/manifest.json")
        if adjustment is not None:
            path = write_margin_audit(adjustment, out / "margin_adjustment.csv")
            outputs.append(path.name)

        system = build_system(
            engine_input, allow_unredistributed_margins=args.skip_margins
        )
        path = write_system_digest(system, out / "system_digest.json")
        outputs.append(path.name)

        if args.method == "truncated":
            result = propagate_truncated(system, tol=args.tol, maxstages=args.maxstages)
        else:
            result = propagate_closed_form(system)

        report = effective_rates(
            result, engine_input.finaldemand, threshold=args.threshold
        )

        fmt = args.format
        ext = fmt
        path = write_first_stage_table(
            result, out / f"first_stage.{ext}", components=args.components, fmt=fmt
        )
        outputs.append(path.name)
        path = write_final_incidence_table(
            result, out / f"final_incidence.{ext}", components=args.components, fmt=fmt
        )
        outputs.append(path.name)
        path = write_rates_table(
            report, out / f"effective_rates.{ext}", components=args.components, fmt=fmt
        )
        outputs.append(path.name)

        tolerances = {
            "conservation_rtol": CONSERVATION_RTOL,
            "condition_limit": CONDITION_LIMIT,
            "truncation_tol": args.tol,
            "maxstages": args.maxstages,
            "threshold": args.threshold,
        }
        path = write_result_json(result, out / "result.json", tolerances=tolerances)
        outputs.append(path.name)

        audit = {
            "bundle": bundle_digests(manifest),
            "manifest": str(args.manifest),
            "scenario": args.scenario,
            "skip_margins": bool(args.skip_margins),
            "margins": None
            if adjustment is None
            else {
                "supply_moved": adjustment.total_supply_moved,
                "tax_moved": adjustment.total_tax_moved,
            },
            "method": result.method,
            "stages": result.stages,
            "converged": result.converged,
            "series_residual": result.series_residual,
            "conservation": {
                "residual": result.conservation_residual,
                "relative": result.conservation_relative,
                "within_tolerance": result.conserved,
            },
            "tolerances": tolerances,
            "totals": {
                "statutory": result.statutory_total,
                "final_incidence": result.grand_total,
                "by_component": {
                    c.value: float(result.component_totals[c.column])
                    for c in COMPONENT_ORDER
                },
            },
            "component_shares": {
                c.value: (
                    None
                    if np.isnan(report.component_shares[c.column])
                    else float(report.component_shares[c.column])
                )
                for c in COMPONENT_ORDER
            },
            "diagnostics": list(report.diagnostics),
            "outputs": sorted(outputs + ["audit.json"]),
        }
        (out / "audit.json").write_text(
            json.dumps(audit, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

        print(
            f"method {result.method}: final incidence {result.grand_total:.2f} "
            f"vs statutory {result.statutory_total:.2f} "
            f"(relative residual {result.conservation_relative:.2e})"
        )
        if not result.converged:
            print(
                f"warning: series did not converge in {result.stages} stages; "
                f"undelivered tax {result.series_residual:.6f}",
                file=sys.stderr,
            )
        print(f"wrote {len(outputs) + 1} files to {out}")
        if not result.converged and not args.allow_residual:
            return 1
        return 0
    except (BundleError, MarginError, SingularSystemError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# diff
# ---------------------------------------------------------------------------


def _read_report_table(directory: Path, stem: str) -> tuple[list[str], list[list[str]]]:
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"
    if csv_path.is_file():
        with open(csv_path, encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        return rows[0], rows[1:]
    if json_path.is_file():
        data = json.loads(json_path.read_text(encoding="utf-8"))
        header = data["columns"]
        return header, [[record[col] for col in header] for record in data["rows"]]
    raise FileNotFoundError(f"no {stem}.csv or {stem}.json in {directory}")


def _diff_table(
    header_b: list[str],
    rows_b: list[list[str]],
    header_s: list[str],
    rows_s: list[list[str]],
) -> tuple[list[str], list[list[str]]]:
    if header_b != header_s:
        raise ValueError(f"column mismatch: {header_b} vs {header_s}")
    keys_b = [row[0] for row in rows_b]
    keys_s = [row[0] for row in rows_s]
    if keys_b != keys_s:
        raise ValueError(
            f"row mismatch: baseline has {len(keys_b)} rows, scenario {len(keys_s)}; "
            "first difference at "
            + next(
                (f"{a!r} vs {b!r}" for a, b in zip(keys_b, keys_s) if a != b),
                "row count",
            )
        )
    value_cols = [i for i, name in enumerate(header_b) if name not in ("code", "label")]
    out_header = ["code", "label"]
    for i in value_cols:
        out_header += [f"{header_b[i]}_delta", f"{header_b[i]}_pct"]
    out_rows = []
    for row_b, row_s in zip(rows_b, rows_s):
        out_row = [row_b[0], row_b[1] if len(row_b) > 1 else ""]
        for i in value_cols:
            base, scen = row_b[i], row_s[i]
            if base == ND or scen == ND:
                out_row += [ND, ND]
                continue
            base_v, scen_v = float(base), float(scen)
            delta = scen_v - base_v
            out_row.append(f"{delta:.6f}")
            if base_v == 0:
                out_row.append(ND)
            else:
                out_row.append(f"{100.0 * delta / abs(base_v):.6f}")
        out_rows.append(out_row)
    return out_header, out_rows


def cmd_diff(args: argparse.Namespace) -> int:
    baseline = Path(args.baseline)
    scenario = Path(args.scenario)
    for directory in (baseline, scenario):
        if not directory.is_dir():
            print(f"usage error: not a directory: {directory}", file=sys.stderr)
            return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for stem, target in (
            ("final_incidence", "final_incidence_diff.csv"),
            ("effective_rates", "effective_rates_diff.csv"),
        ):
            header_b, rows_b = _read_report_table(baseline, stem)
            header_s, rows_s = _read_report_table(scenario, stem)
            header, rows = _diff_table(header_b, rows_b, header_s, rows_s)
            with open(out / target, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, delimiter=",", lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
            print(f"wrote {out / target}")
        return 0
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compute" and args.method == "truncated":
        if args.tol is None or args.maxstages is None:
            parser.error("--method truncated requires --tol and --maxstages")
    handlers = {"validate": cmd_validate, "compute": cmd_compute, "diff": cmd_diff}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
