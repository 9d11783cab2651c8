import json

import numpy as np
import numpy.testing as npt
import pytest

from taxcascade import (
    BundleError,
    BundleMetadata,
    COMPONENT_ORDER,
    DemandComponent,
    IOAccounts,
    TaxDestinationTable,
    load_bundle,
    save_bundle,
    validate,
)


def test_demo_bundle_loads(demo_manifest):
    accounts = load_bundle(demo_manifest)
    assert accounts.codes == ("farm", "mill", "trade")
    assert accounts.activities[0].label == "Crop and animal production"
    npt.assert_array_equal(accounts.supply, [100.0, 200.0, 50.0])
    npt.assert_array_equal(accounts.flows[0], [10.0, 60.0, 5.0])
    npt.assert_array_equal(accounts.marginshares, [0.0, 0.0, 0.8])
    npt.assert_array_equal(accounts.taxdest.statutory, [8.0, 30.0, 5.0])
    assert accounts.metadata.year == 2021
    assert accounts.metadata.tax_revenue[0] == ("general sales tax", 35.0)


def test_component_order_is_fixed():
    assert [c.value for c in COMPONENT_ORDER] == [
        "exports",
        "government",
        "households",
        "isflsf",
        "gfcf",
        "inventory",
    ]
    assert DemandComponent.HOUSEHOLDS.column == 2


def write_minimal_bundle(directory, *, delimiter=",", edits=None):
    """Two-activity bundle written by hand, with deliberately shuffled
    columns and row order to exercise header/code alignment."""
    d = delimiter
    files = {
        "manifest.json": json.dumps(
            {
                "activities": ["up", "down"],
                "components": [c.value for c in COMPONENT_ORDER],
                "delimiter": delimiter,
                "tables": {
                    "flows": "flows.csv",
                    "finaldemand": "fd.csv",
                    "supply": "supply.csv",
                    "taxdest": "taxdest.csv",
                    "marginshares": "margins.csv",
                },
            }
        ),
        # columns swapped relative to manifest order, rows swapped too
        "flows.csv": f"code{d}down{d}up\ndown{d}10{d}5\nup{d}40{d}20\n",
        "fd.csv": (
            f"code{d}households{d}exports{d}government{d}gfcf{d}inventory{d}isflsf\n"
            f"up{d}30{d}5{d}0{d}5{d}0{d}0\n"
            f"down{d}20{d}10{d}5{d}0{d}0{d}0\n"
        ),
        "supply.csv": f"code{d}supply\nup{d}100\ndown{d}50\n",
        "taxdest.csv": (
            f"code{d}statutory{d}up{d}down{d}exports{d}government{d}households{d}"
            f"isflsf{d}gfcf{d}inventory\n"
            f"up{d}10{d}2{d}4{d}1{d}0{d}3{d}0{d}0{d}0\n"
            f"down{d}6{d}1{d}1{d}0{d}1{d}3{d}0{d}0{d}0\n"
        ),
        "margins.csv": f"code{d}marginshare\nup{d}0\ndown{d}0\n",
    }
    if edits:
        files.update(edits)
    for name, text in files.items():
        (directory / name).write_text(text, encoding="utf-8")
    return directory / "manifest.json"


def test_alignment_by_header_and_code(tmp_path):
    accounts = load_bundle(write_minimal_bundle(tmp_path))
    assert accounts.codes == ("up", "down")
    # flows row "up" was written second and with columns reversed
    npt.assert_array_equal(accounts.flows, [[20.0, 40.0], [5.0, 10.0]])
    assert accounts.finaldemand[0, DemandComponent.EXPORTS.column] == 5.0
    assert accounts.finaldemand[0, DemandComponent.HOUSEHOLDS.column] == 30.0
    npt.assert_array_equal(accounts.taxdest.intermediate, [[2.0, 4.0], [1.0, 1.0]])
    npt.assert_array_equal(accounts.taxdest.final[:, 2], [3.0, 3.0])


def test_semicolon_delimiter(tmp_path):
    accounts = load_bundle(write_minimal_bundle(tmp_path, delimiter=";"))
    npt.assert_array_equal(accounts.supply, [100.0, 50.0])


def test_balance_tolerance_boundary(tmp_path):
    # row total for "up" is 100, so the allowed deviation is 1e-4
    ok_dir = tmp_path / "ok"
    ok_dir.mkdir()
    ok = write_minimal_bundle(
        ok_dir, edits={"supply.csv": "code,supply\nup,100.00009\ndown,50\n"}
    )
    assert load_bundle(ok).supply[0] == 100.00009

    bad_dir = tmp_path / "bad"
    bad_dir.mkdir()
    bad = write_minimal_bundle(
        bad_dir, edits={"supply.csv": "code,supply\nup,100.00011\ndown,50\n"}
    )
    with pytest.raises(BundleError, match="row_balance"):
        load_bundle(bad)


def test_missing_table_file(tmp_path):
    manifest = write_minimal_bundle(tmp_path)
    (tmp_path / "supply.csv").unlink()
    with pytest.raises(BundleError, match="not found"):
        load_bundle(manifest)


def test_missing_manifest_key(tmp_path):
    manifest = write_minimal_bundle(tmp_path)
    data = json.loads(manifest.read_text())
    del data["components"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(BundleError, match="components"):
        load_bundle(manifest)


def test_duplicate_activity_code_in_manifest(tmp_path):
    manifest = write_minimal_bundle(tmp_path)
    data = json.loads(manifest.read_text())
    data["activities"] = ["up", "up"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(BundleError, match="duplicate"):
        load_bundle(manifest)


def test_duplicate_row_in_table(tmp_path):
    manifest = write_minimal_bundle(
        tmp_path, edits={"supply.csv": "code,supply\nup,100\nup,100\ndown,50\n"}
    )
    with pytest.raises(BundleError, match="duplicate activity code"):
        load_bundle(manifest)


def test_missing_and_unknown_rows(tmp_path):
    manifest = write_minimal_bundle(
        tmp_path, edits={"supply.csv": "code,supply\nup,100\nelse,50\n"}
    )
    with pytest.raises(BundleError, match="missing rows|unknown activity"):
        load_bundle(manifest)


def test_wrong_columns_rejected(tmp_path):
    manifest = write_minimal_bundle(
        tmp_path, edits={"flows.csv": "code,up,sideways\nup,20,40\ndown,5,10\n"}
    )
    with pytest.raises(BundleError, match="columns"):
        load_bundle(manifest)


def test_reserved_code_rejected(tmp_path):
    manifest = write_minimal_bundle(tmp_path)
    data = json.loads(manifest.read_text())
    data["activities"] = ["up", "statutory"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(BundleError, match="reserved"):
        load_bundle(manifest)


def test_non_numeric_cell(tmp_path):
    manifest = write_minimal_bundle(
        tmp_path, edits={"supply.csv": "code,supply\nup,abc\ndown,50\n"}
    )
    with pytest.raises(BundleError, match="supply.csv:2"):
        load_bundle(manifest)


def test_check_false_defers_invariants(tmp_path):
    manifest = write_minimal_bundle(
        tmp_path, edits={"supply.csv": "code,supply\nup,999\ndown,50\n"}
    )
    accounts = load_bundle(manifest, check=False)
    report = validate(accounts)
    assert not report.ok
    names = [c.name for c in report.failed()]
    assert names == ["row_balance"]
    assert any("up" in f for f in report.failed()[0].failures)


def test_validate_flags_negative_flow(accounts_factory):
    accounts = accounts_factory(
        flows=[[0.0, -1.0], [0.0, 0.0]],
        finaldemand=np.zeros((2, 6)),
        supply=[-1.0, 0.0],
    )
    report = validate(accounts)
    failed = {c.name: c for c in report.failed()}
    assert "flow_signs" in failed
    assert failed["flow_signs"].residual == 1.0
    assert "s00 -> s01" in failed["flow_signs"].failures[0]


def test_negative_inventory_is_allowed(accounts_factory):
    fd = np.zeros((2, 6))
    fd[0, DemandComponent.INVENTORY.column] = -4.0
    fd[0, DemandComponent.EXPORTS.column] = 10.0
    accounts = accounts_factory(flows=np.zeros((2, 2)), finaldemand=fd)
    report = validate(accounts)
    assert report.ok


def test_negative_household_demand_is_not(accounts_factory):
    fd = np.zeros((2, 6))
    fd[1, DemandComponent.HOUSEHOLDS.column] = -2.0
    fd[1, DemandComponent.EXPORTS.column] = 8.0
    accounts = accounts_factory(flows=np.zeros((2, 2)), finaldemand=fd)
    report = validate(accounts)
    assert [c.name for c in report.failed()] == ["finaldemand_signs"]


def test_margin_share_out_of_range(accounts_factory):
    accounts = accounts_factory(
        flows=np.zeros((2, 2)),
        finaldemand=np.zeros((2, 6)),
        marginshares=[0.0, 1.5],
    )
    report = validate(accounts)
    failed = {c.name: c for c in report.failed()}
    assert failed["margin_share_range"].residual == pytest.approx(0.5)


def test_statutory_mismatch_flagged(accounts_factory):
    dest = np.zeros((2, 8))
    dest[0, 0] = 5.0
    base = accounts_factory(np.zeros((2, 2)), np.zeros((2, 6)))
    accounts = IOAccounts(
        activities=base.activities,
        flows=base.flows,
        finaldemand=base.finaldemand,
        supply=base.supply,
        taxdest=TaxDestinationTable(dest=dest, statutory=np.array([9.0, 0.0])),
        marginshares=base.marginshares,
    )
    report = validate(accounts)
    names = [c.name for c in report.failed()]
    assert "statutory_rows" in names
    assert "statutory_total" in names


def test_shape_mismatch_rejected(accounts_factory):
    with pytest.raises(ValueError, match="final demand"):
        accounts_factory(flows=np.zeros((2, 2)), finaldemand=np.zeros((2, 5)))


def test_arrays_are_read_only(demo_manifest):
    accounts = load_bundle(demo_manifest)
    with pytest.raises(ValueError):
        accounts.flows[0, 0] = 99.0


def test_round_trip_is_bit_exact(tmp_path, brazil_accounts):
    manifest = save_bundle(brazil_accounts, tmp_path / "bundle")
    again = load_bundle(manifest)
    npt.assert_array_equal(again.flows, brazil_accounts.flows)
    npt.assert_array_equal(again.finaldemand, brazil_accounts.finaldemand)
    npt.assert_array_equal(again.supply, brazil_accounts.supply)
    npt.assert_array_equal(again.taxdest.dest, brazil_accounts.taxdest.dest)
    npt.assert_array_equal(again.taxdest.statutory, brazil_accounts.taxdest.statutory)
    npt.assert_array_equal(again.marginshares, brazil_accounts.marginshares)
    assert again.codes == brazil_accounts.codes
    assert again.metadata == brazil_accounts.metadata


def test_round_trip_awkward_values(tmp_path, accounts_factory):
    flows = np.array([[1 / 3, 0.1], [np.pi, 2 / 7]])
    fd = np.full((2, 6), 1e-17)
    accounts = accounts_factory(flows=flows, finaldemand=fd)
    manifest = save_bundle(accounts, tmp_path, delimiter=";")
    again = load_bundle(manifest)
    npt.assert_array_equal(again.flows, flows)
    npt.assert_array_equal(again.finaldemand, fd)


def test_metadata_round_trip_via_mapping():
    meta = BundleMetadata(year=2015, currency="BRL", tax_revenue=(("vat", 1.5),))
    assert BundleMetadata.from_mapping(meta.to_mapping()) == meta


def test_validation_report_json(tmp_path, demo_manifest):
    report = validate(load_bundle(demo_manifest))
    path = report.write_json(tmp_path / "report.json")
    records = json.loads(path.read_text())
    assert {r["check"] for r in records} >= {"row_balance", "statutory_rows"}
    assert all(r["passed"] for r in records)
