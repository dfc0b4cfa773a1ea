import json

import pytest

from extremism_eleven.itembank import (CANONICAL_P, SCALE_MANIFEST, ItemBank, ItemBankError, ScaleItem,
                                       extremist_eleven_names, load_factor_fixture, load_item_bank,
                                       save_item_bank, validate_item_bank)

TABLE_COUNTS = (14, 8, 4, 7, 4, 15, 3, 12, 5, 6, 7, 4)


def test_manifest_matches_table():
    assert tuple(n for _, n in SCALE_MANIFEST.values()) == TABLE_COUNTS
    assert CANONICAL_P == 89


def test_canonical_bank(bank):
    assert bank.p == 89
    report = validate_item_bank(bank)
    assert report.conformant and not report.deviations and not report.warnings
    assert tuple(report.counts[s] for s in SCALE_MANIFEST) == TABLE_COUNTS
    assert bank.is_canonical
    assert len(set(bank.item_ids)) == 89


def test_bank_order_follows_table(bank):
    scales = [it.scale for it in bank.items]
    first_seen = list(dict.fromkeys(scales))
    assert first_seen == list(SCALE_MANIFEST)
    # each scale occupies one contiguous block
    assert sum(1 for a, b in zip(scales, scales[1:]) if a != b) == len(SCALE_MANIFEST) - 1


def test_every_item_has_provenance(bank):
    assert {it.provenance for it in bank.items} <= {"appendix", "source-instrument", "reconstructed"}


def test_appendix_item_text(bank):
    it = bank.by_id("VI_04")
    assert it.text == "I will not personally use violence to help my ethnic group."
    assert it.scale == "Violent Intention"
    with pytest.raises(KeyError):
        bank.by_id("NOPE")


def test_fingerprint_is_stable_and_sensitive(bank):
    assert bank.fingerprint() == load_item_bank().fingerprint()
    items = list(bank.items)
    items[0] = ScaleItem(items[0].item_id, items[0].scale, items[0].source, items[0].text + ".")
    assert ItemBank(tuple(items)).fingerprint() != bank.fingerprint()
    assert ItemBank(tuple(reversed(bank.items))).fingerprint() != bank.fingerprint()


def test_missing_item_reported(bank):
    short = ItemBank(tuple(it for it in bank.items if it.item_id != "DD_05"))
    report = validate_item_bank(short)
    assert not report.conformant
    assert report.deviations == ["Dirty Dozen expected 12 got 11"]


@pytest.mark.parametrize("suffix", [".json", ".tsv"])
def test_round_trip(bank, tmp_path, suffix):
    path = tmp_path / f"bank{suffix}"
    save_item_bank(bank, path)
    again = load_item_bank(path)
    assert again.fingerprint() == bank.fingerprint()


def test_bad_banks(tmp_path):
    path = tmp_path / "b.json"
    path.write_text(json.dumps([{"item_id": "a", "scale": "Dirty Dozen", "source": "s", "text": "t"},
                                {"item_id": "a", "scale": "Dirty Dozen", "source": "s", "text": "u"}]))
    with pytest.raises(ItemBankError, match="duplicate"):
        load_item_bank(path)
    path.write_text(json.dumps([{"item_id": "a", "scale": "Made Up", "source": "s", "text": "t"}]))
    with pytest.raises(ItemBankError, match="unknown scale"):
        load_item_bank(path)
    custom = load_item_bank(path, allow_unknown_scales=True)
    assert validate_item_bank(custom).warnings == ["unknown scale 'Made Up'"]
    path.write_text(json.dumps([{"item_id": "a", "scale": "Dirty Dozen", "text": "t"}]))
    with pytest.raises(ItemBankError, match="source"):
        load_item_bank(path)
    path.write_text("[]")
    with pytest.raises(ItemBankError, match="empty"):
        load_item_bank(path)


def test_factor_fixture(bank):
    names = extremist_eleven_names()
    assert len(names) == 11
    assert names[0] == "Revolutionary Attitude" and names[-1] == "National Self-interest"
    fixture = load_factor_fixture()
    ids = set(bank.item_ids)
    rows = [r for f in fixture["factors"] for r in f["top_items"]]
    assert all(r["item_id"] in ids for r in rows)
    # the published table has two loadings above 1, kept as printed
    over = {r["item_id"]: r["loading"] for r in rows if abs(r["loading"]) > 1}
    assert over == {"GE_01": 1.15, "SDO_02": 1.06}
    assert len(rows) == 88
    first = fixture["factors"][0]["top_items"][0]
    assert (first["item_id"], first["loading"]) == ("GE_03", 0.80)
    violent = {r["item_id"]: r["loading"] for r in fixture["factors"][1]["top_items"]}
    assert violent["VI_04"] == -0.86
    for r in rows:
        assert bank.by_id(r["item_id"]).scale == r["questionnaire"]
