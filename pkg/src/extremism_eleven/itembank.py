"""The questionnaire item bank: loading, validation, fingerprints."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

# Scale name -> (source instrument, item count), in canonical order.
SCALE_MANIFEST = {
    "Extremism Scale": ("Ozer & Bertelsen (2018)", 14),
    "Social Dominance Orientation": ("Ho et al. (2015)", 8),
    "Radicalism Intention": ("Moskalenko & McCauley (2009)", 4),
    "Violent Intention": ("Obaidi et al. (2018a, 2018b)", 7),
    "Nationalism Scale": ("Weiss (2003)", 4),
    "Right-Wing Authoritarianism": ("Zakrisson (2005)", 15),
    "Self-Categorization Scale": ("Ellemers et al. (1999)", 3),
    "Dirty Dozen": ("Jonason & Webster (2010)", 12),
    "General Extremist": ("Jungkunz (2024)", 5),
    "Left-Wing Radical": ("Jungkunz (2024)", 6),
    "Right-Wing Radical": ("Jungkunz (2024)", 7),
    "Ethnic Intolerance": ("Weiss (2003)", 4),
}

CANONICAL_P = sum(n for _, n in SCALE_MANIFEST.values())


class ItemBankError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleItem:
    item_id: str
    scale: str
    source: str
    text: str
    provenance: Optional[str] = None

    def to_record(self) -> dict:
        rec = {"item_id": self.item_id, "scale": self.scale, "source": self.source, "text": self.text}
        if self.provenance is not None:
            rec["provenance"] = self.provenance
        return rec


@dataclass(frozen=True)
class ItemBank:
    items: tuple

    @property
    def p(self) -> int:
        return len(self.items)

    @property
    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.items]

    @property
    def texts(self) -> list[str]:
        return [it.text for it in self.items]

    def by_id(self, item_id: str) -> ScaleItem:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)

    def fingerprint(self) -> str:
        """SHA-256 over ids, scales and texts in bank order."""
        h = hashlib.sha256()
        for it in self.items:
            for part in (it.item_id, it.scale, it.text):
                h.update(part.encode("utf-8"))
                h.update(b"\x1f")
            h.update(b"\x1e")
        return h.hexdigest()

    @property
    def is_canonical(self) -> bool:
        return validate_item_bank(self).conformant


@dataclass
class ValidationReport:
    counts: dict
    conformant: bool
    deviations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _make_bank(records: list[dict], allow_unknown_scales: bool = False) -> ItemBank:
    items = []
    seen = set()
    for n, rec in enumerate(records, start=1):
        try:
            item_id, scale, source, text = (rec[k] for k in ("item_id", "scale", "source", "text"))
        except KeyError as exc:
            raise ItemBankError(f"item {n}: missing field {exc.args[0]!r}") from None
        if not item_id:
            raise ItemBankError(f"item {n}: empty item_id")
        if item_id in seen:
            raise ItemBankError(f"duplicate item_id {item_id!r}")
        if not isinstance(text, str) or not text.strip():
            raise ItemBankError(f"item {item_id!r}: empty text")
        if scale not in SCALE_MANIFEST and not allow_unknown_scales:
            raise ItemBankError(f"item {item_id!r}: unknown scale {scale!r}")
        seen.add(item_id)
        items.append(ScaleItem(item_id, scale, source, text, rec.get("provenance") or None))
    if not items:
        raise ItemBankError("item bank is empty")
    return ItemBank(tuple(items))


def load_item_bank(path=None, allow_unknown_scales: bool = False) -> ItemBank:
    """Load an item bank from JSON (array of objects) or TSV.

    With no path the canonical 89-item bank shipped with the package is used.
    Item order in the file is the bank's column order everywhere downstream.
    """
    if path is None:
        raw = resources.files("extremism_eleven").joinpath("data/item_bank.json").read_text("utf-8")
        return _make_bank(json.loads(raw), allow_unknown_scales)
    path = Path(path)
    if path.suffix.lower() in (".tsv", ".tab"):
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            records = list(reader)
    else:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
        if not isinstance(records, list):
            raise ItemBankError("item bank JSON must be an array of objects")
    return _make_bank(records, allow_unknown_scales)


def save_item_bank(bank: ItemBank, path) -> None:
    path = Path(path)
    if path.suffix.lower() in (".tsv", ".tab"):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("item_id\tscale\tsource\ttext\n")
            for it in bank.items:
                fields = (it.item_id, it.scale, it.source, it.text)
                if any("\t" in f or "\n" in f for f in fields):
                    raise ItemBankError(f"item {it.item_id!r} cannot be written as TSV")
                fh.write("\t".join(fields) + "\n")
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump([it.to_record() for it in bank.items], fh, ensure_ascii=False, indent=1)
            fh.write("\n")


def validate_item_bank(bank: ItemBank) -> ValidationReport:
    counts: dict = {}
    for it in bank.items:
        counts[it.scale] = counts.get(it.scale, 0) + 1
    deviations, warnings = [], []
    for scale, (_, expected) in SCALE_MANIFEST.items():
        got = counts.get(scale, 0)
        if got != expected:
            deviations.append(f"{scale} expected {expected} got {got}")
    for scale in counts:
        if scale not in SCALE_MANIFEST:
            warnings.append(f"unknown scale {scale!r}")
    conformant = not deviations and not warnings and bank.p == CANONICAL_P
    return ValidationReport(counts=counts, conformant=conformant, deviations=deviations, warnings=warnings)


def load_factor_fixture() -> dict:
    """Extremist Eleven names with their published top-loading items."""
    raw = resources.files("extremism_eleven").joinpath("data/extremist_eleven.json").read_text("utf-8")
    return json.loads(raw)


def extremist_eleven_names() -> list[str]:
    return [f["name"] for f in load_factor_fixture()["factors"]]
