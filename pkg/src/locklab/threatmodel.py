"""Threat actors, assets and controls, each tied to what implements it here."""

from __future__ import annotations

from dataclasses import dataclass

GOAL = "TA04"
UNENUMERATED = "unenumerated"


@dataclass(frozen=True)
class Threat:
    id: str
    name: str
    exercised_by: tuple[str, ...]


@dataclass(frozen=True)
class Asset:
    id: str
    name: str


@dataclass(frozen=True)
class Control:
    id: str
    name: str
    protects: tuple[str, ...]
    mitigates: tuple[str, ...]
    toggle: str | None  # profile field, or None when narrative only
    matrix_row: str | None
    note: str = ""


THREATS = (
    Threat("TA01", "physical tampering with the device", ("row_C01",)),
    Threat("TA02", "reprogramming or readout over exposed debug access", ("row_C02",)),
    Threat("TA03", "wireless firmware replacement", ("droplock_e2e", "row_H", "row_C03")),
    Threat("TA04", "biometric data retrieval", ("droplock_e2e", "row_C04")),
    Threat("TA05", "use of an impostor device", ("row_C06", "impostor_encounters")),
    Threat("TA06", "counterfeit droplock copying a known product", ("impostor_encounters",)),
)

ASSETS = (
    Asset("A02", "biometric data"),
    Asset("A03", "the device"),
    Asset("A04", "firmware integrity"),
)
# The source figure lists more assets (A01, A05, ...) whose meaning is not
# recoverable; we carry a marker instead of guessing.
ASSET_GAPS = ("A01", "A05")

CONTROLS = (
    Control("C01", "tamper evidence", ("A03",), ("TA01",), "tamper_evident", "C01"),
    Control("C02", "debug disabled", ("A03", "A04"), ("TA02",), "debug_port", "C02"),
    Control("C03", "signed firmware, legacy tooling refused", ("A04",), ("TA03",), "legacy_dfu", "C03"),
    Control("C04", "raw image never leaves the sensor", ("A02",), ("TA04",), "sensor_class", "C04"),
    Control(
        "C05", "user awareness", ("A02",), ("TA05", "TA06"), None, None,
        note="narrative only; exercised as the victim's scan_first behavior",
    ),
    Control("C06", "device attestation beacon", ("A02", "A03"), ("TA05", "TA06"), "attestation", "C06"),
)


def as_dict() -> dict:
    return {
        "goal": GOAL,
        "threats": [{"id": t.id, "name": t.name, "exercised_by": list(t.exercised_by)} for t in THREATS],
        "assets": [{"id": a.id, "name": a.name} for a in ASSETS]
        + [{"id": a, "name": UNENUMERATED} for a in ASSET_GAPS],
        "controls": [
            {
                "id": c.id,
                "name": c.name,
                "protects": list(c.protects),
                "mitigates": list(c.mitigates),
                "toggle": c.toggle,
                "matrix_row": c.matrix_row,
                "note": c.note,
            }
            for c in CONTROLS
        ],
    }
