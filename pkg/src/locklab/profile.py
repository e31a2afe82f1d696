"""Security profiles: the toggle set separating vulnerable from hardened.

Each matrix row owns exactly one profile field so that a single-control
ablation flips exactly one exploit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Literal

SessionAuth = Literal["offline_kdf", "mutual_auth"]


@dataclass(frozen=True)
class SecurityProfile:
    cert_pinning: Literal["patchable", "tamper_resistant"]
    api_encryption: Literal["static_ecb", "dh_gcm"]
    enrollment_auth: SessionAuth
    session_auth: SessionAuth
    dfu_integrity: Literal["crc16", "signature"]
    legacy_dfu: bool
    sensor_class: int
    debug_port: bool
    tamper_evident: bool
    attestation: bool
    wake_mode: Literal["touch", "button"]
    session_cipher: Literal["ecb", "gcm"]

    def to_dict(self) -> dict:
        return asdict(self)

    def is_hardened(self, control: str) -> bool:
        field, hardened = CONTROL_FIELDS[control]
        value = getattr(self, field)
        if field == "sensor_class":
            return value >= 2
        return value == hardened

    def with_ablations(self, tokens: Iterable[str]) -> "SecurityProfile":
        profile = self
        for token in tokens:
            profile = profile.flip(token)
        return profile

    def flip(self, token: str) -> "SecurityProfile":
        """Toggle the control(s) named by ``token`` to the opposite side."""
        changes = {}
        for field in resolve_ablation(token):
            vulnerable, hardened = FIELD_VALUES[field]
            current = getattr(self, field)
            is_hard = current >= 2 if field == "sensor_class" else current == hardened
            changes[field] = vulnerable if is_hard else hardened
        return replace(self, **changes)


VULNERABLE = SecurityProfile(
    cert_pinning="patchable",
    api_encryption="static_ecb",
    enrollment_auth="offline_kdf",
    session_auth="offline_kdf",
    dfu_integrity="crc16",
    legacy_dfu=True,
    sensor_class=1,
    debug_port=True,
    tamper_evident=False,
    attestation=False,
    wake_mode="touch",
    session_cipher="ecb",
)

HARDENED = SecurityProfile(
    cert_pinning="tamper_resistant",
    api_encryption="dh_gcm",
    enrollment_auth="mutual_auth",
    session_auth="mutual_auth",
    dfu_integrity="signature",
    legacy_dfu=False,
    sensor_class=2,
    debug_port=False,
    tamper_evident=True,
    attestation=True,
    wake_mode="button",
    session_cipher="gcm",
)

PRESETS = {"vulnerable": VULNERABLE, "hardened": HARDENED}

FIELD_VALUES = {
    f.name: (getattr(VULNERABLE, f.name), getattr(HARDENED, f.name)) for f in fields(SecurityProfile)
}

# matrix row -> (profile field, hardened value)
CONTROL_FIELDS = {
    "A": ("cert_pinning", "tamper_resistant"),
    "B": ("api_encryption", "dh_gcm"),
    "F": ("enrollment_auth", "mutual_auth"),
    "G": ("session_auth", "mutual_auth"),
    "H": ("dfu_integrity", "signature"),
    "C01": ("tamper_evident", True),
    "C02": ("debug_port", False),
    "C03": ("legacy_dfu", False),
    "C04": ("sensor_class", 2),
    "C06": ("attestation", True),
}
MATRIX_ROWS = tuple(CONTROL_FIELDS)

# "session_auth" as an ablation name covers every check made at session init
ABLATION_GROUPS = {
    "session_auth": ("enrollment_auth", "session_auth"),
}


def resolve_ablation(token: str) -> tuple[str, ...]:
    if token in CONTROL_FIELDS:
        return (CONTROL_FIELDS[token][0],)
    if token in ABLATION_GROUPS:
        return ABLATION_GROUPS[token]
    if token in FIELD_VALUES:
        return (token,)
    raise KeyError(f"unknown ablation {token!r}; use a row id {list(CONTROL_FIELDS)} or a profile field")


def build_profile(preset: str, ablations: Iterable[str] = ()) -> SecurityProfile:
    try:
        base = PRESETS[preset]
    except KeyError:
        raise KeyError(f"unknown profile {preset!r}") from None
    return base.with_ablations(ablations)
