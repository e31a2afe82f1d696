"""Scenario runner, ablation matrix, device scanner and reports.

A scenario is a JSON fixture: an ordered list of steps, each optionally
guarded by the control that should stop it. The expected outcome is read
off the guards: the first step whose guarding control is hardened in the
active profile is where the run must fail, with the guard's error.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from locklab import cryptobox, threatmodel
from locklab.app import App, build_app_binary
from locklab.attacker import (
    IMPOSTOR_KINDS,
    Attacker,
    Harvester,
    build_impostor,
    decrypt_captured,
    droplock_image,
    extract_static_key,
    forge_dfu,
    identities_from,
    intercept_api,
    patch_app_pinning,
    physical_dump,
)
from locklab.cloud import Cloud, Manufacturer
from locklab.errors import AttackError, ErrorCode, LockLabError
from locklab.firmware import Behavior, InstalledFirmware
from locklab.link import LockClient, open_transport
from locklab.lock import BroadcastChannel, Lock
from locklab.profile import MATRIX_ROWS, SecurityProfile, build_profile
from locklab.sensor import pseudo_image

SCHEMA = "locklab.report/1"
SUCCEEDS = "SUCCEEDS"
ATTESTATION_SIZE = 8 + 32 + 64 + 32 + 64


def fails_at(phase: str, error: str) -> str:
    return f"FAILS_AT:{phase}:{error}"


# -- scanning and victims ---------------------------------------------------


class Verdict(str, Enum):
    GENUINE = "GENUINE"
    UNVERIFIED = "UNVERIFIED"
    FIRMWARE_MISMATCH = "FIRMWARE_MISMATCH"


def scan_device(
    client: LockClient,
    ca_key: bytes,
    published_digests: Iterable[bytes],
    rng: random.Random,
) -> Verdict:
    """Challenge the attestation beacon and check it against the catalog."""
    challenge = rng.randbytes(16)
    try:
        reply = client.attest(challenge)
    except LockLabError:
        return Verdict.UNVERIFIED
    if len(reply) != ATTESTATION_SIZE:
        return Verdict.UNVERIFIED
    hwid, vk, cert = reply[:8], reply[8:40], reply[40:104]
    digest, sig = reply[104:136], reply[136:200]
    if not cryptobox.verify(ca_key, hwid + vk, cert):
        return Verdict.UNVERIFIED
    if not cryptobox.verify(vk, hwid + challenge + digest, sig):
        return Verdict.UNVERIFIED
    if digest not in set(published_digests):
        return Verdict.FIRMWARE_MISMATCH
    return Verdict.GENUINE


@dataclass(frozen=True)
class TouchOutcome:
    verdict: Optional[Verdict]
    touched: bool
    captured: bool


def victim_touch(
    lock: Lock,
    client: LockClient,
    victim: str,
    behavior: str,
    *,
    ca_key: bytes,
    published_digests: Iterable[bytes],
    rng: random.Random,
    press_button: bool = False,
) -> TouchOutcome:
    if behavior not in ("touch_immediately", "scan_first"):
        raise ValueError(behavior)
    verdict = None
    if behavior == "scan_first":
        verdict = scan_device(client, ca_key, published_digests, rng)
        if verdict is not Verdict.GENUINE:
            return TouchOutcome(verdict, False, False)
    if press_button:
        lock.press_button()
    return TouchOutcome(verdict, True, lock.touch(victim))


# -- testbed ----------------------------------------------------------------


class Testbed:
    """Freshly built endpoints for one run, all seeded from one number."""

    __test__ = False  # not a pytest class despite the name

    def __init__(self, profile: SecurityProfile, seed: int, transport: str = "inproc"):
        self.profile = profile
        self.seed = seed
        self.transport = transport
        root = random.Random(seed)
        self.manufacturer = Manufacturer(random.Random(root.getrandbits(64)))
        self.cloud = Cloud(self.manufacturer, profile, random.Random(root.getrandbits(64)))
        self.broadcast = BroadcastChannel()
        self.lock = self.manufacturer.provision_lock(profile, self.broadcast)
        self.app = App(
            build_app_binary(profile.cert_pinning),
            self.cloud,
            random.Random(root.getrandbits(64)),
            api_mode=profile.api_encryption,
        )
        self.attacker = Attacker(random.Random(root.getrandbits(64)))
        self.rng = random.Random(root.getrandbits(64))
        self.account = self.cloud.create_account("owner")
        self.harvester = Harvester(self.broadcast)
        self._transports: list[Any] = []
        self.client = self.connect(self.lock)
        self.vars: dict[str, Any] = {}

    def connect(self, lock: Lock) -> LockClient:
        transport = open_transport(lock, self.transport)
        self._transports.append(transport)
        return LockClient(transport)

    def close(self) -> None:
        for t in self._transports:
            t.close()
        self._transports.clear()

    def __enter__(self) -> "Testbed":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def scan(self, client: LockClient) -> Verdict:
        return scan_device(
            client,
            self.manufacturer.attestation_ca.verification_key,
            self.manufacturer.published_digests(),
            self.rng,
        )


# -- steps ------------------------------------------------------------------

Step = Callable[[Testbed, dict], str]
STEPS: dict[str, Step] = {}


def step(name: str) -> Callable[[Step], Step]:
    def register(fn: Step) -> Step:
        STEPS[name] = fn
        return fn

    return register


def _require(tb: Testbed, key: str) -> Any:
    if key not in tb.vars:
        raise AttackError(ErrorCode.EXPECTATION_FAILED, f"no {key} from an earlier step")
    return tb.vars[key]


def _app_flow(tb: Testbed, name: str) -> Callable[[App], Any]:
    flows = {
        "enroll": lambda app: tb.vars.__setitem__(
            "owner_identity", app.enroll_flow(tb.client, tb.account, rollback=tb.lock.factory_reset)
        ),
        "unlock": lambda app: app.unlock_flow(tb.client, tb.account),
    }
    return flows[name]


@step("owner_enroll")
def _owner_enroll(tb: Testbed, args: dict) -> str:
    _app_flow(tb, "enroll")(tb.app)
    return f"serial {tb.vars['owner_identity'].serial.hex()} registered"


@step("owner_unlock")
def _owner_unlock(tb: Testbed, args: dict) -> str:
    tb.app.unlock_flow(tb.client, tb.account)
    return "bolt open"


@step("owner_fota")
def _owner_fota(tb: Testbed, args: dict) -> str:
    version = tb.app.fota_flow(tb.client, tb.account, args.get("version", tb.manufacturer.current_version))
    return f"firmware {version} applied"


@step("cloud_offline")
def _cloud_offline(tb: Testbed, args: dict) -> str:
    tb.cloud.online = False
    return "cloud unreachable"


@step("patch_app")
def _patch_app(tb: Testbed, args: dict) -> str:
    tb.app.binary = patch_app_pinning(tb.app.binary)
    return "pinning removed by repack"


@step("intercept_api")
def _intercept(tb: Testbed, args: dict) -> str:
    tb.vars["traffic"] = traffic = intercept_api(tb.app, _app_flow(tb, args.get("flow", "unlock")))
    return f"{len(traffic)} envelopes captured"


@step("tap_api")
def _tap(tb: Testbed, args: dict) -> str:
    flow = _app_flow(tb, args.get("flow", "enroll"))
    tb.vars["traffic"] = traffic = intercept_api(tb.app, flow, intercepting=False)
    return f"{len(traffic)} envelopes observed"


@step("extract_static_key")
def _extract(tb: Testbed, args: dict) -> str:
    tb.vars["static_key"] = extract_static_key(tb.app.binary)
    return "static API key recovered from the app"


@step("decrypt_captured")
def _decrypt(tb: Testbed, args: dict) -> str:
    capture = decrypt_captured(_require(tb, "traffic"), _require(tb, "static_key"))
    tb.vars["capture"] = capture
    found = identities_from(capture)
    if not found:
        raise AttackError(ErrorCode.EXPECTATION_FAILED, "no identity in decrypted traffic")
    tb.vars["identity"] = found[0]
    return f"{len(capture.transcripts)} payloads decrypted, serial {found[0].serial.hex()} and key recovered"


@step("leak_identity")
def _leak(tb: Testbed, args: dict) -> str:
    # a registered owner already knows their own device's serial and key
    tb.vars["identity"] = _require(tb, "owner_identity")
    return "owner-held identity reused"


@step("offline_enroll")
def _offline_enroll(tb: Testbed, args: dict) -> str:
    tb.vars["identity"] = ident = tb.attacker.offline_enroll(tb.client)
    return f"enrolled under attacker serial {ident.serial.hex()}"


@step("offline_session")
def _offline_session(tb: Testbed, args: dict) -> str:
    tb.vars["session"] = tb.attacker.offline_session(tb.client, _require(tb, "identity"))
    return "session key derived locally"


@step("owner_session")
def _owner_session(tb: Testbed, args: dict) -> str:
    tb.vars["session"] = tb.app.open_session(tb.client, tb.account)
    return "session issued by the cloud"


@step("unlock")
def _unlock(tb: Testbed, args: dict) -> str:
    _require(tb, "session").unlock()
    return "bolt open"


@step("enter_dfu")
def _enter_dfu(tb: Testbed, args: dict) -> str:
    tb.attacker.enter_dfu(_require(tb, "session"))
    return "lock in DFU mode"


@step("forge_dfu")
def _forge(tb: Testbed, args: dict) -> str:
    fmt = args.get("format", "modern")
    tb.vars["package"] = pkg = forge_dfu(droplock_image(), fmt=fmt)
    return f"{fmt} package {pkg.version} crc16 {pkg.crc16:04x}"


@step("dfu_receive")
def _dfu_receive(tb: Testbed, args: dict) -> str:
    tb.attacker.dfu_receive(tb.client, _require(tb, "package"))
    return "package applied"


@step("install_droplock")
def _install(tb: Testbed, args: dict) -> str:
    # stands in for whichever delivery path the attacker used
    tb.lock.install_firmware(InstalledFirmware("6.6.6", Behavior.DROPLOCK, droplock_image()))
    return "droplock firmware running"


@step("victim_touch")
def _victim_touch(tb: Testbed, args: dict) -> str:
    victim = args.get("victim", "victim-1")
    outcome = victim_touch(
        tb.lock,
        tb.client,
        victim,
        args.get("behavior", "touch_immediately"),
        ca_key=tb.manufacturer.attestation_ca.verification_key,
        published_digests=tb.manufacturer.published_digests(),
        rng=tb.rng,
        press_button=args.get("press_button", False),
    )
    tb.vars.setdefault("victims", []).append(victim)
    verdict = outcome.verdict.value if outcome.verdict else "not scanned"
    return f"{victim}: {verdict}, touched={outcome.touched}, captured={outcome.captured}"


@step("harvest_listen")
def _harvest(tb: Testbed, args: dict) -> str:
    images = tb.harvester.listen()
    tb.vars.setdefault("harvested", []).extend(images)
    if not images:
        raise AttackError(ErrorCode.NOTHING_HARVESTED, "no image records on the air")
    for victim, image in zip(tb.vars.get("victims", []), images):
        if image != pseudo_image(victim):
            raise AttackError(ErrorCode.HARVEST_MISMATCH, f"image for {victim} differs")
    return f"{len(images)} images harvested"


@step("physical_dump")
def _dump(tb: Testbed, args: dict) -> str:
    dump = physical_dump(tb.lock)
    tb.vars["dump"] = dump
    return f"firmware {len(dump.firmware_image)} bytes, identity {'present' if dump.identity else 'absent'}"


@step("tamper_check")
def _tamper_check(tb: Testbed, args: dict) -> str:
    if tb.lock.tamper_flag:
        raise AttackError(ErrorCode.TAMPER_DETECTED, "case shows signs of opening")
    return "no visible trace"


@step("provision_reference")
def _reference(tb: Testbed, args: dict) -> str:
    tb.vars["reference"] = ref = tb.manufacturer.provision_lock(tb.profile, BroadcastChannel())
    tb.vars["reference_client"] = tb.connect(ref)
    return "genuine unit from the same line"


@step("scan_compare")
def _scan_compare(tb: Testbed, args: dict) -> str:
    genuine = tb.scan(_require(tb, "reference_client"))
    target = tb.scan(tb.client)
    detail = f"genuine unit {genuine.value}, target {target.value}"
    if genuine is not target:
        raise AttackError(ErrorCode.IMPOSTOR_DETECTED, detail)
    return detail + ", indistinguishable"


@step("check_registry")
def _check_registry(tb: Testbed, args: dict) -> str:
    ident = tb.vars.get("identity")
    if ident is not None and ident.serial in tb.cloud.registry:
        raise AttackError(ErrorCode.EXPECTATION_FAILED, "attacker identity reached the cloud registry")
    return f"{len(tb.cloud.registry)} registry entries"


@step("enrollment_race")
def _race(tb: Testbed, args: dict) -> str:
    """Attacker and owner both reach a fresh lock; whoever arrives first enrolls.

    Arrival times are simulated rather than raced on threads: the owner pays
    a cloud round trip, the attacker only its own latency. Same inputs, same
    winner.
    """
    cloud_rtt = args.get("cloud_rtt_ms", 120)
    attacker_latency = args.get("attacker_latency_ms", 40)
    advantage = cloud_rtt - attacker_latency
    if advantage <= 0:
        _app_flow(tb, "enroll")(tb.app)
        tb.vars["identity"] = tb.attacker.offline_enroll(tb.client)  # raises WRONG_STATE
        return "attacker enrolled after the owner"
    tb.vars["identity"] = tb.attacker.offline_enroll(tb.client)
    try:
        _app_flow(tb, "enroll")(tb.app)
    except LockLabError as exc:
        return f"attacker ahead by {advantage} ms; owner enrollment failed with {exc.code.name}"
    raise AttackError(ErrorCode.EXPECTATION_FAILED, "owner enrolled a lock the attacker already holds")


# -- scenarios --------------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    control: str
    phase: str
    error: str

    def active(self, profile: SecurityProfile) -> bool:
        # "always" marks a step that fails under every profile
        return self.control == "always" or profile.is_hardened(self.control)


@dataclass(frozen=True)
class StepSpec:
    op: str
    args: dict = field(default_factory=dict)
    guards: tuple[Guard, ...] = ()
    tolerate: tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    steps: tuple[StepSpec, ...]

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        steps = []
        for raw in data["steps"]:
            if raw["op"] not in STEPS:
                raise ValueError(f"scenario {data['name']!r}: unknown step {raw['op']!r}")
            guards = raw.get("guards", [])
            if isinstance(guards, dict):
                guards = [guards]
            steps.append(StepSpec(
                raw["op"],
                dict(raw.get("args", {})),
                tuple(Guard(g["control"], g["phase"], g["error"]) for g in guards),
                tuple(raw.get("tolerate", ())),
            ))
        return cls(data["name"], data.get("description", ""), tuple(steps))

    def expected(self, profile: SecurityProfile) -> str:
        for s in self.steps:
            for g in s.guards:
                if g.active(profile):
                    return fails_at(g.phase, g.error)
        return SUCCEEDS


def load_scenarios(extra_dir: Optional[Path] = None) -> dict[str, Scenario]:
    sources = [p for p in (resources.files("locklab") / "data" / "scenarios").iterdir() if p.name.endswith(".json")]
    if extra_dir is not None:
        sources += sorted(Path(extra_dir).glob("*.json"))
    out = {}
    for src in sorted(sources, key=lambda p: p.name):
        scenario = Scenario.from_dict(json.loads(src.read_text()))
        out[scenario.name] = scenario
    return out


@dataclass
class StepResult:
    op: str
    status: str  # ok | failed | tolerated | skipped
    phase: Optional[str] = None
    error: Optional[str] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"op": self.op, "status": self.status, "phase": self.phase, "error": self.error, "detail": self.detail}


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    preset: str
    ablations: list[str]
    profile: dict
    transport: str
    steps: list[StepResult]
    expected: str
    outcome: str
    tamper_flag: bool
    broadcast_records: int
    broadcast_bytes: int
    harvested: int
    registry_entries: int
    lock_state: str
    firmware: str
    events: list[str]

    @property
    def passed(self) -> bool:
        return self.outcome == self.expected

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "profile": {"preset": self.preset, "ablations": list(self.ablations), "fields": self.profile},
            "transport": self.transport,
            "steps": [s.to_dict() for s in self.steps],
            "expected": self.expected,
            "outcome": self.outcome,
            "passed": self.passed,
            "tamper_flag": self.tamper_flag,
            "broadcast": {"records": self.broadcast_records, "bytes": self.broadcast_bytes},
            "harvested": self.harvested,
            "registry_entries": self.registry_entries,
            "lock": {"state": self.lock_state, "firmware": self.firmware},
            "events": list(self.events),
        }


def run_scenario(
    name: str,
    preset: str = "vulnerable",
    ablations: Iterable[str] = (),
    *,
    seed: int = 1,
    transport: str = "inproc",
    scenarios: Optional[dict[str, Scenario]] = None,
) -> ScenarioReport:
    scenarios = load_scenarios() if scenarios is None else scenarios
    if name not in scenarios:
        raise LockLabError(ErrorCode.UNKNOWN_SCENARIO, name)
    scenario = scenarios[name]
    ablations = list(ablations)
    profile = build_profile(preset, ablations)
    results: list[StepResult] = []
    outcome = SUCCEEDS
    with Testbed(profile, seed, transport) as tb:
        for spec in scenario.steps:
            if outcome != SUCCEEDS:
                results.append(StepResult(spec.op, "skipped"))
                continue
            try:
                detail = STEPS[spec.op](tb, spec.args)
                results.append(StepResult(spec.op, "ok", detail=detail))
            except LockLabError as exc:
                phase = exc.phase or spec.op
                if exc.code.name in spec.tolerate:
                    results.append(StepResult(spec.op, "tolerated", phase, exc.code.name, exc.detail))
                    continue
                results.append(StepResult(spec.op, "failed", phase, exc.code.name, exc.detail))
                outcome = fails_at(phase, exc.code.name)
        lock = tb.lock
        return ScenarioReport(
            scenario=name,
            seed=seed,
            preset=preset,
            ablations=ablations,
            profile=profile.to_dict(),
            transport=transport,
            steps=results,
            expected=scenario.expected(profile),
            outcome=outcome,
            tamper_flag=lock.tamper_flag,
            broadcast_records=len(tb.broadcast),
            broadcast_bytes=tb.broadcast.size,
            harvested=len(tb.vars.get("harvested", [])),
            registry_entries=len(tb.cloud.registry),
            lock_state=lock.state.value,
            firmware=f"{lock.firmware.version} {lock.firmware.behavior.value}",
            events=[f"{e} {d}".strip() for e, d in lock.events],
        )


# -- ablation matrix --------------------------------------------------------

ROW_SCENARIOS = {row: f"row_{row}" for row in MATRIX_ROWS}
COLUMNS = ("vulnerable", "hardened") + tuple(f"ablate:{row}" for row in MATRIX_ROWS)


def column_profile(column: str) -> tuple[str, list[str]]:
    if column in ("vulnerable", "hardened"):
        return column, []
    return "vulnerable", [column.split(":", 1)[1]]


@dataclass
class OutcomeMatrix:
    seed: int
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: dict[str, dict[str, str]]  # row -> column -> outcome
    expected: dict[str, dict[str, str]]

    def complete(self) -> bool:
        return all(self.cells.get(r, {}).get(c) for r in self.rows for c in self.columns)

    def problems(self) -> list[str]:
        """Soundness violations; empty means the matrix is sound."""
        out = []
        for r in self.rows:
            if self.cells[r]["vulnerable"] != SUCCEEDS:
                out.append(f"{r}: exploit blocked under the vulnerable preset")
            if self.cells[r]["hardened"] == SUCCEEDS:
                out.append(f"{r}: exploit succeeds under the hardened preset")
            for c in self.columns:
                if self.cells[r][c] != self.expected[r][c]:
                    out.append(f"{r}/{c}: observed {self.cells[r][c]}, expected {self.expected[r][c]}")
        for c in self.columns[2:]:
            flipped = [r for r in self.rows if (self.cells[r][c] == SUCCEEDS) != (self.cells[r]["vulnerable"] == SUCCEEDS)]
            own = c.split(":", 1)[1]
            if flipped != [own]:
                out.append(f"{c}: flipped rows {flipped}, expected [{own}]")
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rows": list(self.rows),
            "columns": list(self.columns),
            "cells": {r: dict(self.cells[r]) for r in self.rows},
            "expected": {r: dict(self.expected[r]) for r in self.rows},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OutcomeMatrix":
        return cls(
            data["seed"], tuple(data["rows"]), tuple(data["columns"]),
            {r: dict(v) for r, v in data["cells"].items()},
            {r: dict(v) for r, v in data["expected"].items()},
        )


def ablation_matrix(seed: int = 1, transport: str = "inproc") -> OutcomeMatrix:
    scenarios = load_scenarios()
    cells: dict[str, dict[str, str]] = {}
    expected: dict[str, dict[str, str]] = {}
    for row in MATRIX_ROWS:
        cells[row], expected[row] = {}, {}
        for col in COLUMNS:
            preset, abl = column_profile(col)
            rep = run_scenario(ROW_SCENARIOS[row], preset, abl, seed=seed, transport=transport, scenarios=scenarios)
            cells[row][col] = rep.outcome
            expected[row][col] = rep.expected
    return OutcomeMatrix(seed, MATRIX_ROWS, COLUMNS, cells, expected)


# -- impostor encounters ----------------------------------------------------


@dataclass(frozen=True)
class EncounterStats:
    behavior: str
    encounters: int
    touched: int
    harvested: int
    verdicts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "behavior": self.behavior,
            "encounters": self.encounters,
            "touched": self.touched,
            "harvested": self.harvested,
            "verdicts": dict(sorted(self.verdicts.items())),
        }


def impostor_encounters(n: int, behavior: str, *, seed: int = 1) -> EncounterStats:
    """``n`` victims each meet a randomly built impostor droplock."""
    rng = random.Random(seed)
    manufacturer = Manufacturer(random.Random(rng.getrandbits(64)))
    ca_key = manufacturer.attestation_ca.verification_key
    digests = manufacturer.published_digests()
    genuine = manufacturer.provision_lock(build_profile("hardened"), BroadcastChannel())
    recorded = genuine.attestation_response(rng.randbytes(16))
    touched = harvested = 0
    verdicts: dict[str, int] = {}
    for i in range(n):
        air = BroadcastChannel()
        kind = rng.choice(IMPOSTOR_KINDS)
        impostor = build_impostor(kind, broadcast=air, rng=rng, recorded_attestation=recorded)
        transport = open_transport(impostor, "inproc")
        try:
            out = victim_touch(
                impostor, LockClient(transport), f"victim-{seed}-{i}", behavior,
                ca_key=ca_key, published_digests=digests, rng=rng,
            )
        finally:
            transport.close()
        if out.verdict is not None:
            verdicts[out.verdict.value] = verdicts.get(out.verdict.value, 0) + 1
        touched += out.touched
        harvested += bool(Harvester(air).listen())
    return EncounterStats(behavior, n, touched, harvested, verdicts)


# -- reports ----------------------------------------------------------------


def control_verdicts(matrix: OutcomeMatrix) -> dict[str, str]:
    out = {}
    for c in threatmodel.CONTROLS:
        if c.matrix_row is None:
            out[c.id] = "narrative: modeled as scan_first victim behavior"
            continue
        row = matrix.cells[c.matrix_row]
        blocks = row["hardened"] != SUCCEEDS and row[f"ablate:{c.matrix_row}"] != SUCCEEDS
        out[c.id] = f"blocks ({row['hardened']})" if blocks else "does not block"
    return out


def build_report(
    *,
    seed: int,
    matrix: Optional[OutcomeMatrix] = None,
    scenarios: Iterable[ScenarioReport] = (),
    encounters: Iterable[EncounterStats] = (),
) -> dict:
    scenarios = list(scenarios)
    report: dict[str, Any] = {
        "schema": SCHEMA,
        "seed": seed,
        "threat_model": threatmodel.as_dict(),
        "scenarios": [s.to_dict() for s in scenarios],
        "encounters": [e.to_dict() for e in encounters],
        "tamper_flags": {f"{s.scenario}[{s.preset}{''.join('+' + a for a in s.ablations)}]": s.tamper_flag for s in scenarios},
    }
    if matrix is not None:
        report["matrix"] = matrix.to_dict()
        report["matrix_problems"] = matrix.problems()
        report["control_verdicts"] = control_verdicts(matrix)
    return report


def report_passed(report: dict) -> bool:
    return all(s["passed"] for s in report["scenarios"]) and not report.get("matrix_problems")


def emit_report(report: dict) -> tuple[str, str]:
    """Return (text, machine-readable JSON)."""
    machine = json.dumps(report, sort_keys=True, indent=2) + "\n"
    return render_text(report), machine


def render_text(report: dict) -> str:
    lines = [f"locklab report (seed {report['seed']})", ""]
    tm = report["threat_model"]
    lines.append(f"Goal: {tm['goal']} biometric data retrieval")
    if "matrix" in report:
        m = report["matrix"]
        width = max(len(c) for c in m["columns"])
        lines.append("")
        lines.append("Exploit vs control matrix (ok = exploit succeeds, else where it was stopped)")
        for row in m["rows"]:
            lines.append(f"  row {row}")
            for col in m["columns"]:
                cell = m["cells"][row][col]
                mark = "ok" if cell == "SUCCEEDS" else cell
                flag = "" if cell == m["expected"][row][col] else "   <-- UNEXPECTED"
                lines.append(f"    {col:<{width}}  {mark}{flag}")
        problems = report.get("matrix_problems", [])
        lines.append(f"  soundness: {'sound' if not problems else '; '.join(problems)}")
        lines.append("")
        lines.append("Controls")
        for c in tm["controls"]:
            lines.append(f"  {c['id']} {c['name']}: {report['control_verdicts'][c['id']]}")
    lines.append("")
    lines.append("Assets: " + ", ".join(f"{a['id']} {a['name']}" for a in tm["assets"]))
    for s in report["scenarios"]:
        lines.append("")
        lines.append(render_scenario_text(s))
    for e in report["encounters"]:
        lines.append("")
        lines.append(
            f"Impostor encounters ({e['behavior']}): {e['encounters']} met, {e['touched']} touched, "
            f"{e['harvested']} harvested, verdicts {e['verdicts']}"
        )
    return "\n".join(lines) + "\n"


def render_scenario_text(s: dict) -> str:
    prof = s["profile"]
    abl = "".join(f" --ablate {a}" for a in prof["ablations"])
    lines = [f"scenario {s['scenario']} --profile {prof['preset']}{abl} --seed {s['seed']} ({s['transport']})"]
    for st in s["steps"]:
        if st["status"] == "ok":
            lines.append(f"  [ok]   {st['op']}: {st['detail']}")
        elif st["status"] == "skipped":
            lines.append(f"  [--]   {st['op']}")
        else:
            lines.append(f"  [{st['status'][:4]}] {st['op']}: {st['phase']} {st['error']} {st['detail']}".rstrip())
    lines.append(f"  outcome  {s['outcome']}")
    lines.append(f"  expected {s['expected']}  -> {'PASS' if s['passed'] else 'FAIL'}")
    lines.append(
        f"  tamper flag {s['tamper_flag']}, broadcast {s['broadcast']['records']} records, "
        f"harvested {s['harvested']}, registry entries {s['registry_entries']}"
    )
    return "\n".join(lines)
