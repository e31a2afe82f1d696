"""Command line entry point: ``locklab``."""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import click

from locklab import harness
from locklab.attacker import IMPOSTOR_KINDS, build_impostor, droplock_image
from locklab.cloud import Manufacturer
from locklab.errors import LockLabError
from locklab.firmware import Behavior, FirmwarePackage, InstalledFirmware, PackageFormat, build_package, verify_package
from locklab.link import LockClient, open_transport
from locklab.lock import BroadcastChannel
from locklab.profile import MATRIX_ROWS, build_profile

FORMATS = click.Choice(["text", "machine"])


def _emit(text: str, machine: str, fmt: str) -> None:
    click.echo(machine if fmt == "machine" else text, nl=False)


@click.group()
@click.version_option(package_name="locklab")
def main() -> None:
    """Smart-padlock attack and defense testbed."""


@main.command("list")
def list_scenarios() -> None:
    """List the available scenarios."""
    for name, sc in harness.load_scenarios().items():
        click.echo(f"{name:18} {sc.description}")


@main.command()
@click.argument("name")
@click.option("--profile", "preset", type=click.Choice(["vulnerable", "hardened"]), default="vulnerable")
@click.option("--ablate", multiple=True, help="Matrix row (A, B, F, G, H, C01..C06), 'session_auth', or a profile field.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--transport", type=click.Choice(["inproc", "loopback"]), default="inproc")
@click.option("--format", "fmt", type=FORMATS, default="text")
@click.option("--scenario-dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
def scenario(name, preset, ablate, seed, transport, fmt, scenario_dir) -> None:
    """Run one scenario. Exit 0 iff the outcome matches its expectation."""
    try:
        scenarios = harness.load_scenarios(scenario_dir)
        rep = harness.run_scenario(name, preset, ablate, seed=seed, transport=transport, scenarios=scenarios)
    except LockLabError as exc:
        raise click.ClickException(f"{exc.code.name}: {exc.detail}") from None
    except KeyError as exc:
        raise click.BadParameter(str(exc.args[0]), param_hint="--ablate") from None
    report = harness.build_report(seed=seed, scenarios=[rep])
    text = harness.render_scenario_text(report["scenarios"][0]) + "\n"
    _emit(text, harness.emit_report(report)[1], fmt)
    sys.exit(0 if rep.passed else 1)


@main.command()
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--transport", type=click.Choice(["inproc", "loopback"]), default="inproc")
@click.option("--format", "fmt", type=FORMATS, default="text")
def matrix(seed, transport, fmt) -> None:
    """Run every row scenario under every column and check soundness."""
    m = harness.ablation_matrix(seed, transport)
    text, machine = harness.emit_report(harness.build_report(seed=seed, matrix=m))
    _emit(text, machine, fmt)
    sys.exit(0 if not m.problems() else 1)


@main.group()
def dfu() -> None:
    """Build and check firmware packages."""


@dfu.command("pack")
@click.argument("image", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=False)
@click.option("--out", "-o", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--version", "version", default="6.6.6", show_default=True)
@click.option("--behavior", type=click.Choice([b.value for b in Behavior]), default="droplock")
@click.option("--integrity", type=click.Choice(["crc16", "signature"]), default="crc16")
@click.option("--package-format", type=click.Choice([f.value for f in PackageFormat]), default="modern")
@click.option("--seed", type=int, default=1, help="Seeds the manufacturer whose key signs.")
def dfu_pack(image, out, version, behavior, integrity, package_format, seed) -> None:
    """Pack IMAGE (default: the bundled droplock image)."""
    data = image.read_bytes() if image else droplock_image()
    signer = Manufacturer(random.Random(seed)).firmware_signer if integrity == "signature" else None
    pkg = build_package(data, version=version, behavior=behavior, signer=signer, fmt=package_format)
    out.write_bytes(pkg.to_bytes())
    click.echo(f"{out}: {pkg.version} {pkg.behavior.value} crc16={pkg.crc16:04x} signed={pkg.signature is not None}")


@dfu.command("verify")
@click.argument("package", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--integrity", type=click.Choice(["crc16", "signature"]), default="signature")
@click.option("--allow-legacy/--no-legacy", default=False)
@click.option("--seed", type=int, default=1, help="Seeds the manufacturer whose key verifies.")
@click.option("--expect", type=click.Choice(["accept", "reject"]), default="accept")
def dfu_verify(package, integrity, allow_legacy, seed, expect) -> None:
    """Check PACKAGE the way a lock with this policy would."""
    key = Manufacturer(random.Random(seed)).firmware_signer.verification_key
    try:
        pkg = FirmwarePackage.from_bytes(package.read_bytes())
        verify_package(pkg, integrity=integrity, legacy_allowed=allow_legacy, verification_key=key)
        verdict = "accept"
        click.echo(f"accepted: {pkg.version} {pkg.behavior.value}")
    except LockLabError as exc:
        verdict = "reject"
        click.echo(f"rejected: {exc.code.name} {exc.detail}")
    sys.exit(0 if verdict == expect else 1)


DEVICES = ("genuine", "converted") + tuple(f"impostor-{k}" for k in IMPOSTOR_KINDS)


@main.command()
@click.option("--device", type=click.Choice(DEVICES), multiple=True, help="Default: all kinds.")
@click.option("--profile", "preset", type=click.Choice(["vulnerable", "hardened"]), default="hardened")
@click.option("--seed", type=int, default=1, show_default=True)
def scan(device, preset, seed) -> None:
    """Scan devices with the attestation checker and print verdicts."""
    rng = random.Random(seed)
    maker = Manufacturer(random.Random(rng.getrandbits(64)))
    profile = build_profile(preset)
    genuine = maker.provision_lock(profile, BroadcastChannel())
    recorded = genuine.attestation_response(rng.randbytes(16)) if genuine.attestation else b""
    for kind in device or DEVICES:
        if kind in ("genuine", "converted"):
            lock = maker.provision_lock(profile, BroadcastChannel())
            if kind == "converted":
                lock.install_firmware(InstalledFirmware("6.6.6", Behavior.DROPLOCK, droplock_image()))
        else:
            lock = build_impostor(kind.split("-", 1)[1], broadcast=BroadcastChannel(), rng=rng,
                                  recorded_attestation=recorded)
        transport = open_transport(lock)
        try:
            verdict = harness.scan_device(
                LockClient(transport), maker.attestation_ca.verification_key, maker.published_digests(), rng
            )
        finally:
            transport.close()
        click.echo(f"{kind:22} {verdict.value}")


@main.command()
@click.option("--format", "fmt", type=FORMATS, default="text")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--encounters", type=int, default=100, show_default=True)
@click.option("--out", "-o", type=click.Path(dir_okay=False, path_type=Path))
def report(fmt, seed, encounters, out) -> None:
    """Full run: matrix, headline scenarios, impostor encounters."""
    runs = [
        harness.run_scenario("droplock_e2e", "vulnerable", seed=seed),
        harness.run_scenario("droplock_e2e", "hardened", seed=seed),
        harness.run_scenario("droplock_e2e", "hardened", ["session_auth"], seed=seed),
        harness.run_scenario("droplock_e2e", "hardened", ["session_auth", "dfu_integrity"], seed=seed),
        harness.run_scenario("row_C01", "vulnerable", ["C01"], seed=seed),
    ]
    stats = [
        harness.impostor_encounters(encounters, "scan_first", seed=seed),
        harness.impostor_encounters(encounters, "touch_immediately", seed=seed),
    ]
    rep = harness.build_report(seed=seed, matrix=harness.ablation_matrix(seed), scenarios=runs, encounters=stats)
    text, machine = harness.emit_report(rep)
    if out:
        out.write_text(machine if fmt == "machine" else text)
    else:
        _emit(text, machine, fmt)
    sys.exit(0 if harness.report_passed(rep) else 1)


if __name__ == "__main__":
    main()
