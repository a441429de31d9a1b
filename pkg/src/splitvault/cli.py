"""Command-line interface.

Subcommand map: vault init|encrypt|read|rm, token serve|revoke,
keysets provision|call-sim|status, keygen cards|entropy|audit.

Output is line-oriented and stable; --json switches every command to a
single JSON object on stdout. Errors go to stderr as one machine-parsable
line ("error: <Class>: <message>") with a distinct exit code per error
family (see README). Passwords come from an interactive prompt or the
SPLITVAULT_PASSWORD environment variable, never from argv.
"""

import json
import os
import signal
import sys
import tempfile
from typing import Optional

import click

from . import call_keysets, keygen_audit
from .config import ENV_PASSWORD, Config
from .document_vault import Vault
from .errors import InvalidParameters, SplitVaultError
from .randomness import default_random, draw_bytes, seeded_random
from .token_store import DeviceRegistry, TokenClient, TokenService, parse_address


class AppContext:
    def __init__(self, config: Config, json_out: bool):
        self.config = config
        self.json_out = json_out
        self.registry = config.build_registry()

    def emit(self, result: dict, lines) -> None:
        if self.json_out:
            click.echo(json.dumps(result, sort_keys=True))
        else:
            for line in lines:
                click.echo(line)

    def token_client(self, address: Optional[str], device: Optional[str]) -> TokenClient:
        return TokenClient(
            address or self.config.token_address,
            device_id=device or self.config.device_id,
        )


def _password(confirm: bool = False) -> str:
    env = os.environ.get(ENV_PASSWORD)
    if env is not None:
        return env
    return click.prompt("Vault password", hide_input=True, confirmation_prompt=confirm)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Config file (JSON); defaults to $SPLITVAULT_CONFIG.")
@click.option("--json", "json_out", is_flag=True, help="Emit one JSON object instead of text.")
@click.pass_context
def cli(ctx, config_path, json_out):
    """Split-key encryption vault: documents, token store, call keysets, keygen."""
    ctx.obj = AppContext(Config.load(config_path), json_out)


# -- vault ---------------------------------------------------------------------

@cli.group()
def vault():
    """Encrypted document store on this device."""


@vault.command("init")
@click.option("--store", required=True, type=click.Path(), help="Store file to create.")
@click.option("--kdf-iters", type=int, default=None, help="PBKDF2 iteration count.")
@click.pass_obj
def vault_init(app: AppContext, store, kdf_iters):
    """Create an empty vault store protected by a password."""
    password = _password(confirm=True)
    v = Vault.create(store, password, app.registry,
                     kdf_iterations=kdf_iters or app.config.kdf_iterations)
    v.lock()
    app.emit({"ok": True, "store": store}, [f"created vault store {store}"])


@vault.command("encrypt")
@click.option("--store", required=True, type=click.Path(exists=True))
@click.option("--id", "doc_id", required=True, help="Fresh document id.")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="Plaintext file to encrypt.")
@click.option("--token", "token_address", default=None, help="Token service host:port.")
@click.option("--device", default=None, help="Device id for enterprise HELLO.")
@click.pass_obj
def vault_encrypt(app: AppContext, store, doc_id, in_path, token_address, device):
    """Encrypt a file; key halves go to this store and the token."""
    with open(in_path, "rb") as fh:
        plaintext = fh.read()
    v = Vault.unlock(store, _password(), app.registry)
    try:
        with app.token_client(token_address, device) as token:
            record = v.encrypt_document(token, doc_id, plaintext)
    finally:
        v.lock()
    app.emit(
        {"ok": True, "doc_id": doc_id, "bytes": len(plaintext),
         "cipher": record.d_prime.cipher_id},
        [f"encrypted {len(plaintext)} bytes as {doc_id!r}"],
    )


@vault.command("read")
@click.option("--store", required=True, type=click.Path(exists=True))
@click.option("--id", "doc_id", required=True)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write plaintext here instead of stdout.")
@click.option("--token", "token_address", default=None)
@click.option("--device", default=None)
@click.pass_obj
def vault_read(app: AppContext, store, doc_id, out_path, token_address, device):
    """Decrypt a document (requires the token) and print or save it."""
    v = Vault.unlock(store, _password(), app.registry)
    try:
        with app.token_client(token_address, device) as token:
            handle = v.read_document(token, doc_id)
        data = handle.data
        if out_path:
            with open(out_path, "wb") as fh:
                fh.write(data)
        else:
            sys.stdout.buffer.write(data)
            sys.stdout.buffer.flush()
        v.destroy_plaintext(handle)
    finally:
        v.lock()
    if out_path:
        app.emit({"ok": True, "doc_id": doc_id, "bytes": len(data), "out": out_path},
                 [f"decrypted {len(data)} bytes to {out_path}"])


@vault.command("rm")
@click.option("--store", required=True, type=click.Path(exists=True))
@click.option("--id", "doc_id", required=True)
@click.option("--token", "token_address", default=None)
@click.option("--device", default=None)
@click.pass_obj
def vault_rm(app: AppContext, store, doc_id, token_address, device):
    """Remove a document from this store and the token."""
    v = Vault.unlock(store, _password(), app.registry)
    try:
        with app.token_client(token_address, device) as token:
            v.remove_document(token, doc_id)
    finally:
        v.lock()
    app.emit({"ok": True, "doc_id": doc_id}, [f"removed {doc_id!r}"])


# -- token ----------------------------------------------------------------------

@cli.group()
def token():
    """The off-device half of every key: wristband or enterprise server."""


@token.command("serve")
@click.option("--store", required=True, type=click.Path(), help="Blob store file.")
@click.option("--bind", default="127.0.0.1:0", help="host:port to listen on (port 0 = ephemeral).")
@click.option("--mode", type=click.Choice(["wristband", "enterprise"]), default="wristband")
@click.option("--devices", "devices_path", default=None, type=click.Path(),
              help="Device registry file (enterprise mode).")
@click.pass_obj
def token_serve(app: AppContext, store, bind, mode, devices_path):
    """Run the token service until interrupted."""
    host, port = parse_address(bind)
    service = TokenService(store, mode=mode, host=host, port=port, devices_path=devices_path)
    addr = service.address
    click.echo(f"listening on {addr[0]}:{addr[1]} mode={mode} store={store}")
    sys.stdout.flush()

    def _stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _stop)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
        click.echo("token service stopped", err=True)


@token.command("revoke")
@click.option("--device", "device_id", required=True)
@click.option("--devices", "devices_path", default=None, type=click.Path(),
              help="Device registry file.")
@click.option("--store", default=None, type=click.Path(),
              help="Blob store path; registry defaults to <store>.devices.json.")
@click.pass_obj
def token_revoke(app: AppContext, device_id, devices_path, store):
    """Disable all communication with a lost or stolen device (local admin action)."""
    if not devices_path:
        if not store:
            raise InvalidParameters("need --devices or --store to locate the registry")
        devices_path = store + ".devices.json"
    DeviceRegistry(devices_path).revoke(device_id)
    app.emit({"ok": True, "device": device_id, "status": "revoked"},
             [f"revoked device {device_id!r}"])


# -- keysets -----------------------------------------------------------------------

@cli.group()
def keysets():
    """Pre-distributed one-time call keysets for employee pairs."""


@keysets.command("provision")
@click.option("--employees", "nu", required=True, type=int)
@click.option("--sets", "m", required=True, type=int, help="Sets per employee pair.")
@click.option("--dir", "out_dir", required=True, type=click.Path(), help="Export directory.")
@click.option("--simple", is_flag=True, help="Single-cryptosystem variant: plain one-time keys.")
@click.option("--push", is_flag=True, help="Also PUT token parts to the token service.")
@click.option("--token", "token_address", default=None)
@click.option("--device", default=None)
@click.option("--seed", type=int, default=None, help="Deterministic provisioning (demos only).")
@click.pass_obj
def keysets_provision(app: AppContext, nu, m, out_dir, simple, push, token_address, device, seed):
    """Generate m keysets per pair and write per-employee export files."""
    source = seeded_random(seed) if seed is not None else default_random
    fn = call_keysets.provision_simple if simple else call_keysets.provision
    dist = fn(nu, m, source=source, registry=app.registry)
    paths = dist.write_exports(out_dir)
    pushed = 0
    if push and not simple:
        seen = set()
        with app.token_client(token_address, device) as client:
            for e in range(nu):
                for key_id, blob in dist.token_records(e):
                    if key_id not in seen:
                        client.put(key_id, blob, overwrite=True)
                        seen.add(key_id)
                        pushed += 1
    app.emit(
        {"ok": True, "entries": dist.count, "employees": nu, "sets_per_pair": m,
         "mode": dist.mode, "dir": out_dir, "pushed": pushed},
        [f"provisioned {dist.count} keysets ({dist.mode}) for {nu} employees into {out_dir}"
         + (f", pushed {pushed} token records" if push else "")],
    )


@keysets.command("status")
@click.option("--phone", "phone_path", required=True, type=click.Path(exists=True))
@click.pass_obj
def keysets_status(app: AppContext, phone_path):
    """Show fresh/consumed counts per pair for a phone-side store."""
    store = call_keysets.load_phone_store(phone_path, registry=app.registry)
    rows = []
    for pair in store.pairs():
        total = len(store.indices(pair))
        fresh = len(store.fresh_indices(pair))
        rows.append({"pair": list(pair), "total": total, "fresh": fresh,
                     "consumed": total - fresh})
    app.emit(
        {"ok": True, "owner": store.owner, "mode": store.mode, "pairs": rows,
         "pending_deletes": len(store.pending_deletes)},
        [f"owner {store.owner} mode {store.mode}"]
        + [f"pair {r['pair'][0]}-{r['pair'][1]}: {r['fresh']}/{r['total']} fresh" for r in rows],
    )


@keysets.command("call-sim")
@click.option("--dir", "export_dir", required=True, type=click.Path(exists=True),
              help="Directory written by `keysets provision`.")
@click.option("--a", "emp_a", required=True, type=int)
@click.option("--b", "emp_b", required=True, type=int)
@click.option("--index", type=int, default=None, help="Keyset index (default: next fresh).")
@click.option("--bytes", "nbytes", type=int, default=65536, help="Traffic per direction.")
@click.option("--token", "token_address", default=None,
              help="Use a running token service; default spins one up in process.")
@click.pass_obj
def keysets_call_sim(app: AppContext, export_dir, emp_a, emp_b, index, nbytes, token_address):
    """Loopback two-endpoint call: open, stream both ways, verify, close."""
    store_a = call_keysets.load_phone_store(
        os.path.join(export_dir, f"phone_{emp_a}.tlv"), registry=app.registry)
    store_b = call_keysets.load_phone_store(
        os.path.join(export_dir, f"phone_{emp_b}.tlv"), registry=app.registry)
    payload_a = draw_bytes(default_random, nbytes)
    payload_b = draw_bytes(default_random, nbytes)

    ephemeral_service = None
    token_a = token_b = None
    try:
        if store_a.mode == call_keysets.MODE_SPLIT:
            if token_address is None:
                tmp = tempfile.mkdtemp(prefix="splitvault-callsim-")
                ephemeral_service = TokenService(os.path.join(tmp, "token.blob")).start()
                token_address = "%s:%d" % ephemeral_service.address
                client = TokenClient(token_address)
                for path in (os.path.join(export_dir, f"token_{emp_a}.tlv"),
                             os.path.join(export_dir, f"token_{emp_b}.tlv")):
                    call_keysets.push_token_export(client, call_keysets.load_token_export(path))
                client.close()
            token_a = TokenClient(token_address, device_id=app.config.device_id)
            token_b = TokenClient(token_address, device_id=app.config.device_id)
        report = call_keysets.run_loopback_call(
            store_a, store_b, token_a, token_b,
            index=index, payload_a=payload_a, payload_b=payload_b)
    finally:
        for c in (token_a, token_b):
            if c is not None:
                c.close()
        if ephemeral_service is not None:
            ephemeral_service.stop()

    ok = report["keys_match"] and report["roundtrip_ok"]
    app.emit(
        {"ok": ok, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in report.items()}},
        [f"pair {report['pair'][0]}-{report['pair'][1]} index {report['index']}: "
         f"keys_match={report['keys_match']} roundtrip_ok={report['roundtrip_ok']} "
         f"({nbytes} bytes each way)"],
    )
    if not ok:
        raise SplitVaultError("call simulation failed")


# -- keygen ------------------------------------------------------------------------

@cli.group()
def keygen():
    """Key generation from card transcripts, entropy reports, generator audits."""


@keygen.command("cards")
@click.option("--transcript", required=True, type=click.Path(exists=True),
              help="One pass per line, characters r/b.")
@click.option("--bits", type=int, default=None, help="Requested key length in bits.")
@click.pass_obj
def keygen_cards(app: AppContext, transcript, bits):
    """Transcribe recorded card passes into a key."""
    with open(transcript, "r", encoding="utf-8") as fh:
        passes = keygen_audit.parse_transcript(fh.read())
    if not passes:
        raise InvalidParameters("transcript contains no passes")
    total_bits = sum(len(p.colors) for p in passes)
    combined = keygen_audit.generate_key(
        keygen_audit.METHOD_CARD_TRANSCRIPT, bits or total_bits, passes)
    key_hex = combined.material.bytes.hex()
    app.emit(
        {"ok": True, "passes": len(passes), "bits": combined.bit_length,
         "pad_bits": combined.pad_bits, "key_hex": key_hex},
        [f"{len(passes)} passes, {combined.bit_length} bits "
         f"({combined.pad_bits} pad bits)", f"key: {key_hex}"],
    )


@keygen.command("entropy")
@click.option("--n", "n", required=True, type=int, help="Half the modeled draw count (2n cards).")
@click.option("--passes", type=int, default=1)
@click.option("--discarded", type=int, default=None,
              help="Cards thrown out per pass; default inferred from a 52-card deck.")
@click.pass_obj
def keygen_entropy(app: AppContext, n, passes, discarded):
    """Exact and asymptotic bits for the card-deck method."""
    deck_size = 2 * n
    if discarded is None:
        discarded = 52 - deck_size if 0 <= 52 - deck_size <= 2 else 0
    report = keygen_audit.entropy_estimate(deck_size, discarded, passes)
    lines = [
        f"deck: {deck_size} cards drawn, {discarded} discarded, {passes} pass(es)",
        f"exact per pass: {report.exact_log2:.4f} bits",
        f"asymptotic per pass: {report.asymptotic_log2:.4f} bits",
        f"combined exact: {report.combined_log2:.4f} bits",
        f"combined asymptotic: {report.combined_asymptotic_log2:.4f} bits",
    ]
    if report.composition_log2 is not None:
        lines.append(f"reachable-composition refinement per pass: {report.composition_log2:.4f} bits")
    app.emit(
        {"ok": True, "deck_size": deck_size, "discarded": discarded, "passes": passes,
         "exact_log2": report.exact_log2, "asymptotic_log2": report.asymptotic_log2,
         "combined_log2": report.combined_log2,
         "combined_asymptotic_log2": report.combined_asymptotic_log2,
         "composition_log2": report.composition_log2},
        lines,
    )


@keygen.command("audit")
@click.option("--claimed-bits", required=True, type=float, help="Advertised log2 keyspace.")
@click.option("--samples", required=True, type=int)
@click.option("--key-bytes", type=int, default=16, help="Key size for the built-in CSPRNG source.")
@click.option("--keys-file", type=click.Path(exists=True), default=None,
              help="Audit externally generated keys (hex, one per line).")
@click.pass_obj
def keygen_audit_cmd(app: AppContext, claimed_bits, samples, key_bytes, keys_file):
    """Birthday-collision audit of a key generator against its claimed keyspace."""
    if keys_file:
        with open(keys_file, "r", encoding="utf-8") as fh:
            keys = [bytes.fromhex(line.strip()) for line in fh if line.strip()]
        if len(keys) < samples:
            raise InvalidParameters(f"keys file has {len(keys)} keys, {samples} requested")
        it = iter(keys[:samples])
        generator = lambda: next(it)
    else:
        generator = lambda: draw_bytes(default_random, key_bytes)
    report = keygen_audit.collision_audit(
        generator, claimed_bits, samples, threshold=app.config.audit_p_threshold)
    app.emit(
        {"ok": True, "verdict": report.verdict.value, "samples": report.samples,
         "claimed_log2_space": report.claimed_log2_space,
         "observed_pairs": report.observed_pairs,
         "duplicate_values": report.duplicate_values,
         "expected_pairs_claimed": report.expected_pairs_claimed,
         "p_any_collision_claimed": report.p_any_collision_claimed,
         "p_value": report.p_value, "fitted_log2_space": report.fitted_log2_space},
        report.lines(),
    )


def main(argv=None) -> int:
    """Entry point with stable exit codes: 0 ok, 2 usage, else per error family."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 2
    except SplitVaultError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return type(exc).EXIT_CODE
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
