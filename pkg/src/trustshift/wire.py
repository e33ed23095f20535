"""Transport framing for the simulated network.

Every transmission is a tagged array. Handshake messages and session
records are framing only: session-record payloads and embedded
certificates/envelopes stay opaque byte strings here, decoded by the
receiving actor. The session id and sequence number of a record are
cleartext framing (as in DTLS), which is exactly what an on-path adversary
gets to see.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from . import codec
from .errors import MalformedEncoding

_REGISTRY: dict[int, type] = {}


def _register(cls):
    _REGISTRY[cls.TAG] = cls
    return cls


def encode_wire(msg) -> bytes:
    spec = msg.SPEC
    out = codec.encode_array_head(len(spec) + 1) + codec.encode_uint(msg.TAG)
    for name, kind in spec:
        value = getattr(msg, name)
        if kind == "uint":
            out += codec.encode_uint(value)
        elif kind == "bool":
            out += codec.encode_bool(value)
        elif kind == "bytes":
            out += codec.encode_bytes(value)
        elif kind == "text":
            out += codec.encode_text(value)
        elif kind == "bytes_list":
            out += codec.encode_array_head(len(value))
            for item in value:
                out += codec.encode_bytes(item)
        else:
            raise MalformedEncoding(f"unknown field kind {kind}")
    return out


def decode_wire(data: bytes):
    dec = codec.Decoder(data)
    count = dec.read_array_head()
    if count < 1:
        raise MalformedEncoding("empty wire frame")
    tag = dec.read_uint()
    cls = _REGISTRY.get(tag)
    if cls is None:
        raise MalformedEncoding(f"unknown wire tag {tag}")
    if count != len(cls.SPEC) + 1:
        raise MalformedEncoding(
            f"wire tag {tag} expects {len(cls.SPEC) + 1} elements, got {count}")
    values = []
    for _, kind in cls.SPEC:
        if kind == "uint":
            values.append(dec.read_uint())
        elif kind == "bool":
            values.append(dec.read_bool())
        elif kind == "bytes":
            values.append(dec.read_bytes())
        elif kind == "text":
            values.append(dec.read_text())
        elif kind == "bytes_list":
            n = dec.read_array_head()
            values.append(tuple(dec.read_bytes() for _ in range(n)))
    dec.finish()
    return cls(*values)


def _spec_from_annotations(cls):
    kinds = {bytes: "bytes", int: "uint", bool: "bool", str: "text"}
    spec = []
    for f in fields(cls):
        if f.type in ("bytes", bytes):
            spec.append((f.name, "bytes"))
        elif f.type in ("int", int):
            spec.append((f.name, "uint"))
        elif f.type in ("bool", bool):
            spec.append((f.name, "bool"))
        elif f.type in ("str", str):
            spec.append((f.name, "text"))
        else:
            spec.append((f.name, "bytes_list"))
    return tuple(spec)


def wire_message(tag):
    def wrap(cls):
        cls = dataclass(frozen=True)(cls)
        cls.TAG = tag
        cls.SPEC = _spec_from_annotations(cls)
        return _register(cls)
    return wrap


# --- handshake and records ---

@wire_message(0)
class Hello:
    ephemeral: bytes
    cert_bytes: bytes
    intermediates: tuple


@wire_message(1)
class Accept:
    echo_ephemeral: bytes
    ephemeral: bytes
    cert_bytes: bytes
    intermediates: tuple


@wire_message(2)
class Reject:
    echo_ephemeral: bytes
    reason: str


@wire_message(3)
class RecordFrame:
    session_id: bytes
    seq: int
    payload: bytes


# --- application payloads carried inside session records ---

@wire_message(10)
class EnrollReq:
    csr_bytes: bytes
    server_keygen: bool


@wire_message(11)
class EnrollRsp:
    ok: bool
    cert_bytes: bytes
    key_seed: bytes
    chain_certs: tuple
    root_certs: tuple
    reason: str


@wire_message(12)
class UpdateCheck:
    version_bytes: bytes


@wire_message(13)
class UpdateRsp:
    has_update: bool
    version_bytes: bytes


@wire_message(14)
class RaHello:
    device_id: bytes


@wire_message(15)
class RaChallenge:
    nonce: bytes


@wire_message(16)
class RaReport:
    device_id: bytes
    nonce: bytes
    measurement: bytes


@wire_message(17)
class RaVerdict:
    ok: bool


@wire_message(18)
class TransferDeliver:
    envelope_bytes: bytes


@wire_message(19)
class TransferAck:
    accepted: bool
    reason: str


@wire_message(20)
class ListDeliver:
    envelope_bytes: bytes


@wire_message(21)
class ListAck:
    ok: bool


@wire_message(22)
class TmDeliver:
    envelope_bytes: bytes


@wire_message(23)
class TmAck:
    ok: bool


@wire_message(24)
class RegisterReq:
    cert_list: tuple


@wire_message(25)
class RegisterRsp:
    ok: bool
    enroll_uri: str
    bad_serial: int
    reason: str


@wire_message(26)
class TrustPush:
    root_certs: tuple
    persist: bool


@wire_message(27)
class TrustAck:
    ok: bool


@wire_message(28)
class FinalUpdate:
    version_bytes: bytes


@wire_message(29)
class FinalAck:
    ok: bool


@wire_message(30)
class FallbackReq:
    device_id: bytes
    reason: str


@wire_message(31)
class FallbackRsp:
    ok: bool
    require_ra: bool


@wire_message(32)
class RevokeReq:
    subject_name: bytes


@wire_message(33)
class RevokeRsp:
    ok: bool
    count: int


def parse_record_frame(data: bytes) -> RecordFrame | None:
    """Framing metadata of a session record, or None if not a record.

    This is the whole adversary-visible surface of a record: session id,
    sequence number, and an opaque payload blob.
    """
    try:
        msg = decode_wire(data)
    except MalformedEncoding:
        return None
    return msg if isinstance(msg, RecordFrame) else None
