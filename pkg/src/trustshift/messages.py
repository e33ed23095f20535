"""Protocol payload types and their deterministic binary codecs.

Every type encodes as a fixed-arity array in declared field order; an
absent RA endpoint is an explicit null, never an omitted element. All
values are immutable and validated at construction, so a constructed
value always satisfies its invariants.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

from . import codec
from .errors import InvariantViolation, MalformedEncoding

MAX_URI_BYTES = 255

# Signature algorithm identifier carried in envelope headers. A single
# suite is implemented; the header field exists so it can be swapped.
ALG_ED25519 = 1

TimeStamp = int


def _check_timestamp(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise InvariantViolation(f"{name} must be a non-negative integer")


class CertProfile(IntEnum):
    ROOT_CA = 0
    SUB_CA = 1
    FACTORY = 2
    OPERATIONAL = 3
    SERVER = 4


class EnvelopeProfile(IntEnum):
    CWT = 1
    UPDATE_LIST = 2


class MessageKind(Enum):
    URI = "uri"
    VERSION_INFO = "version_info"
    DEVICE_UPDATE_INFO = "device_update_info"
    UPDATE_INFO_LIST = "update_info_list"
    TRANSFER_MESSAGE = "transfer_message"
    CSR = "csr"
    CERTIFICATE = "certificate"
    SIGNED_ENVELOPE = "signed_envelope"


@dataclass(frozen=True)
class Uri:
    value: str

    def __post_init__(self):
        if not isinstance(self.value, str) or not self.value:
            raise InvariantViolation("URI must be a nonempty text string")
        if len(self.value.encode("utf-8")) > MAX_URI_BYTES:
            raise InvariantViolation(f"URI exceeds {MAX_URI_BYTES} UTF-8 bytes")

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class VersionInfo:
    manifest_sequence: int
    manifest_uri: Uri

    def __post_init__(self):
        _check_timestamp("manifestSequence", self.manifest_sequence)
        if not isinstance(self.manifest_uri, Uri):
            raise InvariantViolation("manifestUri must be a Uri")


@dataclass(frozen=True)
class CompactCertificate:
    """Simplified compact credential binding a name to a public key."""

    serial: int
    subject_name: bytes
    subject_public_key: bytes
    issuer_name: bytes
    not_before: TimeStamp
    not_after: TimeStamp
    profile: CertProfile
    signature: bytes

    def __post_init__(self):
        _check_timestamp("serial", self.serial)
        _check_timestamp("notBefore", self.not_before)
        _check_timestamp("notAfter", self.not_after)
        if self.not_before > self.not_after:
            raise InvariantViolation("certificate notBefore > notAfter")
        if not isinstance(self.profile, CertProfile):
            raise InvariantViolation("profile must be a CertProfile")

    @property
    def is_self_signed(self) -> bool:
        return self.issuer_name == self.subject_name

    def tbs_bytes(self) -> bytes:
        """To-be-signed body: the seven fields preceding the signature."""
        return (
            codec.encode_array_head(7)
            + codec.encode_uint(self.serial)
            + codec.encode_bytes(self.subject_name)
            + codec.encode_bytes(self.subject_public_key)
            + codec.encode_bytes(self.issuer_name)
            + codec.encode_uint(self.not_before)
            + codec.encode_uint(self.not_after)
            + codec.encode_uint(int(self.profile))
        )


@dataclass(frozen=True)
class DeviceUpdateInfo:
    factory_certificate: CompactCertificate
    update_time_not_before: TimeStamp
    update_time_not_after: TimeStamp
    version_info: VersionInfo

    def __post_init__(self):
        _check_timestamp("updateTimeNotBefore", self.update_time_not_before)
        _check_timestamp("updateTimeNotAfter", self.update_time_not_after)
        if self.update_time_not_before > self.update_time_not_after:
            raise InvariantViolation("updateTimeNotBefore > updateTimeNotAfter")


@dataclass(frozen=True)
class UpdateInfoList:
    entries: tuple[DeviceUpdateInfo, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        serials = [e.factory_certificate.serial for e in self.entries]
        if len(serials) != len(set(serials)):
            raise InvariantViolation("duplicate factory-certificate serial in list")


@dataclass(frozen=True)
class TransferMessage:
    """The six-claim payload driving the operator change on a device."""

    reset_time_not_before: TimeStamp
    reset_time_not_after: TimeStamp
    ra_uri: Uri | None
    update_uri: Uri
    contact_before_enroll: bool
    enroll_uri: Uri
    fallback_uri: Uri

    def __post_init__(self):
        _check_timestamp("resetTimeNotBefore", self.reset_time_not_before)
        _check_timestamp("resetTimeNotAfter", self.reset_time_not_after)
        if self.reset_time_not_before > self.reset_time_not_after:
            raise InvariantViolation("resetTimeNotBefore > resetTimeNotAfter")
        if self.ra_uri is not None and not isinstance(self.ra_uri, Uri):
            raise InvariantViolation("raURI must be a Uri or None")


@dataclass(frozen=True)
class CertificateSigningRequest:
    subject_name: bytes
    subject_public_key: bytes
    requested_profile: CertProfile
    proof_of_possession: bytes

    def __post_init__(self):
        if self.requested_profile not in (CertProfile.FACTORY, CertProfile.OPERATIONAL):
            raise InvariantViolation("requested profile must be factory or operational")

    def tbs_bytes(self) -> bytes:
        """Bytes covered by the proof-of-possession signature."""
        return (
            codec.encode_array_head(3)
            + codec.encode_bytes(self.subject_name)
            + codec.encode_bytes(self.subject_public_key)
            + codec.encode_uint(int(self.requested_profile))
        )


@dataclass(frozen=True)
class EnvelopeHeader:
    algorithm_id: int
    profile: EnvelopeProfile
    signer_key_id: bytes

    def __post_init__(self):
        _check_timestamp("algorithmId", self.algorithm_id)
        if not isinstance(self.profile, EnvelopeProfile):
            raise InvariantViolation("profile must be an EnvelopeProfile")
        if len(self.signer_key_id) != 8:
            raise InvariantViolation("signerKeyId must be 8 bytes")

    def encode(self) -> bytes:
        # Fixed ascending key order keeps the header encoding canonical.
        return (
            codec.encode_map_head(3)
            + codec.encode_uint(1) + codec.encode_uint(self.algorithm_id)
            + codec.encode_uint(3) + codec.encode_uint(int(self.profile))
            + codec.encode_uint(4) + codec.encode_bytes(self.signer_key_id)
        )


@dataclass(frozen=True)
class SignedEnvelope:
    """Detached-header signature container carrying CWTs and signed lists."""

    protected_header: EnvelopeHeader
    payload: bytes
    signature: bytes

    def signing_input(self) -> bytes:
        return self.protected_header.encode() + self.payload


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def _encode_uri(msg: Uri) -> bytes:
    return codec.encode_text(msg.value)


def _encode_version_info(msg: VersionInfo) -> bytes:
    return (
        codec.encode_array_head(2)
        + codec.encode_uint(msg.manifest_sequence)
        + _encode_uri(msg.manifest_uri)
    )


def _encode_certificate(msg: CompactCertificate) -> bytes:
    return (
        codec.encode_array_head(8)
        + codec.encode_uint(msg.serial)
        + codec.encode_bytes(msg.subject_name)
        + codec.encode_bytes(msg.subject_public_key)
        + codec.encode_bytes(msg.issuer_name)
        + codec.encode_uint(msg.not_before)
        + codec.encode_uint(msg.not_after)
        + codec.encode_uint(int(msg.profile))
        + codec.encode_bytes(msg.signature)
    )


def _encode_device_update_info(msg: DeviceUpdateInfo) -> bytes:
    return (
        codec.encode_array_head(4)
        + _encode_certificate(msg.factory_certificate)
        + codec.encode_uint(msg.update_time_not_before)
        + codec.encode_uint(msg.update_time_not_after)
        + _encode_version_info(msg.version_info)
    )


def _encode_update_info_list(msg: UpdateInfoList) -> bytes:
    out = codec.encode_array_head(len(msg.entries))
    for entry in msg.entries:
        out += _encode_device_update_info(entry)
    return out


def _encode_transfer_message(msg: TransferMessage) -> bytes:
    ra = codec.encode_null() if msg.ra_uri is None else _encode_uri(msg.ra_uri)
    return (
        codec.encode_array_head(6)
        + codec.encode_uint(msg.reset_time_not_before)
        + codec.encode_uint(msg.reset_time_not_after)
        + ra
        + codec.encode_array_head(2)
        + _encode_uri(msg.update_uri)
        + codec.encode_bool(msg.contact_before_enroll)
        + _encode_uri(msg.enroll_uri)
        + _encode_uri(msg.fallback_uri)
    )


def _encode_csr(msg: CertificateSigningRequest) -> bytes:
    return (
        codec.encode_array_head(4)
        + codec.encode_bytes(msg.subject_name)
        + codec.encode_bytes(msg.subject_public_key)
        + codec.encode_uint(int(msg.requested_profile))
        + codec.encode_bytes(msg.proof_of_possession)
    )


def _encode_signed_envelope(msg: SignedEnvelope) -> bytes:
    return (
        codec.encode_array_head(3)
        + codec.encode_bytes(msg.protected_header.encode())
        + codec.encode_bytes(msg.payload)
        + codec.encode_bytes(msg.signature)
    )


_ENCODERS = {
    Uri: _encode_uri,
    VersionInfo: _encode_version_info,
    CompactCertificate: _encode_certificate,
    DeviceUpdateInfo: _encode_device_update_info,
    UpdateInfoList: _encode_update_info_list,
    TransferMessage: _encode_transfer_message,
    CertificateSigningRequest: _encode_csr,
    SignedEnvelope: _encode_signed_envelope,
}


def encode(message) -> bytes:
    """Encode any protocol message; equal values yield identical bytes."""
    encoder = _ENCODERS.get(type(message))
    if encoder is None:
        raise InvariantViolation(f"not an encodable message: {type(message).__name__}")
    return encoder(message)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def _read_uri(dec: codec.Decoder) -> Uri:
    return Uri(dec.read_text())


def _read_version_info(dec: codec.Decoder) -> VersionInfo:
    dec.read_array_head(expected=2)
    seq = dec.read_uint()
    return VersionInfo(seq, _read_uri(dec))


def _read_certificate(dec: codec.Decoder) -> CompactCertificate:
    dec.read_array_head(expected=8)
    serial = dec.read_uint()
    subject = dec.read_bytes()
    subject_pub = dec.read_bytes()
    issuer = dec.read_bytes()
    not_before = dec.read_uint()
    not_after = dec.read_uint()
    profile_raw = dec.read_uint()
    signature = dec.read_bytes()
    try:
        profile = CertProfile(profile_raw)
    except ValueError as exc:
        raise MalformedEncoding(f"unknown certificate profile {profile_raw}") from exc
    return CompactCertificate(serial, subject, subject_pub, issuer,
                              not_before, not_after, profile, signature)


def _read_device_update_info(dec: codec.Decoder) -> DeviceUpdateInfo:
    dec.read_array_head(expected=4)
    cert = _read_certificate(dec)
    nb = dec.read_uint()
    na = dec.read_uint()
    vi = _read_version_info(dec)
    return DeviceUpdateInfo(cert, nb, na, vi)


def _read_update_info_list(dec: codec.Decoder) -> UpdateInfoList:
    count = dec.read_array_head()
    entries = tuple(_read_device_update_info(dec) for _ in range(count))
    return UpdateInfoList(entries)


def _read_transfer_message(dec: codec.Decoder) -> TransferMessage:
    dec.read_array_head(expected=6)
    nb = dec.read_uint()
    na = dec.read_uint()
    if dec.next_is_null():
        dec.read_null()
        ra = None
    else:
        ra = _read_uri(dec)
    dec.read_array_head(expected=2)
    update_uri = _read_uri(dec)
    flag = dec.read_bool()
    enroll_uri = _read_uri(dec)
    fallback_uri = _read_uri(dec)
    return TransferMessage(nb, na, ra, update_uri, flag, enroll_uri, fallback_uri)


def _read_csr(dec: codec.Decoder) -> CertificateSigningRequest:
    dec.read_array_head(expected=4)
    subject = dec.read_bytes()
    subject_pub = dec.read_bytes()
    profile_raw = dec.read_uint()
    pop = dec.read_bytes()
    try:
        profile = CertProfile(profile_raw)
    except ValueError as exc:
        raise MalformedEncoding(f"unknown CSR profile {profile_raw}") from exc
    return CertificateSigningRequest(subject, subject_pub, profile, pop)


def _read_envelope_header(data: bytes) -> EnvelopeHeader:
    dec = codec.Decoder(data)
    count = dec.read_map_head()
    if count != 3:
        raise MalformedEncoding(f"expected 3-entry header map, got {count}")
    fields = {}
    for _ in range(count):
        key = dec.read_uint()
        if key in fields:
            raise MalformedEncoding(f"duplicate header key {key}")
        if key == 4:
            fields[key] = dec.read_bytes()
        else:
            fields[key] = dec.read_uint()
    dec.finish()
    if set(fields) != {1, 3, 4}:
        raise MalformedEncoding(f"unexpected header keys {sorted(fields)}")
    try:
        profile = EnvelopeProfile(fields[3])
    except ValueError as exc:
        raise MalformedEncoding(f"unknown envelope profile {fields[3]}") from exc
    return EnvelopeHeader(fields[1], profile, fields[4])


def _read_signed_envelope(dec: codec.Decoder) -> SignedEnvelope:
    dec.read_array_head(expected=3)
    header_bytes = dec.read_bytes()
    payload = dec.read_bytes()
    signature = dec.read_bytes()
    header = _read_envelope_header(header_bytes)
    env = SignedEnvelope(header, payload, signature)
    # Canonical round-trip guard: a header that re-encodes differently would
    # change the signing input.
    if header.encode() != header_bytes:
        raise MalformedEncoding("non-canonical envelope header")
    return env


_DECODERS = {
    MessageKind.URI: _read_uri,
    MessageKind.VERSION_INFO: _read_version_info,
    MessageKind.CERTIFICATE: _read_certificate,
    MessageKind.DEVICE_UPDATE_INFO: _read_device_update_info,
    MessageKind.UPDATE_INFO_LIST: _read_update_info_list,
    MessageKind.TRANSFER_MESSAGE: _read_transfer_message,
    MessageKind.CSR: _read_csr,
    MessageKind.SIGNED_ENVELOPE: _read_signed_envelope,
}


def decode(kind: MessageKind, data: bytes):
    """Decode one message of the given kind; trailing bytes are rejected."""
    reader = _DECODERS.get(MessageKind(kind))
    if reader is None:
        raise MalformedEncoding(f"unknown message kind {kind!r}")
    dec = codec.Decoder(data)
    message = reader(dec)
    dec.finish()
    return message
