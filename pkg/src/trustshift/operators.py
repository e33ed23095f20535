"""Service-provider actors: list building, transfer preparation and relay,
update servers, the attestation verifier stub, and CA frontends.

Pure operator operations are plain functions over OperatorState; the actor
classes wrap them for the simulated network, and the two orchestrator
generators drive the operator-change flow end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, peers, pki, wire
from .errors import (
    BadSp2Signature,
    InvariantViolation,
    MalformedEncoding,
    NoExpectedMeasurement,
    RegistrationFailed,
    UnknownDevice,
    UnverifiableFactoryCert,
)
from .messages import (
    CertProfile,
    DeviceUpdateInfo,
    EnvelopeProfile,
    MessageKind,
    SignedEnvelope,
    TimeStamp,
    TransferMessage,
    UpdateInfoList,
    Uri,
    VersionInfo,
    decode,
    encode,
)
from .simnet import Sleep, Transmit


@dataclass
class ManagedDevice:
    factory_cert: object
    version: VersionInfo
    window: tuple[TimeStamp, TimeStamp]


@dataclass
class TransferOptions:
    use_ra: bool = False
    ra_uri: Uri | None = None
    contact_before_enroll: bool = False

    def __post_init__(self):
        if self.use_ra and self.ra_uri is None:
            raise InvariantViolation("RA requested without an RA endpoint")


@dataclass
class OperatorState:
    name: str
    signing_key: crypto.KeyPair
    update_server_uri: Uri
    current_version: VersionInfo
    peer_signer_keys: dict[str, bytes] = field(default_factory=dict)
    managed_devices: dict[bytes, ManagedDevice] = field(default_factory=dict)
    ra_expected: dict[bytes, bytes] = field(default_factory=dict)
    # runtime bookkeeping filled by the network actors
    received_list: UpdateInfoList | None = None
    received_tm: SignedEnvelope | None = None
    device_sessions: dict[bytes, bytes] = field(default_factory=dict)
    acks: dict[bytes, dict[str, bool]] = field(default_factory=dict)
    fallback_contacts: dict[bytes, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# pure operator operations
# ---------------------------------------------------------------------------

def sp1_build_update_info_list(sp1: OperatorState, device_ids,
                               windows: dict | None = None,
                               versions: dict | None = None) -> SignedEnvelope:
    """Signed list of per-device transfer data shared with the new operator."""
    entries = []
    for device_id in device_ids:
        managed = sp1.managed_devices.get(device_id)
        if managed is None:
            raise UnknownDevice(f"device {device_id!r} not managed by {sp1.name}")
        window = (windows or {}).get(device_id, managed.window)
        version = (versions or {}).get(device_id, managed.version)
        entries.append(DeviceUpdateInfo(managed.factory_cert, window[0],
                                        window[1], version))
    payload = encode(UpdateInfoList(tuple(entries)))
    return crypto.sign_envelope(sp1.signing_key, EnvelopeProfile.UPDATE_LIST,
                                payload)


def build_transfer_message(sp2: OperatorState, info_list: UpdateInfoList,
                           enroll_uri: Uri,
                           options: TransferOptions) -> TransferMessage:
    """The six-claim transfer payload: window hull over the per-device
    windows, endpoints per the SP2 configuration."""
    if not info_list.entries:
        raise InvariantViolation("cannot prepare a transfer for zero devices")
    not_before = min(e.update_time_not_before for e in info_list.entries)
    not_after = max(e.update_time_not_after for e in info_list.entries)
    return TransferMessage(
        reset_time_not_before=not_before,
        reset_time_not_after=not_after,
        ra_uri=options.ra_uri if options.use_ra else None,
        update_uri=sp2.update_server_uri,
        contact_before_enroll=options.contact_before_enroll,
        enroll_uri=enroll_uri,
        # SP1 rewrites this on relay; until then it points at SP2's server.
        fallback_uri=sp2.update_server_uri,
    )


def sp2_prepare_transfer(sp2: OperatorState, verified_list: UpdateInfoList,
                         ca2: pki.CaState, options: TransferOptions,
                         now: TimeStamp) -> SignedEnvelope:
    """Register the factory certificates with CA2 and sign the transfer CWT."""
    try:
        enroll_uri = pki.register_factory_certs(ca2, verified_list, now)
    except UnverifiableFactoryCert as err:
        raise RegistrationFailed(str(err)) from err
    message = build_transfer_message(sp2, verified_list, enroll_uri, options)
    return crypto.sign_envelope(sp2.signing_key, EnvelopeProfile.CWT,
                                encode(message))


def sp1_relay_transfer(sp1: OperatorState, sp2_envelope: SignedEnvelope,
                       device_id: bytes,
                       narrow_window: bool = False) -> SignedEnvelope:
    """Per-device CWT: claims copied verbatim except the fallback URI, which
    becomes the SP1 update server; optionally narrowed to the device's own
    transfer window."""
    sp2_key = sp1.peer_signer_keys.get("sp2")
    if sp2_key is None or not crypto.verify_envelope(sp2_key, sp2_envelope) \
            or sp2_envelope.protected_header.profile is not EnvelopeProfile.CWT:
        raise BadSp2Signature("transfer CWT failed verification under the "
                              "agreed SP2 key")
    managed = sp1.managed_devices.get(device_id)
    if managed is None:
        raise UnknownDevice(f"device {device_id!r} not managed by {sp1.name}")
    message = decode(MessageKind.TRANSFER_MESSAGE, sp2_envelope.payload)
    not_before, not_after = (message.reset_time_not_before,
                             message.reset_time_not_after)
    if narrow_window:
        not_before = max(not_before, managed.window[0])
        not_after = min(not_after, managed.window[1])
    rewritten = TransferMessage(
        reset_time_not_before=not_before,
        reset_time_not_after=not_after,
        ra_uri=message.ra_uri,
        update_uri=message.update_uri,
        contact_before_enroll=message.contact_before_enroll,
        enroll_uri=message.enroll_uri,
        fallback_uri=sp1.update_server_uri,
    )
    return crypto.sign_envelope(sp1.signing_key, EnvelopeProfile.CWT,
                                encode(rewritten))


def update_server_serve(operator: OperatorState,
                        device_version: VersionInfo) -> VersionInfo | None:
    """Firmware manifest bookkeeping: newer server version or no-op."""
    if operator.current_version.manifest_sequence \
            > device_version.manifest_sequence:
        return operator.current_version
    return None


# ---------------------------------------------------------------------------
# remote attestation stub
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaExchange:
    nonce: bytes
    device_id: bytes
    reported_measurement: bytes
    verdict: bool | None = None


@dataclass
class RaVerifierState:
    expected: dict[bytes, bytes] = field(default_factory=dict)
    outstanding: dict[bytes, bytes] = field(default_factory=dict)


def ra_challenge(verifier: RaVerifierState, device_id: bytes, rng) -> bytes:
    if device_id not in verifier.expected:
        raise NoExpectedMeasurement(f"no expected measurement for {device_id!r}")
    nonce = rng.randbytes(16)
    verifier.outstanding[device_id] = nonce
    return nonce


def ra_respond(firmware: VersionInfo, nonce: bytes) -> bytes:
    """What an untampered device reports for its firmware state."""
    return crypto.digest(crypto.digest(encode(firmware)) + nonce)


def ra_verify(verifier: RaVerifierState, exchange: RaExchange) -> bool:
    """True iff the nonce matches the issued challenge and the measurement
    matches the expectation; challenges are single use."""
    if exchange.device_id not in verifier.expected:
        raise NoExpectedMeasurement(
            f"no expected measurement for {exchange.device_id!r}")
    issued = verifier.outstanding.pop(exchange.device_id, None)
    if issued is None or issued != exchange.nonce:
        return False
    expected = verifier.expected[exchange.device_id]
    return exchange.reported_measurement == crypto.digest(expected
                                                          + exchange.nonce)


# ---------------------------------------------------------------------------
# network actors
# ---------------------------------------------------------------------------

def _snake(name: str) -> str:
    out = [name[0].lower()]
    for ch in name[1:]:
        if ch.isupper():
            out.extend(("_", ch.lower()))
        else:
            out.append(ch)
    return "".join(out)


class CaActor:
    """Enrollment, registration and revocation frontend over one CaState."""

    def __init__(self, sim, actor_id: str, ca: pki.CaState, *,
                 operational_lifetime: int = 1_000_000,
                 enroll_push_roots: tuple = (),
                 revocation_view=None):
        self.sim = sim
        self.actor_id = actor_id
        self.ca = ca
        self.operational_lifetime = operational_lifetime
        self.enroll_push_roots = tuple(enroll_push_roots)
        self.revocation_view = revocation_view or (lambda: set())
        self.peer = peers.ResponderPeer(
            sim, actor_id, ca.credential(), ca.truststore, self._handle_app,
            revocation_view=self.revocation_view,
            allowed_profiles=(CertProfile.FACTORY, CertProfile.SERVER))
        sim.register_responder(actor_id, self.peer.bind())

    def _enroll(self, now, entry, msg):
        if entry.peer_cert.profile is not CertProfile.FACTORY:
            return wire.EnrollRsp(False, b"", b"", (), (), "profile_not_allowed")
        validity = (now, now + self.operational_lifetime)
        view = set(self.revocation_view())
        try:
            if msg.server_keygen:
                cert, seed = pki.enroll_server_keygen(
                    self.ca, entry.peer_cert, validity,
                    factory_revocations=view)
            else:
                csr = decode(MessageKind.CSR, msg.csr_bytes)
                cert = pki.enroll(self.ca, entry.peer_cert, csr, validity,
                                  factory_revocations=view)
                seed = b""
        except Exception as err:  # typed protocol errors become reasons
            return wire.EnrollRsp(False, b"", b"", (), (), _snake(type(err).__name__))
        chain = tuple(encode(c) for c in self.ca.issuer_chain)
        roots = tuple(encode(c) for c in self.enroll_push_roots)
        return wire.EnrollRsp(True, encode(cert), seed, chain, roots, "")

    def _handle_app(self, now, src, entry, msg):
        if isinstance(msg, wire.EnrollReq):
            return [self._enroll(now, entry, msg)]
        if isinstance(msg, wire.RegisterReq):
            if entry.peer_cert.profile is not CertProfile.SERVER:
                return [wire.RegisterRsp(False, "", 0, "profile_not_allowed")]
            try:
                certs = [decode(MessageKind.CERTIFICATE, b)
                         for b in msg.cert_list]
                uri = pki.register_factory_certs(self.ca, certs, now)
            except UnverifiableFactoryCert as err:
                return [wire.RegisterRsp(False, "", err.serial, err.reason)]
            except (MalformedEncoding, InvariantViolation) as err:
                return [wire.RegisterRsp(False, "", 0, _snake(type(err).__name__))]
            return [wire.RegisterRsp(True, str(uri), 0, "")]
        if isinstance(msg, wire.RevokeReq):
            if entry.peer_cert.profile is not CertProfile.SERVER:
                return [wire.RevokeRsp(False, 0)]
            serials = [s for s in self.ca.issued_serials_for(msg.subject_name)
                       if self.ca.issued[s].profile is CertProfile.OPERATIONAL]
            for serial in serials:
                pki.revoke(self.ca, serial)
            self.sim.trace.add("revoked", now, actor=self.actor_id,
                               subject=msg.subject_name.decode(errors="replace"),
                               count=len(serials))
            return [wire.RevokeRsp(True, len(serials))]
        return []


class OperatorActor:
    """Update server plus operator-to-operator endpoint for SP1 or SP2."""

    def __init__(self, sim, actor_id: str, state: OperatorState,
                 credential: pki.Credential, truststore: pki.TrustStore, *,
                 revocation_view=None, fallback_require_ra: bool = False,
                 fallback_ra_state: RaVerifierState | None = None):
        self.sim = sim
        self.actor_id = actor_id
        self.state = state
        self.fallback_require_ra = fallback_require_ra
        self.fallback_ra_state = fallback_ra_state
        self.peer = peers.ResponderPeer(
            sim, actor_id, credential, truststore, self._handle_app,
            revocation_view=revocation_view or (lambda: set()))
        self.rng = sim.actor_rng(actor_id + "/ra")
        sim.register_responder(actor_id, self.peer.bind())

    def _ack(self, entry, kind: str, ok: bool) -> None:
        subject = entry.peer_cert.subject_name
        self.state.acks.setdefault(subject, {})[kind] = \
            self.state.acks.get(subject, {}).get(kind, False) or ok

    def _handle_app(self, now, src, entry, msg):
        state = self.state
        if isinstance(msg, wire.UpdateCheck):
            state.device_sessions[entry.peer_cert.subject_name] = \
                entry.endpoint.session_id
            try:
                version = decode(MessageKind.VERSION_INFO, msg.version_bytes)
            except (MalformedEncoding, InvariantViolation):
                return []
            delta = update_server_serve(state, version)
            if delta is None:
                return [wire.UpdateRsp(False, msg.version_bytes)]
            return [wire.UpdateRsp(True, encode(delta))]

        if isinstance(msg, wire.TransferAck):
            self._ack(entry, "transfer", msg.accepted)
            self.sim.trace.add("transfer_ack", now, actor=self.actor_id,
                               device=entry.peer_cert.subject_name.decode(
                                   errors="replace"),
                               accepted=str(msg.accepted), reason=msg.reason)
            return []
        if isinstance(msg, wire.TrustAck):
            self._ack(entry, "trust", msg.ok)
            return []
        if isinstance(msg, wire.FinalAck):
            self._ack(entry, "final", msg.ok)
            return []

        if isinstance(msg, wire.FallbackReq):
            state.fallback_contacts[msg.device_id] = msg.reason
            self.sim.trace.add("fallback_served", now, actor=self.actor_id,
                               device=msg.device_id.decode(errors="replace"),
                               reason=msg.reason)
            return [wire.FallbackRsp(True, self.fallback_require_ra)]

        if isinstance(msg, wire.RaHello) and self.fallback_ra_state is not None:
            try:
                nonce = ra_challenge(self.fallback_ra_state, msg.device_id,
                                     self.rng)
            except NoExpectedMeasurement:
                return [wire.RaVerdict(False)]
            return [wire.RaChallenge(nonce)]
        if isinstance(msg, wire.RaReport) and self.fallback_ra_state is not None:
            verdict = ra_verify(self.fallback_ra_state,
                                RaExchange(msg.nonce, msg.device_id,
                                           msg.measurement))
            return [wire.RaVerdict(verdict)]

        if isinstance(msg, wire.ListDeliver):
            if entry.peer_cert.profile is not CertProfile.SERVER:
                return [wire.ListAck(False)]
            ok = self._accept_list(now, msg.envelope_bytes)
            return [wire.ListAck(ok)]
        if isinstance(msg, wire.TmDeliver):
            if entry.peer_cert.profile is not CertProfile.SERVER:
                return [wire.TmAck(False)]
            ok = self._accept_tm(now, msg.envelope_bytes)
            return [wire.TmAck(ok)]
        return []

    def _accept_list(self, now, envelope_bytes: bytes) -> bool:
        key = self.state.peer_signer_keys.get("sp1")
        try:
            envelope = decode(MessageKind.SIGNED_ENVELOPE, envelope_bytes)
        except (MalformedEncoding, InvariantViolation):
            return False
        if key is None or not crypto.verify_envelope(key, envelope) \
                or envelope.protected_header.profile \
                is not EnvelopeProfile.UPDATE_LIST:
            self.sim.trace.add("list_rejected", now, actor=self.actor_id,
                               reason="bad_sp1_signature")
            return False
        try:
            self.state.received_list = decode(MessageKind.UPDATE_INFO_LIST,
                                              envelope.payload)
        except (MalformedEncoding, InvariantViolation):
            return False
        self.sim.trace.add("size", now, cls="update_info_list_envelope",
                           bytes=len(envelope_bytes))
        return True

    def _accept_tm(self, now, envelope_bytes: bytes) -> bool:
        key = self.state.peer_signer_keys.get("sp2")
        try:
            envelope = decode(MessageKind.SIGNED_ENVELOPE, envelope_bytes)
        except (MalformedEncoding, InvariantViolation):
            return False
        if key is None or not crypto.verify_envelope(key, envelope) \
                or envelope.protected_header.profile is not EnvelopeProfile.CWT:
            self.sim.trace.add("tm_rejected", now, actor=self.actor_id,
                               reason="bad_sp2_signature")
            return False
        try:
            decode(MessageKind.TRANSFER_MESSAGE, envelope.payload)
        except (MalformedEncoding, InvariantViolation):
            return False
        self.state.received_tm = envelope
        self.sim.trace.add("size", now, cls="transfer_message_envelope",
                           bytes=len(envelope_bytes))
        return True


class RaVerifierActor:
    """Stand-alone attestation verifier under the new operator's domain."""

    def __init__(self, sim, actor_id: str, ra_state: RaVerifierState,
                 credential: pki.Credential, truststore: pki.TrustStore, *,
                 revocation_view=None):
        self.sim = sim
        self.actor_id = actor_id
        self.ra_state = ra_state
        self.rng = sim.actor_rng(actor_id + "/nonce")
        self.peer = peers.ResponderPeer(
            sim, actor_id, credential, truststore, self._handle_app,
            revocation_view=revocation_view or (lambda: set()))
        sim.register_responder(actor_id, self.peer.bind())

    def _handle_app(self, now, src, entry, msg):
        if isinstance(msg, wire.RaHello):
            try:
                nonce = ra_challenge(self.ra_state, msg.device_id, self.rng)
            except NoExpectedMeasurement:
                return [wire.RaVerdict(False)]
            return [wire.RaChallenge(nonce)]
        if isinstance(msg, wire.RaReport):
            verdict = ra_verify(self.ra_state,
                                RaExchange(msg.nonce, msg.device_id,
                                           msg.measurement))
            self.sim.trace.add("ra_verdict", now, actor=self.actor_id,
                               device=msg.device_id.decode(errors="replace"),
                               verdict=str(verdict))
            return [wire.RaVerdict(verdict)]
        return []


# ---------------------------------------------------------------------------
# transfer orchestration processes
# ---------------------------------------------------------------------------

@dataclass
class Sp1PlanConfig:
    device_ids: list
    sp2_actor: str
    ca1_actor: str
    start_time: int = 40
    last_update: bool = False
    push_roots: tuple = ()
    narrow_windows: bool = False
    revoke_after: bool = True
    push_rounds: int = 5
    ack_wait: int = 10
    tm_poll_limit: int = 300


def sp1_transfer_process(net: peers.NetHandle, actor: OperatorActor,
                         credential: pki.Credential, store: pki.TrustStore,
                         cfg: Sp1PlanConfig):
    """SP1 side of the operator change: share the device list, await the
    transfer CWT, relay it per device, then revoke the old certificates."""
    state = actor.state
    yield Sleep(cfg.start_time)

    envelope = sp1_build_update_info_list(state, cfg.device_ids)
    payload_size = len(envelope.payload)
    env_bytes = encode(envelope)
    net.note("size", cls="update_info_list_payload", bytes=payload_size)
    net.note("size", cls="update_info_list_envelope", bytes=len(env_bytes))
    info_list = decode(MessageKind.UPDATE_INFO_LIST, envelope.payload)
    if info_list.entries:
        net.note("size", cls="device_update_info",
                 bytes=len(encode(info_list.entries[0])))

    sess, status = yield from peers.open_session(net, cfg.sp2_actor,
                                                 credential, store,
                                                 purpose="sp1sp2")
    if sess is None:
        net.note("transfer_aborted", step="sp2_session", status=status)
        return
    reply, status = yield from peers.session_call(
        net, sess, cfg.sp2_actor, wire.ListDeliver(env_bytes), (wire.ListAck,))
    if reply is None or not reply.ok:
        net.note("transfer_aborted", step="list_deliver", status=status)
        return

    polls = 0
    while state.received_tm is None:
        polls += 1
        if polls > cfg.tm_poll_limit:
            net.note("transfer_aborted", step="await_tm", status="timeout")
            return
        yield Sleep(2)

    def session_entry(device_id):
        sid = state.device_sessions.get(device_id)
        return actor.peer.sessions.get(sid) if sid else None

    # Preparation pushes first: the truststore update (and any final
    # firmware update) must land before the transfer CWT, since the reset
    # must leave the device able to authenticate the CA2 side.
    prep_kinds = []
    if cfg.last_update:
        prep_kinds.append("final")
    if cfg.push_roots:
        prep_kinds.append("trust")
    if prep_kinds:
        pending = set(cfg.device_ids)
        for _round in range(cfg.push_rounds):
            for device_id in sorted(pending):
                entry = session_entry(device_id)
                if entry is None:
                    net.note("push_skipped",
                             device=device_id.decode(errors="replace"),
                             reason="no_session")
                    continue
                acked = state.acks.get(device_id, {})
                if cfg.last_update and not acked.get("final", False):
                    frame, label = actor.peer.push(
                        entry, wire.FinalUpdate(encode(state.current_version)))
                    yield Transmit(entry.initiator, frame, label)
                if cfg.push_roots and not acked.get("trust", False):
                    roots = tuple(encode(c) for c in cfg.push_roots)
                    frame, label = actor.peer.push(
                        entry, wire.TrustPush(roots, True))
                    yield Transmit(entry.initiator, frame, label)
            yield Sleep(cfg.ack_wait)
            pending = {d for d in pending
                       if not all(state.acks.get(d, {}).get(k, False)
                                  for k in prep_kinds)}
            if not pending:
                break
        if pending:
            net.note("prep_pushes_incomplete", count=len(pending))

    relayed_size_noted = False
    pending = set(cfg.device_ids)
    for _round in range(cfg.push_rounds):
        for device_id in sorted(pending):
            entry = session_entry(device_id)
            if entry is None:
                net.note("push_skipped",
                         device=device_id.decode(errors="replace"),
                         reason="no_session")
                continue
            relayed = sp1_relay_transfer(state, state.received_tm, device_id,
                                         cfg.narrow_windows)
            relayed_bytes = encode(relayed)
            if not relayed_size_noted:
                net.note("size", cls="relayed_transfer_envelope",
                         bytes=len(relayed_bytes))
                net.note("size", cls="transfer_message_payload",
                         bytes=len(relayed.payload))
                relayed_size_noted = True
            frame, label = actor.peer.push(
                entry, wire.TransferDeliver(relayed_bytes))
            yield Transmit(entry.initiator, frame, label)
        yield Sleep(cfg.ack_wait)
        pending = {d for d in pending
                   if not state.acks.get(d, {}).get("transfer", False)}
        if not pending:
            break
    net.note("transfer_pushes_done", unacked=len(pending))

    if cfg.revoke_after:
        sess, status = yield from peers.open_session(net, cfg.ca1_actor,
                                                     credential, store,
                                                     purpose="revoke")
        if sess is None:
            net.note("revocation_failed", status=status)
            return
        for device_id in sorted(set(cfg.device_ids)):
            reply, status = yield from peers.session_call(
                net, sess, cfg.ca1_actor, wire.RevokeReq(device_id),
                (wire.RevokeRsp,))
            if reply is None:
                net.note("revocation_failed",
                         device=device_id.decode(errors="replace"),
                         status=status)
    net.note("sp1_orchestration_done")


@dataclass
class Sp2PlanConfig:
    ca2_actor: str
    sp1_actor: str
    options: TransferOptions
    skip_registration: bool = False
    fallback_enroll_uri: Uri | None = None
    list_poll_limit: int = 300


def sp2_transfer_process(net: peers.NetHandle, actor: OperatorActor,
                         credential: pki.Credential, store: pki.TrustStore,
                         cfg: Sp2PlanConfig):
    """SP2 side: receive the signed list, register with CA2, send the CWT."""
    state = actor.state
    polls = 0
    while state.received_list is None:
        polls += 1
        if polls > cfg.list_poll_limit:
            net.note("transfer_aborted", step="await_list", status="timeout")
            return
        yield Sleep(2)

    if cfg.skip_registration:
        # Misconfiguration scenario: SP2 never registers the factory
        # certificates; enrollments at CA2 will be rejected.
        enroll_uri = cfg.fallback_enroll_uri
        net.note("registration_skipped")
    else:
        sess, status = yield from peers.open_session(net, cfg.ca2_actor,
                                                     credential, store,
                                                     purpose="register")
        if sess is None:
            net.note("transfer_aborted", step="ca2_session", status=status)
            return
        cert_list = tuple(encode(e.factory_certificate)
                          for e in state.received_list.entries)
        reply, status = yield from peers.session_call(
            net, sess, cfg.ca2_actor, wire.RegisterReq(cert_list),
            (wire.RegisterRsp,))
        if reply is None or not reply.ok:
            net.note("transfer_aborted", step="register",
                     status=(reply.reason if reply else status))
            return
        enroll_uri = Uri(reply.enroll_uri)

    message = build_transfer_message(state, state.received_list, enroll_uri,
                                     cfg.options)
    envelope = crypto.sign_envelope(state.signing_key, EnvelopeProfile.CWT,
                                    encode(message))
    env_bytes = encode(envelope)
    net.note("size", cls="transfer_message_payload", bytes=len(envelope.payload))
    net.note("size", cls="transfer_message_envelope", bytes=len(env_bytes))

    sess, status = yield from peers.open_session(net, cfg.sp1_actor,
                                                 credential, store,
                                                 purpose="sp2sp1")
    if sess is None:
        net.note("transfer_aborted", step="sp1_session", status=status)
        return
    reply, status = yield from peers.session_call(
        net, sess, cfg.sp1_actor, wire.TmDeliver(env_bytes), (wire.TmAck,))
    if reply is None or not reply.ok:
        net.note("transfer_aborted", step="tm_deliver", status=status)
        return
    net.note("sp2_orchestration_done")
