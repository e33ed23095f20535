"""Session machinery on top of the simulator for both kinds of actor.

Initiator side: generator helpers (open_session, session_call) that device
and operator processes drive via `yield from`. Responder side: a session
table keyed by session id with handshake freshness tracking, wrapping an
application-level request handler.

Every session-record acceptance or rejection lands in the trace as one
`record` entry keyed by (actor, session id, sequence number); replay
analysis in tests is built entirely on those entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import messages, pki, session, simnet, wire
from .errors import Error, MalformedEncoding, ReplayDetected
from .messages import CertProfile, MessageKind
from .simnet import TIMEOUT, Transmit, WaitMessage


@dataclass
class NetConfig:
    call_timeout: int = 8
    call_retries: int = 3
    handshake_timeout: int = 8
    handshake_retries: int = 3


class NetHandle:
    """What a process actor sees of the network and simulation."""

    def __init__(self, sim: simnet.Simulator, actor_id: str,
                 config: NetConfig | None = None,
                 revocation_view=None):
        self.sim = sim
        self.actor_id = actor_id
        self.config = config or NetConfig()
        self.rng = sim.actor_rng(actor_id)
        # Devices never query revocation state; server-side actors get a
        # callable view onto the shared registry.
        self._revocation_view = revocation_view or (lambda: set())

    def now(self) -> int:
        return self.sim.now

    def revocation_view(self) -> set[int]:
        return set(self._revocation_view())

    def resolve(self, uri) -> str | None:
        return self.sim.resolve(str(uri))

    def note(self, kind: str, **fields) -> None:
        self.sim.trace.add(kind, self.sim.now, actor=self.actor_id, **fields)


def _cred_to_wire(cred: pki.Credential) -> tuple[bytes, tuple[bytes, ...]]:
    return (messages.encode(cred.certificate),
            tuple(messages.encode(c) for c in cred.intermediates))


def _cred_from_wire(cert_bytes: bytes, intermediates: tuple[bytes, ...]):
    cert = messages.decode(MessageKind.CERTIFICATE, cert_bytes)
    inters = tuple(messages.decode(MessageKind.CERTIFICATE, b)
                   for b in intermediates)
    return cert, inters


def _label(msg) -> str:
    name = type(msg).__name__
    out = [name[0].lower()]
    for ch in name[1:]:
        if ch.isupper():
            out.append("_")
            out.append(ch.lower())
        else:
            out.append(ch)
    return "".join(out)


# ---------------------------------------------------------------------------
# initiator side
# ---------------------------------------------------------------------------

def open_session(net: NetHandle, dst: str, cred: pki.Credential,
                 store: pki.TrustStore, purpose: str = "session"):
    """Two-message handshake; returns (AuthenticatedSession | None, status).

    Status is "ok", "peer_untrusted:<reason>", "peer_rejected:<reason>",
    "no_route" or "timeout". Stale or replayed handshake replies (echo
    mismatch) are discarded without ending the wait.
    """
    if dst is None:
        return None, "no_route"
    cfg = net.config
    for _attempt in range(cfg.handshake_retries + 1):
        ephemeral = net.rng.randbytes(32)
        cert_bytes, inter_bytes = _cred_to_wire(cred)
        hello = wire.encode_wire(wire.Hello(ephemeral, cert_bytes, inter_bytes))
        yield Transmit(dst, hello, label=f"{purpose}.hello")
        deadline = net.now() + cfg.handshake_timeout
        while True:
            remaining = deadline - net.now()
            if remaining <= 0:
                break
            got = yield WaitMessage(timeout=remaining)
            if got is TIMEOUT:
                break
            _src, data = got
            try:
                msg = wire.decode_wire(data)
            except MalformedEncoding:
                net.note("note", what="malformed_frame_discarded", purpose=purpose)
                continue
            if isinstance(msg, wire.Accept):
                if msg.echo_ephemeral != ephemeral:
                    net.note("handshake", outcome="stale_accept_discarded",
                             purpose=purpose)
                    continue
                try:
                    peer_cert, inters = _cred_from_wire(msg.cert_bytes,
                                                        msg.intermediates)
                except Error:
                    net.note("handshake", outcome="bad_accept_cert",
                             purpose=purpose)
                    continue
                check = pki.verify_chain(peer_cert, list(inters), store,
                                         net.now(), net.revocation_view())
                if not check:
                    return None, f"peer_untrusted:{check.reason.value}"
                endpoint = session.AuthenticatedSession(
                    local_identity=cred.certificate,
                    peer_identity=peer_cert,
                    session_id=session.derive_session_id(ephemeral, msg.ephemeral),
                    session_key_fingerprint=session.derive_fingerprint(
                        ephemeral, msg.ephemeral))
                return endpoint, "ok"
            if isinstance(msg, wire.Reject):
                if msg.echo_ephemeral != ephemeral:
                    net.note("handshake", outcome="stale_reject_discarded",
                             purpose=purpose)
                    continue
                return None, f"peer_rejected:{msg.reason}"
            net.note("note", what="unexpected_frame_discarded", purpose=purpose)
    return None, "timeout"


def _receive_record(net: NetHandle, sess: session.AuthenticatedSession,
                    data: bytes):
    """Session-layer filter for one inbound frame; returns payload or None."""
    frame = wire.parse_record_frame(data)
    if frame is None:
        net.note("note", what="non_record_frame_discarded")
        return None
    record = session.SessionRecord(frame.session_id, frame.seq, frame.payload)
    if frame.session_id != sess.session_id:
        net.note("record", sid=frame.session_id.hex(), seq=frame.seq,
                 outcome="wrong_session")
        return None
    try:
        payload = session.receive(sess, record)
    except ReplayDetected:
        net.note("record", sid=frame.session_id.hex(), seq=frame.seq,
                 outcome="replay_detected")
        return None
    net.note("record", sid=frame.session_id.hex(), seq=frame.seq,
             outcome="accept")
    return payload


def send_record(net: NetHandle, sess: session.AuthenticatedSession, dst: str,
                app_msg) -> Transmit:
    payload = wire.encode_wire(app_msg)
    record = session.send(sess, payload)
    frame = wire.encode_wire(wire.RecordFrame(record.session_id, record.seq,
                                              record.payload))
    return Transmit(dst, frame, label=_label(app_msg))


def session_call(net: NetHandle, sess: session.AuthenticatedSession, dst: str,
                 request, expect: tuple[type, ...]):
    """Request/response over an established session with retries.

    Returns (reply message, "ok") or (None, "timeout"). Replayed, duplicate
    or alien records observed while waiting are discarded and the wait
    continues; an unexpected but valid application message is also
    discarded (our flows are strictly lock-step per session).
    """
    cfg = net.config
    for _attempt in range(cfg.call_retries + 1):
        yield send_record(net, sess, dst, request)
        deadline = net.now() + cfg.call_timeout
        while True:
            remaining = deadline - net.now()
            if remaining <= 0:
                break
            got = yield WaitMessage(timeout=remaining)
            if got is TIMEOUT:
                break
            _src, data = got
            payload = _receive_record(net, sess, data)
            if payload is None:
                continue
            try:
                reply = wire.decode_wire(payload)
            except MalformedEncoding:
                net.note("note", what="malformed_app_payload")
                continue
            if isinstance(reply, expect):
                return reply, "ok"
            net.note("note", what="unexpected_app_message",
                     got=type(reply).__name__)
    return None, "timeout"


def session_wait(net: NetHandle, sess: session.AuthenticatedSession,
                 timeout: int | None = None):
    """Park on a session until the next accepted record; (msg, src) or None."""
    deadline = None if timeout is None else net.now() + timeout
    while True:
        remaining = None
        if deadline is not None:
            remaining = deadline - net.now()
            if remaining <= 0:
                return None, None
        got = yield WaitMessage(timeout=remaining)
        if got is TIMEOUT:
            return None, None
        src, data = got
        payload = _receive_record(net, sess, data)
        if payload is None:
            continue
        try:
            return wire.decode_wire(payload), src
        except MalformedEncoding:
            net.note("note", what="malformed_app_payload")
            continue


# ---------------------------------------------------------------------------
# responder side
# ---------------------------------------------------------------------------

@dataclass
class PeerSession:
    endpoint: session.AuthenticatedSession
    peer_cert: messages.CompactCertificate
    initiator: str


@dataclass
class ResponderPeer:
    """Server-side endpoint: handshake acceptance plus per-session dispatch.

    `app_handler(now, src, peer_session, msg)` returns a list of wire
    messages to send back on the same session.
    """

    sim: simnet.Simulator
    actor_id: str
    credential: pki.Credential
    truststore: pki.TrustStore
    app_handler: object
    revocation_view: object = None
    allowed_profiles: tuple[CertProfile, ...] = (
        CertProfile.FACTORY, CertProfile.OPERATIONAL, CertProfile.SERVER)
    sessions: dict[bytes, PeerSession] = field(default_factory=dict)
    seen_ephemerals: set[bytes] = field(default_factory=set)

    def __post_init__(self):
        self.rng = self.sim.actor_rng(self.actor_id + "/hs")
        if self.revocation_view is None:
            self.revocation_view = lambda: set()

    def handle(self, now, src, data):
        try:
            msg = wire.decode_wire(data)
        except MalformedEncoding:
            return "malformed", []
        if isinstance(msg, wire.Hello):
            return self._on_hello(now, src, msg)
        if isinstance(msg, wire.RecordFrame):
            return self._on_record(now, src, msg)
        return "ignored", []

    def _reject(self, echo: bytes, reason: str):
        data = wire.encode_wire(wire.Reject(echo, reason))
        return f"hello_rejected:{reason}", [(None, data, "reject")]

    def _on_hello(self, now, src, msg):
        if msg.ephemeral in self.seen_ephemerals:
            self.sim.trace.add("handshake", now, actor=self.actor_id,
                               outcome="replayed_hello_discarded")
            return "handshake_replay", []
        self.seen_ephemerals.add(msg.ephemeral)
        try:
            peer_cert, inters = _cred_from_wire(msg.cert_bytes, msg.intermediates)
        except Exception:
            return self._reject(msg.ephemeral, "bad_certificate")
        check = pki.verify_chain(peer_cert, list(inters), self.truststore,
                                 now, set(self.revocation_view()))
        if not check:
            return self._reject(msg.ephemeral, check.reason.value)
        if peer_cert.profile not in self.allowed_profiles:
            return self._reject(msg.ephemeral, "profile_not_allowed")

        responder_ephemeral = self.rng.randbytes(32)
        endpoint = session.AuthenticatedSession(
            local_identity=self.credential.certificate,
            peer_identity=peer_cert,
            session_id=session.derive_session_id(msg.ephemeral,
                                                 responder_ephemeral),
            session_key_fingerprint=session.derive_fingerprint(
                msg.ephemeral, responder_ephemeral))
        self.sessions[endpoint.session_id] = PeerSession(endpoint, peer_cert, src)
        self.sim.trace.add("session", now, sid=endpoint.session_id.hex(),
                           fp=endpoint.session_key_fingerprint.hex(),
                           a=src, b=self.actor_id)
        cert_bytes, inter_bytes = _cred_to_wire(self.credential)
        accept = wire.encode_wire(wire.Accept(
            msg.ephemeral, responder_ephemeral, cert_bytes, inter_bytes))
        return "hello_accepted", [(None, accept, "accept")]

    def _on_record(self, now, src, frame):
        entry = self.sessions.get(frame.session_id)
        if entry is None:
            self.sim.trace.add("record", now, actor=self.actor_id,
                               sid=frame.session_id.hex(), seq=frame.seq,
                               outcome="wrong_session")
            return "wrong_session", []
        record = session.SessionRecord(frame.session_id, frame.seq, frame.payload)
        try:
            payload = session.receive(entry.endpoint, record)
        except ReplayDetected:
            self.sim.trace.add("record", now, actor=self.actor_id,
                               sid=frame.session_id.hex(), seq=frame.seq,
                               outcome="replay_detected")
            return "replay_detected", []
        self.sim.trace.add("record", now, actor=self.actor_id,
                           sid=frame.session_id.hex(), seq=frame.seq,
                           outcome="accept")
        try:
            app_msg = wire.decode_wire(payload)
        except MalformedEncoding:
            return "malformed_app", []
        replies = self.app_handler(now, src, entry, app_msg)
        sends = []
        for reply in replies:
            data = wire.encode_wire(reply)
            out = session.send(entry.endpoint, data)
            frame_bytes = wire.encode_wire(wire.RecordFrame(
                out.session_id, out.seq, out.payload))
            sends.append((None, frame_bytes, _label(reply)))
        return f"accepted:{_label(app_msg)}", sends

    def bind(self):
        """Adapter matching the simulator responder signature."""
        def handler(now, src, data):
            disposition, sends = self.handle(now, src, data)
            return disposition, [(dst or src, payload, label)
                                 for dst, payload, label in sends]
        return handler

    def push(self, entry: PeerSession, app_msg) -> tuple[bytes, str]:
        """Server-initiated record on an existing session (returns frame)."""
        data = wire.encode_wire(app_msg)
        record = session.send(entry.endpoint, data)
        frame = wire.encode_wire(wire.RecordFrame(record.session_id, record.seq,
                                                  record.payload))
        return frame, _label(app_msg)
