"""Abstract authenticated-channel model standing in for DTLS/EDHOC.

A session is established only after both sides verify the peer's
certificate chain against their own truststore. Session keys exist only as
fingerprints derived from both parties' ephemeral contributions; replay
protection is per-direction strictly-increasing sequence numbers.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import crypto, pki
from .errors import NotEstablished, PeerUntrusted, ReplayDetected, WrongSession
from .messages import CompactCertificate, TimeStamp

SESSION_ID_LEN = 8


@dataclass
class AuthenticatedSession:
    local_identity: CompactCertificate
    peer_identity: CompactCertificate
    session_id: bytes
    session_key_fingerprint: bytes
    established: bool = True
    send_seq: int = 0
    recv_seq: int = 0


@dataclass(frozen=True)
class SessionRecord:
    session_id: bytes
    seq: int
    payload: bytes


def derive_session_id(initiator_ephemeral: bytes, responder_ephemeral: bytes) -> bytes:
    return crypto.digest(b"session-id" + initiator_ephemeral
                         + responder_ephemeral)[:SESSION_ID_LEN]


def derive_fingerprint(initiator_ephemeral: bytes, responder_ephemeral: bytes) -> bytes:
    return crypto.digest(b"session-key" + initiator_ephemeral
                         + responder_ephemeral)


def verify_peer(cred: pki.Credential, store: pki.TrustStore, now: TimeStamp,
                revocation_view: set[int]) -> pki.ChainResult:
    return pki.verify_chain(cred.certificate, list(cred.intermediates),
                            store, now, revocation_view)


def build_endpoints(
    initiator_cred: pki.Credential,
    responder_cred: pki.Credential,
    initiator_ephemeral: bytes,
    responder_ephemeral: bytes,
) -> tuple[AuthenticatedSession, AuthenticatedSession]:
    session_id = derive_session_id(initiator_ephemeral, responder_ephemeral)
    fingerprint = derive_fingerprint(initiator_ephemeral, responder_ephemeral)
    initiator = AuthenticatedSession(
        local_identity=initiator_cred.certificate,
        peer_identity=responder_cred.certificate,
        session_id=session_id,
        session_key_fingerprint=fingerprint)
    responder = AuthenticatedSession(
        local_identity=responder_cred.certificate,
        peer_identity=initiator_cred.certificate,
        session_id=session_id,
        session_key_fingerprint=fingerprint)
    return initiator, responder


def establish(
    initiator_cred: pki.Credential,
    responder_cred: pki.Credential,
    initiator_store: pki.TrustStore,
    responder_store: pki.TrustStore,
    now: TimeStamp,
    revocation_views: tuple[set[int], set[int]],
    rng: random.Random,
) -> tuple[AuthenticatedSession, AuthenticatedSession]:
    """Mutual authentication; both endpoints on success, PeerUntrusted if
    either side's chain verification of the other fails.

    `revocation_views` holds (initiator view, responder view); a device side
    passes an empty set since devices never query revocation state.
    """
    initiator_view, responder_view = revocation_views
    check = verify_peer(responder_cred, initiator_store, now, initiator_view)
    if not check:
        raise PeerUntrusted("initiator", check.reason.value + ": " + check.detail)
    check = verify_peer(initiator_cred, responder_store, now, responder_view)
    if not check:
        raise PeerUntrusted("responder", check.reason.value + ": " + check.detail)
    initiator_ephemeral = rng.randbytes(32)
    responder_ephemeral = rng.randbytes(32)
    return build_endpoints(initiator_cred, responder_cred,
                           initiator_ephemeral, responder_ephemeral)


def send(session: AuthenticatedSession, payload: bytes) -> SessionRecord:
    if not session.established:
        raise NotEstablished("cannot send before establishment")
    session.send_seq += 1
    return SessionRecord(session.session_id, session.send_seq, payload)


def receive(session: AuthenticatedSession, record: SessionRecord) -> bytes:
    """Accept a record exactly once, in order; duplicates and cross-session
    records are rejected, never silently accepted."""
    if not session.established:
        raise NotEstablished("cannot receive before establishment")
    if record.session_id != session.session_id:
        raise WrongSession(
            f"record for session {record.session_id.hex()}, "
            f"this is {session.session_id.hex()}")
    if record.seq <= session.recv_seq:
        raise ReplayDetected(
            f"record seq {record.seq} <= last accepted {session.recv_seq}")
    session.recv_seq = record.seq
    return record.payload
