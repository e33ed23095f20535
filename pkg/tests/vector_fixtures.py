"""Abstract values shared by the vector generator and the codec tests.

Only plain values live here (seeds, names, numbers, URIs); the golden bytes
themselves are produced by the independent reference encoder in refenc.py
and frozen under vectors/.
"""

import hashlib


def seed_for(label: str) -> bytes:
    return hashlib.sha256(b"vector-seed:" + label.encode()).digest()

DEVICE_SEED = seed_for("device-factory-key")
ISSUER_SEED = seed_for("permanent-ca-key")
SIGNER_SEED = seed_for("sp-signing-key")

TM_BASIC = dict(
    reset_nb=1000,
    reset_na=2000,
    ra_uri=None,
    update_uri="coaps://u.sp2.ex",
    update_flag=False,
    enroll_uri="coaps://ca2.ex/est",
    fallback_uri="coaps://u.sp1.ex",
)

TM_WITH_RA = dict(
    reset_nb=5000,
    reset_na=9000,
    ra_uri="coaps://ra.sp2.ex",
    update_uri="coaps://u.sp2.ex",
    update_flag=True,
    enroll_uri="coaps://ca2.ex/est",
    fallback_uri="coaps://u.sp1.ex",
)

CERT_FIELDS = dict(
    serial=7,
    subject=b"dev-0001",
    issuer=b"permanent-ca",
    not_before=0,
    not_after=10**9,
    profile=2,  # factory
)

SECOND_CERT_FIELDS = dict(
    serial=8,
    subject=b"dev-0002",
    issuer=b"permanent-ca",
    not_before=0,
    not_after=10**9,
    profile=2,
)

UPDATE_WINDOW = (100_000, 200_000)
VERSION = (3, "coaps://u.sp1.ex/fw/3")

CSR_FIELDS = dict(
    subject=b"dev-0001",
    profile=3,  # operational
)

ENVELOPE_ALG = 1
ENVELOPE_PROFILE_CWT = 1
ENVELOPE_PROFILE_UPDATE_LIST = 2
