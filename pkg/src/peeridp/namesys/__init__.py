"""Name system over a simulated replicated DHT.

Namespaces are signing keypairs; records are label-encrypted, per-label
signed, and stored under query keys that reveal neither the namespace nor
the label.  The simulator is deterministic given a seed and models per-hop
latency, replication, caching and expiration.
"""

from .records import (
    BLOB_MIN_SIZE,
    PAYLOAD_LIMIT,
    RECORD_TYPE_ABE_KEY,
    RECORD_TYPE_ID_ATTR,
    Namespace,
    Record,
    RecordError,
    decode_blob,
    decrypt_record_payload,
    derive_label_signing_seed,
    derive_query_key,
    derive_record_key,
    encode_blob,
    make_record_blob,
    verify_blob,
)
from .network import (
    DepublishReceipt,
    LatencyParams,
    NameSystemClient,
    NotFound,
    PublishError,
    PublishReceipt,
    ResolveResult,
    SignatureInvalid,
    SimNetwork,
    sim_build,
    sim_step,
)
from .scenario import run_scenario, trace_to_csv

__all__ = [
    "BLOB_MIN_SIZE",
    "PAYLOAD_LIMIT",
    "RECORD_TYPE_ABE_KEY",
    "RECORD_TYPE_ID_ATTR",
    "Namespace",
    "Record",
    "RecordError",
    "decode_blob",
    "decrypt_record_payload",
    "derive_label_signing_seed",
    "derive_query_key",
    "derive_record_key",
    "encode_blob",
    "make_record_blob",
    "verify_blob",
    "DepublishReceipt",
    "LatencyParams",
    "NameSystemClient",
    "NotFound",
    "PublishError",
    "PublishReceipt",
    "ResolveResult",
    "SignatureInvalid",
    "SimNetwork",
    "sim_build",
    "sim_step",
    "run_scenario",
    "trace_to_csv",
]
