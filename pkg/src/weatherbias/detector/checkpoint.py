"""Binary checkpoint format.

Layout: ``b"wbh-model v1\\n"``, a little-endian u32 length followed by a
UTF-8 JSON architecture descriptor, a u64 parameter count, the parameters
as little-endian float64, and a trailing 8-byte BLAKE2b checksum of
everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..data import ClassSet
from ..errors import ChecksumError, VersionError
from .network import Architecture, ModelState

MAGIC = b"wbh-model v1\n"


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def model_to_bytes(model: ModelState) -> bytes:
    desc = dict(model.arch.descriptor(), classes=list(model.class_set.names), step=model.step)
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join([
        MAGIC,
        struct.pack("<I", len(blob)), blob,
        struct.pack("<Q", model.params.size),
        model.params.astype("<f8").tobytes(),
    ])
    return payload + _checksum(payload)


def model_from_bytes(buf: bytes, expect: Architecture | None = None) -> ModelState:
    if not buf.startswith(MAGIC):
        raise VersionError(f"not a wbh-model v1 checkpoint (header {buf[:16]!r})")
    if len(buf) < len(MAGIC) + 8 or _checksum(buf[:-8]) != buf[-8:]:
        raise ChecksumError("checkpoint checksum mismatch")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    desc = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    params = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
    arch = Architecture.from_descriptor(desc)
    if expect is not None and arch != expect:
        raise VersionError(f"checkpoint architecture {arch.descriptor()} does not match "
                           f"expected {expect.descriptor()}")
    return ModelState(arch, params, ClassSet(tuple(desc["classes"])), int(desc.get("step", 0)))


def save_model(model: ModelState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path, expect: Architecture | None = None) -> ModelState:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), expect)
