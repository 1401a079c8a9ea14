"""Content-addressed artifact directories.

Every artifact (dataset, checkpoint) is built into ``<root>/<kind>-<hash>``
where the hash covers a canonical description of all its inputs. A
``.complete`` marker holding that description is written last, so an
interrupted build is never mistaken for a finished one.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
from typing import Callable

log = logging.getLogger(__name__)

MARKER = ".complete"


def content_key(description: str) -> str:
    return hashlib.blake2b(description.encode("utf-8"), digest_size=8).hexdigest()


def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=16)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactStore:
    """Build-or-reuse directories under ``root``.

    With ``reuse=False`` every artifact is rebuilt from scratch, but the
    directory layout (and therefore every path written into outputs) is the
    same as with reuse enabled.
    """

    def __init__(self, root, reuse: bool = True):
        self.root = os.fspath(root)
        self.reuse = reuse
        self.hits: list[str] = []
        self.built: list[str] = []
        self._fresh: set[str] = set()

    def path(self, kind: str, description: str) -> str:
        return os.path.join(self.root, f"{kind}-{content_key(description)}")

    def is_complete(self, kind: str, description: str) -> bool:
        marker = os.path.join(self.path(kind, description), MARKER)
        if not os.path.exists(marker):
            return False
        with open(marker, encoding="utf-8") as fh:
            return fh.read() == description

    def build(self, kind: str, description: str, builder: Callable[[str], None]) -> str:
        """Return the artifact directory, calling ``builder(tmp_dir)`` if it
        is missing (or reuse is off and it was not built in this session)."""
        final = self.path(kind, description)
        name = os.path.basename(final)
        if final in self._fresh or (self.reuse and self.is_complete(kind, description)):
            if final not in self._fresh:
                log.info("cache hit %s", name)
                self.hits.append(name)
            return final
        tmp = final + ".partial"
        for d in (tmp, final):
            if os.path.exists(d):
                shutil.rmtree(d)
        os.makedirs(tmp)
        builder(tmp)
        with open(os.path.join(tmp, MARKER), "w", encoding="utf-8") as fh:
            fh.write(description)
        os.replace(tmp, final)
        self._fresh.add(final)
        self.built.append(name)
        log.info("built %s", name)
        return final
