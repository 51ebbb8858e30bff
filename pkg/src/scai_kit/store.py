"""Content-addressed object store and digest-verified descriptor resolution.

On-disk layout::

    <root>/objects/<algorithm>/<first two hex chars>/<full hex digest>

There is no index file; the directory tree is the index.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import urllib.error
import urllib.parse
import urllib.request
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol

from scai_kit.errors import (
    CorruptObject,
    FetchError,
    IntegrityMismatch,
    IoFailure,
    NoOverlapDigest,
    NotFound,
    Unresolvable,
)
from scai_kit.model import DIGEST_ALGORITHMS, DigestMatch, DigestSet, ResourceDescriptor, digest_set_match

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
MAX_REDIRECTS = 5


def compute_digest(data: bytes, algorithms: Sequence[str] = ("sha256",)) -> DigestSet:
    return DigestSet({alg: hashlib.new(alg, data).hexdigest() for alg in algorithms})


class Store:
    """Filesystem content-addressed store keyed by sha256."""

    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)

    def _path(self, algorithm: str, hexdigest: str) -> Path:
        return self.root / "objects" / algorithm / hexdigest[:2] / hexdigest

    def put(self, data: bytes) -> DigestSet:
        digest = compute_digest(data)
        hexdigest = digest["sha256"]
        path = self._path("sha256", hexdigest)
        try:
            if path.exists():
                try:
                    self._read_verified(path, "sha256", hexdigest)
                    return digest
                except CorruptObject:
                    logger.warning("replacing corrupt object %s", path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        except OSError as exc:
            raise IoFailure(f"cannot write object {hexdigest}: {exc}") from exc
        return digest

    def path_for(self, digest: DigestSet) -> Path | None:
        """Path of the first stored object named by ``digest``, if any."""
        for alg in sorted(set(digest) & set(DIGEST_ALGORITHMS)):
            path = self._path(alg, digest[alg])
            if path.is_file():
                return path
        return None

    def __contains__(self, digest: DigestSet) -> bool:
        return self.path_for(digest) is not None

    def get(self, digest: DigestSet) -> bytes:
        """Return stored bytes, re-hashed against every registered algorithm
        in ``digest`` before they are handed out."""
        if not len(digest):
            raise ValueError("digest must not be empty")
        path = self.path_for(digest)
        if path is None:
            raise NotFound(f"no stored object for {digest.as_dict()}")
        data = self._read_verified(path, path.parent.parent.name, path.name)
        actual = compute_digest(data, sorted(set(digest) & set(DIGEST_ALGORITHMS)))
        if digest_set_match(digest, actual) is not DigestMatch.MATCH:
            raise CorruptObject(f"object {path.name} does not match all requested digests")
        return data

    def _read_verified(self, path: Path, algorithm: str, hexdigest: str) -> bytes:
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        if hashlib.new(algorithm, data).hexdigest() != hexdigest:
            raise CorruptObject(f"stored object {hexdigest} is corrupt")
        return data


# -- fetchers ----------------------------------------------------------------


class Fetcher(Protocol):
    schemes: frozenset[str]

    def fetch(self, uri: str) -> bytes: ...


class FileFetcher:
    schemes = frozenset({"file"})

    def fetch(self, uri: str) -> bytes:
        parsed = urllib.parse.urlparse(uri)
        path = urllib.request.url2pathname(parsed.path)
        try:
            return Path(path).read_bytes()
        except OSError as exc:
            raise FetchError(f"{uri}: {exc.strerror}") from None


class _LimitedRedirects(urllib.request.HTTPRedirectHandler):
    max_redirections = MAX_REDIRECTS


class HttpFetcher:
    schemes = frozenset({"http", "https"})

    def __init__(self, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.timeout = timeout
        self._opener = urllib.request.build_opener(_LimitedRedirects())

    def fetch(self, uri: str) -> bytes:
        try:
            with self._opener.open(uri, timeout=self.timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise FetchError(f"{uri}: {exc}") from None


class MemoryFetcher:
    """Serves bytes from a dict; unknown URIs fail like a dead link."""

    def __init__(self, objects: Mapping[str, bytes] | None = None, schemes: Sequence[str] = ("http", "https", "mem")) -> None:
        self.objects = dict(objects or {})
        self.schemes = frozenset(schemes)
        self.requests: list[str] = []

    def fetch(self, uri: str) -> bytes:
        self.requests.append(uri)
        try:
            return self.objects[uri]
        except KeyError:
            raise FetchError(f"{uri}: not found") from None


def default_fetchers() -> list[Fetcher]:
    return [FileFetcher(), HttpFetcher()]


# -- resolution --------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedObject:
    data: bytes
    source: Literal["inline", "store", "remote"]
    verified_algorithms: tuple[str, ...]


def resolve(
    rd: ResourceDescriptor,
    fetchers: Sequence[Fetcher] = (),
    store: Store | None = None,
) -> ResolvedObject:
    """Obtain the bytes a descriptor points at and check them against its digest.

    Sources are tried in order: inline content, the local store, then
    ``downloadLocation`` and ``uri`` through the first fetcher registered for
    the URI scheme. Bytes that fail the digest check are never returned; a later
    source may still succeed, otherwise :class:`IntegrityMismatch` is raised.
    Verified remote bytes are written into ``store``.
    """
    checkable: tuple[str, ...] = ()
    if rd.digest is not None:
        checkable = tuple(sorted(set(rd.digest) & set(DIGEST_ALGORITHMS)))
        if not checkable:
            raise NoOverlapDigest(
                f"descriptor digests {sorted(rd.digest)} share no algorithm with {sorted(DIGEST_ALGORITHMS)}"
            )
    else:
        logger.warning("descriptor %s has no digest; resolved bytes are unverified", rd.name or rd.uri)

    mismatches: list[str] = []

    def accept(data: bytes, where: str) -> bool:
        if rd.digest is None:
            return True
        actual = compute_digest(data, checkable)
        if digest_set_match(rd.digest, actual) is DigestMatch.MATCH:
            return True
        mismatches.append(where)
        logger.warning("digest mismatch for %s from %s", rd.name or rd.uri, where)
        return False

    if rd.content is not None and accept(rd.content, "inline content"):
        return ResolvedObject(rd.content, "inline", checkable)

    if store is not None and rd.digest is not None:
        try:
            return ResolvedObject(store.get(rd.digest), "store", checkable)
        except NotFound:
            pass
        except CorruptObject as exc:
            mismatches.append(f"store ({exc})")

    for location in (rd.download_location, rd.uri):
        if not location:
            continue
        scheme = urllib.parse.urlparse(location).scheme.lower()
        fetcher = next((f for f in fetchers if scheme in f.schemes), None)
        if fetcher is None:
            logger.debug("no fetcher for scheme %r (%s)", scheme, location)
            continue
        try:
            data = fetcher.fetch(location)
        except FetchError as exc:
            logger.debug("fetch failed: %s", exc)
            continue
        if accept(data, location):
            if store is not None:
                store.put(data)
            return ResolvedObject(data, "remote", checkable)

    label = rd.name or rd.uri or rd.download_location or (rd.digest and rd.digest.as_dict())
    if mismatches:
        raise IntegrityMismatch(f"{label}: bytes from {', '.join(mismatches)} do not match digest")
    raise Unresolvable(f"{label}: no source produced the object")


class Resolver:
    """A store plus fetchers, callable as ``resolver(rd)``."""

    def __init__(self, store: Store | None = None, fetchers: Sequence[Fetcher] | None = None) -> None:
        self.store = store
        self.fetchers = list(default_fetchers() if fetchers is None else fetchers)

    def __call__(self, rd: ResourceDescriptor) -> ResolvedObject:
        return resolve(rd, self.fetchers, self.store)
