"""On-disk store of aggregated style features, one directory per digest.

Layout::

    <root>/<digest>/manifest.json
    <root>/<digest>/features-<sha16>.bin
    <root>/<digest>/rep-<i>-<sha16>.png      (optional thumbnails)

Payload files are content-named and written before the manifest; every file
goes through a temp file plus ``os.replace``, so a reader sees either the
previous complete entry or the new one.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import CacheCorruption
from .images import from_uint8, png_bytes, to_uint8
from .transfer.features import AggregatedStyleFeature

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "mmist-style-cache"
MANIFEST_VERSION = 1
CACHE_ENV = "MMIST_CACHE_ROOT"
THUMB_SIZE = 128
INCOMPLETE = "no manifest"  # verify() detail for an interrupted put


def default_cache_root() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "mmist"


@dataclass(frozen=True, eq=False)
class RepresentationThumb:
    image: torch.Tensor
    final_loss: float
    latent: list | None = None


@dataclass(frozen=True, eq=False)
class CachedStyle:
    digest: str
    agg: AggregatedStyleFeature
    representations: list[RepresentationThumb] = field(default_factory=list)
    created_at: str = ""
    config: dict = field(default_factory=dict)
    spec_summary: dict = field(default_factory=dict)

    def payload(self) -> bytes:
        return self.agg.to_bytes()


def thumbnail(image: torch.Tensor, size: int = THUMB_SIZE) -> torch.Tensor:
    arr = np.asarray(Image.fromarray(to_uint8(image)).resize((size, size), Image.Resampling.BILINEAR))
    return from_uint8(arr)


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class StyleCache:
    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_cache_root()

    def _dir(self, digest: str) -> Path:
        if not digest or any(c not in "0123456789abcdef" for c in digest):
            raise KeyError(f"invalid digest {digest!r}")
        return self.root / digest

    def resolve(self, prefix: str) -> str | None:
        """Full digest for a unique prefix, or None."""
        if not self.root.exists():
            return None
        hits = [p.name for p in self.root.iterdir() if p.is_dir() and p.name.startswith(prefix)]
        return hits[0] if len(hits) == 1 else None

    def put(self, entry: CachedStyle) -> Path:
        d = self._dir(entry.digest)
        d.mkdir(parents=True, exist_ok=True)
        payload = entry.payload()
        feat_sha = _sha(payload)
        feat_name = f"features-{feat_sha[:16]}.bin"
        _atomic_write(d / feat_name, payload)
        reps = []
        for i, rep in enumerate(entry.representations):
            data = png_bytes(rep.image)
            sha = _sha(data)
            name = f"rep-{i}-{sha[:16]}.png"
            _atomic_write(d / name, data)
            reps.append({"file": name, "sha256": sha, "final_loss": rep.final_loss, "latent": rep.latent})
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "digest": entry.digest,
            "created_at": entry.created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "config": entry.config,
            "spec": entry.spec_summary,
            "identities": list(entry.agg.identities),
            "n_styles": entry.agg.n_styles,
            "features": {"file": feat_name, "sha256": feat_sha, "bytes": len(payload)},
            "representations": reps,
        }
        _atomic_write(d / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True).encode())
        keep = {MANIFEST, feat_name} | {r["file"] for r in reps}
        for p in d.iterdir():
            if p.name not in keep and not p.name.startswith(".tmp-"):
                p.unlink(missing_ok=True)
        return d

    def _manifest(self, digest: str) -> dict | None:
        path = self._dir(digest) / MANIFEST
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            manifest = json.loads(raw)
        except ValueError as exc:
            raise CacheCorruption(f"{digest[:8]}: unreadable manifest: {exc}") from exc
        if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
            raise CacheCorruption(f"{digest[:8]}: unknown manifest format")
        if manifest.get("digest") != digest:
            raise CacheCorruption(f"{digest[:8]}: manifest digest mismatch")
        return manifest

    def _read_checked(self, digest: str, name: str, sha: str) -> bytes:
        try:
            data = (self._dir(digest) / name).read_bytes()
        except FileNotFoundError as exc:
            raise CacheCorruption(f"{digest[:8]}: missing payload {name}") from exc
        if _sha(data) != sha:
            raise CacheCorruption(f"{digest[:8]}: payload {name} fails its checksum")
        return data

    def get(self, digest: str) -> CachedStyle | None:
        for attempt in range(2):
            try:
                return self._load(digest)
            except CacheCorruption:
                # a concurrent put may have swapped payloads between our reads
                if attempt:
                    raise
        return None

    def _load(self, digest: str) -> CachedStyle | None:
        manifest = self._manifest(digest)
        if manifest is None:
            return None
        feat = manifest["features"]
        agg = AggregatedStyleFeature.from_bytes(self._read_checked(digest, feat["file"], feat["sha256"]))
        reps = []
        for r in manifest.get("representations", []):
            data = self._read_checked(digest, r["file"], r["sha256"])
            with Image.open(io.BytesIO(data)) as pil:
                img = from_uint8(np.asarray(pil.convert("RGB")))
            reps.append(RepresentationThumb(img, r["final_loss"], r.get("latent")))
        return CachedStyle(digest, agg, reps, manifest["created_at"], manifest.get("config", {}),
                           manifest.get("spec", {}))

    def evict(self, digest: str) -> bool:
        d = self._dir(digest)
        if not d.exists():
            return False
        shutil.rmtree(d)
        return True

    def entries(self) -> list[dict]:
        """One summary dict per entry (unreadable entries are reported, not raised)."""
        if not self.root.exists():
            return []
        out = []
        for d in sorted(p for p in self.root.iterdir() if p.is_dir()):
            size = sum(f.stat().st_size for f in d.iterdir() if f.is_file())
            try:
                m = self._manifest(d.name)
            except (CacheCorruption, KeyError):
                m = None
            if m is None:
                out.append({"digest": d.name, "refs": "?", "bytes": size, "created_at": "?"})
                continue
            spec = m.get("spec", {})
            refs = [f"T:{t}" for t in spec.get("text", [])] + [f"I:{i}" for i in spec.get("image", [])]
            out.append({"digest": d.name, "refs": ";".join(refs) or "-", "bytes": size,
                        "created_at": m.get("created_at", "?")})
        return out

    def verify(self) -> list[tuple[str, bool, str]]:
        results = []
        for e in self.entries():
            try:
                entry = self._load(e["digest"])
                results.append((e["digest"], entry is not None, "ok" if entry else INCOMPLETE))
            except (CacheCorruption, KeyError) as exc:
                results.append((e["digest"], False, str(exc)))
        return results
