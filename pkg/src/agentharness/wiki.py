"""User-owned knowledge corpus: a tree of frontmatter-bearing Markdown files.

The files are the corpus. The tree view reflects the filesystem at read
time with no cached index of record, external edits included. The agent's
organize operation touches only the frontmatter — the body is preserved
byte for byte — and entries with no obvious category stage under inbox/.
Content search reuses the keyword machinery of the memory layer over a
wiki-scoped index, kept strictly apart from memory search results.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .clock import WallClock
from .errors import HarnessError, NotFoundError, ValidationError
from .memory import SqliteIndex, load_stopwords, normalize_scores, split_chunks, tokenize

INBOX = "inbox"
_DELIM = b"---\n"
_CLOSE = b"\n---\n"

MAX_SLUG_SUFFIX = 100


def parse_entry(raw: bytes) -> tuple[dict, bytes]:
    """Split a file into (frontmatter dict, body bytes).

    The body is the exact byte run after the closing delimiter; files
    without a parseable frontmatter block are all body.
    """
    if raw.startswith(_DELIM):
        end = raw.find(_CLOSE, len(_DELIM))
        if end != -1:
            meta_bytes = raw[len(_DELIM) : end]
            try:
                meta = yaml.safe_load(meta_bytes.decode("utf-8")) or {}
                if isinstance(meta, dict):
                    return meta, raw[end + len(_CLOSE) :]
            except (yaml.YAMLError, UnicodeDecodeError):
                pass
    return {}, raw


def serialize_entry(meta: dict, body: bytes) -> bytes:
    header = yaml.safe_dump(meta, sort_keys=False, allow_unicode=True).encode("utf-8")
    return _DELIM + header + _CLOSE[1:] + body


def slugify(title: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", title.lower()).strip("-")
    return slug or "entry"


@dataclass(frozen=True)
class WikiHit:
    path: str  # relative to the wiki root
    snippet: str
    score: float
    tags: tuple[str, ...]


class WikiStore:
    """One agent's wiki root plus its content index."""

    def __init__(
        self,
        root: Path | str,
        clock=None,
        index_path: Path | str | None = None,
        stopwords=None,
    ):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / INBOX).mkdir(exist_ok=True)
        self.clock = clock or WallClock()
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.index = SqliteIndex(index_path or self.root.parent / "index" / "wiki.db")
        self._lock = threading.Lock()

    # -- path discipline ----------------------------------------------------

    def _safe(self, rel: str | Path) -> Path:
        candidate = (self.root / rel).resolve()
        if candidate != self.root and self.root not in candidate.parents:
            raise ValidationError(f"path {rel!r} escapes the wiki root")
        return candidate

    def _atomic_write(self, path: Path, data: bytes) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)

    # -- tree ------------------------------------------------------------------

    def inspect_tree(self) -> dict:
        """Nested live listing: categories, entries, per-entry tags."""

        def walk(directory: Path) -> dict:
            node = {"name": directory.name if directory != self.root else "", "categories": [], "entries": []}
            for child in sorted(directory.iterdir(), key=lambda p: p.name):
                if child.name.startswith(".") or child.name.endswith(".tmp"):
                    continue
                if child.is_dir():
                    node["categories"].append(walk(child))
                elif child.suffix == ".md":
                    meta, _ = parse_entry(child.read_bytes())
                    node["entries"].append(
                        {
                            "name": child.name,
                            "path": str(child.relative_to(self.root)),
                            "tags": [str(t) for t in (meta.get("tags") or [])],
                        }
                    )
            return node

        return walk(self.root)

    def create_category(self, rel: str) -> Path:
        if not str(rel).strip():
            raise ValidationError("category path cannot be empty")
        path = self._safe(rel)
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -- writing -----------------------------------------------------------------

    def _unique_path(self, directory: Path, slug: str) -> Path:
        candidate = directory / f"{slug}.md"
        if not candidate.exists():
            return candidate
        for n in range(2, MAX_SLUG_SUFFIX + 1):
            candidate = directory / f"{slug}-{n}.md"
            if not candidate.exists():
                return candidate
        raise HarnessError(f"more than {MAX_SLUG_SUFFIX} entries collide on slug {slug!r}")

    def save_entry(
        self,
        title: str,
        body: str,
        tags: list[str] | None = None,
        category: str | None = None,
    ) -> Path:
        """Write an agent-authored entry; no category stages it under inbox/."""
        if not body:
            raise ValidationError("entry body cannot be empty")
        directory = self.create_category(category) if category else self.root / INBOX
        path = self._unique_path(directory, slugify(title))
        meta = {
            "tags": [str(t) for t in (tags or [])],
            "source": "agent",
            "created": datetime.fromtimestamp(self.clock.now(), tz=timezone.utc).isoformat(),
        }
        with self._lock:
            self._atomic_write(path, serialize_entry(meta, body.encode("utf-8")))
        return path

    def organize_file(
        self, source_file: Path | str, category: str, tags: list[str] | None = None
    ) -> Path:
        """Copy a file into a category, touching only the frontmatter.

        The body is carried through byte-identical; a source with no
        frontmatter becomes the body of a fresh frontmatter block unchanged.
        """
        source = Path(source_file)
        try:
            raw = source.read_bytes()
        except OSError as exc:
            raise HarnessError(f"cannot read {source}: {exc}") from exc
        meta, body = parse_entry(raw)
        existing = [str(t) for t in (meta.get("tags") or [])]
        for tag in tags or []:
            if str(tag) not in existing:
                existing.append(str(tag))
        meta["tags"] = existing
        meta.setdefault("source", "user")
        meta.setdefault(
            "created", datetime.fromtimestamp(self.clock.now(), tz=timezone.utc).isoformat()
        )
        directory = self.create_category(category)
        path = self._unique_path(directory, slugify(source.stem))
        with self._lock:
            self._atomic_write(path, serialize_entry(meta, body))
        return path

    # -- gateway editing surface ------------------------------------------------

    def read_entry(self, rel: str) -> bytes:
        path = self._safe(rel)
        if not path.is_file():
            raise NotFoundError(f"no wiki entry at {rel!r}")
        return path.read_bytes()

    def write_entry(self, rel: str, content: bytes) -> Path:
        path = self._safe(rel)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            self._atomic_write(path, content)
        return path

    def move_entry(self, src: str, dst: str) -> Path:
        source = self._safe(src)
        if not source.is_file():
            raise NotFoundError(f"no wiki entry at {src!r}")
        target = self._safe(dst)
        target.parent.mkdir(parents=True, exist_ok=True)
        source.replace(target)
        return target

    # -- retrieval ------------------------------------------------------------------

    def entry_files(self) -> list[Path]:
        return sorted(
            p
            for p in self.root.rglob("*.md")
            if not p.name.endswith(".tmp") and not p.name.startswith(".")
        )

    def index_sync(self) -> int:
        """Refresh the wiki-scoped keyword index from the files; returns file count."""
        known = self.index.known_files()
        seen = set()
        synced = 0
        for path in self.entry_files():
            key = str(path)
            seen.add(key)
            mtime = path.stat().st_mtime
            if known.get(key) == mtime:
                continue
            meta, body = parse_entry(path.read_bytes())
            text = body.decode("utf-8", errors="replace")
            tags = " ".join(str(t) for t in (meta.get("tags") or []))
            chunks = split_chunks(text if not tags else f"{tags}\n\n{text}")
            self.index.upsert_file(key, mtime, "wiki", None, chunks)
            synced += 1
        for stale in set(known) - seen:
            self.index.remove_file(stale)
        return synced

    def _entry_tags(self, path: Path) -> tuple[str, ...]:
        meta, _ = parse_entry(path.read_bytes())
        return tuple(str(t) for t in (meta.get("tags") or []))

    def search(
        self,
        query: str | None = None,
        tags: list[str] | None = None,
        k: int = 10,
    ) -> list[WikiHit]:
        """Corpus-only search: content query, tag filter, or both."""
        if not query and not tags:
            raise ValueError("wiki search needs a content query or a tag filter")
        if k <= 0:
            raise ValueError("k must be positive")
        tag_set = {str(t) for t in (tags or [])}
        if query:
            query_tokens = [t for t in tokenize(query) if t not in self.stopwords]
            raw = self.index.bm25(query_tokens, "wiki")
            per_file: dict[str, float] = {}
            for doc_id, score in normalize_scores(raw).items():
                file_path = doc_id.rsplit("#", 1)[0]
                per_file[file_path] = max(per_file.get(file_path, 0.0), score)
            hits = []
            for file_path, score in sorted(per_file.items(), key=lambda kv: (-kv[1], kv[0])):
                path = Path(file_path)
                if not path.exists():
                    continue
                entry_tags = self._entry_tags(path)
                if tag_set and not tag_set.issubset(set(entry_tags)):
                    continue
                _, body = parse_entry(path.read_bytes())
                snippet = body.decode("utf-8", errors="replace").strip()[:160]
                hits.append(
                    WikiHit(
                        path=str(path.relative_to(self.root)),
                        snippet=snippet,
                        score=score,
                        tags=entry_tags,
                    )
                )
            return hits[:k]
        # tag-only: live scan, path order
        hits = []
        for path in self.entry_files():
            entry_tags = self._entry_tags(path)
            if tag_set.issubset(set(entry_tags)):
                _, body = parse_entry(path.read_bytes())
                hits.append(
                    WikiHit(
                        path=str(path.relative_to(self.root)),
                        snippet=body.decode("utf-8", errors="replace").strip()[:160],
                        score=1.0,
                        tags=entry_tags,
                    )
                )
        return hits[:k]
