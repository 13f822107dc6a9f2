"""Persistent external memory with hybrid retrieval.

Each agent accumulates two on-disk corpora under its data dir: MEMORY.md, a
curated durable index, and dated daily logs at memory/YYYY-MM-DD.md written
automatically from user prompts and retained 50 days FIFO. Both are labeled
source "memory" in the retrieval store.

Retrieval degrades through three levels:
  1. keyword BM25 + vector cosine, merged as vec*0.7 + fts*0.3 for documents
     found by both paths and score*0.7 for single-path documents;
  2. keyword alone (fts*0.7) when the vector path is unavailable or returns
     nothing above the quality threshold;
  3. a linear token-overlap scan over the raw files when the keyword index
     is unavailable too.

Tokenization is asymmetric: documents are indexed with no stopword
filtering so every term stays retrievable, queries are filtered to cut
noise.
"""

from __future__ import annotations

import math
import re
import sqlite3
import struct
import threading
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Protocol

from .errors import HarnessError
from .tokens import count_tokens

SCHEMA_VERSION = 1
RETENTION_DAYS = 50
MAX_CHUNK_TOKENS = 256
MAX_RESULTS = 100

VEC_WEIGHT = 0.7
FTS_WEIGHT = 0.3
SINGLE_PATH_BASE = 0.7
VECTOR_QUALITY_THRESHOLD = 0.25

BM25_K1 = 1.2
BM25_B = 0.75

_WORD_RE = re.compile(r"[0-9a-z_]+")

_DEFAULT_STOPWORDS: frozenset[str] | None = None


def load_stopwords(path: Path | str | None = None) -> frozenset[str]:
    """Load the query-side stopword list; the bundled ~50-word default otherwise."""
    global _DEFAULT_STOPWORDS
    if path is None:
        if _DEFAULT_STOPWORDS is None:
            bundled = Path(__file__).parent / "data" / "stopwords.txt"
            _DEFAULT_STOPWORDS = _parse_stopwords(bundled.read_text(encoding="utf-8"))
        return _DEFAULT_STOPWORDS
    return _parse_stopwords(Path(path).read_text(encoding="utf-8"))


def _parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def split_chunks(text: str, max_tokens: int = MAX_CHUNK_TOKENS) -> list[str]:
    """Paragraph-delimited chunks, long paragraphs split at the token cap."""
    chunks: list[str] = []
    for para in re.split(r"\n\s*\n", text):
        para = para.strip()
        if not para:
            continue
        if count_tokens(para) <= max_tokens:
            chunks.append(para)
            continue
        # binary cut: max_tokens of ~4 bytes each; split on nearest space
        limit = max_tokens * 4
        rest = para
        while rest:
            if count_tokens(rest) <= max_tokens:
                chunks.append(rest)
                break
            cut = rest.rfind(" ", 1, limit)
            if cut <= 0:
                cut = limit
            chunks.append(rest[:cut].strip())
            rest = rest[cut:].strip()
    return chunks


@dataclass(frozen=True)
class MemoryRecord:
    doc_id: str
    source: str
    file: str
    date: str | None
    chunk: str
    fts_score: float | None
    vec_score: float | None
    merged_score: float


@dataclass(frozen=True)
class RetrievalQuery:
    text: str
    k: int = 10
    source_filter: str = "all"  # memory | session | all

    def __post_init__(self):
        if self.k <= 0 or self.k > MAX_RESULTS:
            raise ValueError(f"k must be in 1..{MAX_RESULTS}, got {self.k}")
        if self.source_filter not in ("memory", "session", "all"):
            raise ValueError(f"unknown source filter {self.source_filter!r}")


@dataclass
class IndexStats:
    files_indexed: int = 0
    chunks: int = 0
    vector_failures: int = 0


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, texts: list[str]) -> list[list[float]]: ...


class HashEmbedding:
    """Deterministic feature-hash embedding; no model, stable across runs."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for token in tokenize(text):
                h = hash_token(token)
                vec[h % self.dim] += 1.0 if (h >> 16) % 2 == 0 else -1.0
            norm = math.sqrt(sum(v * v for v in vec))
            out.append([v / norm for v in vec] if norm else vec)
        return out


def hash_token(token: str) -> int:
    # FNV-1a, kept local so embeddings do not depend on PYTHONHASHSEED
    h = 0x811C9DC5
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 0x01000193) & 0xFFFFFFFF
    return h


def cosine(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def _pack(vec: list[float]) -> bytes:
    return struct.pack(f"<{len(vec)}d", *vec)


def _unpack(blob: bytes) -> list[float]:
    return list(struct.unpack(f"<{len(blob) // 8}d", blob))


class SqliteIndex:
    """On-disk chunk store with an owned BM25 inverted index.

    Shared by agent memory and the wiki corpus (separate database files,
    same machinery). Schema is versioned; a mismatch rebuilds from scratch.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._init_schema()

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path)
        conn.execute("PRAGMA journal_mode=WAL")
        return conn

    def _init_schema(self) -> None:
        with self._lock, self._connect() as conn:
            row = conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' AND name='meta'"
            ).fetchone()
            if row:
                version = conn.execute(
                    "SELECT value FROM meta WHERE key='schema_version'"
                ).fetchone()
                if version and int(version[0]) == SCHEMA_VERSION:
                    return
                for table in ("meta", "files", "chunks", "terms", "embeddings"):
                    conn.execute(f"DROP TABLE IF EXISTS {table}")
            conn.executescript(
                """
                CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT);
                CREATE TABLE files (
                    path TEXT PRIMARY KEY, mtime REAL, source TEXT, date TEXT
                );
                CREATE TABLE chunks (
                    doc_id TEXT PRIMARY KEY, path TEXT, seq INTEGER,
                    source TEXT, date TEXT, content TEXT, nwords INTEGER
                );
                CREATE TABLE terms (term TEXT, doc_id TEXT, tf INTEGER);
                CREATE INDEX terms_term ON terms(term);
                CREATE INDEX chunks_path ON chunks(path);
                CREATE TABLE embeddings (doc_id TEXT PRIMARY KEY, vec BLOB);
                """
            )
            conn.execute(
                "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                (str(SCHEMA_VERSION),),
            )

    def known_files(self) -> dict[str, float]:
        with self._connect() as conn:
            return {
                row[0]: row[1]
                for row in conn.execute("SELECT path, mtime FROM files").fetchall()
            }

    def upsert_file(
        self,
        path: str,
        mtime: float,
        source: str,
        file_date: str | None,
        chunks: list[str],
        embedder: EmbeddingProvider | None = None,
    ) -> tuple[int, int]:
        """Replace a file's chunks; returns (chunk_count, vector_failures)."""
        vec_failures = 0
        vectors: list[bytes | None] = [None] * len(chunks)
        if embedder is not None and chunks:
            try:
                vectors = [_pack(v) for v in embedder.embed(chunks)]
            except Exception:
                vec_failures = len(chunks)
                vectors = [None] * len(chunks)
        with self._lock, self._connect() as conn:
            self._remove_rows(conn, path)
            conn.execute(
                "INSERT INTO files (path, mtime, source, date) VALUES (?,?,?,?)",
                (path, mtime, source, file_date),
            )
            for seq, chunk in enumerate(chunks):
                doc_id = f"{path}#{seq:03d}"
                words = tokenize(chunk)
                conn.execute(
                    "INSERT INTO chunks (doc_id, path, seq, source, date, content, nwords)"
                    " VALUES (?,?,?,?,?,?,?)",
                    (doc_id, path, seq, source, file_date, chunk, len(words)),
                )
                tf: dict[str, int] = {}
                for w in words:
                    tf[w] = tf.get(w, 0) + 1
                conn.executemany(
                    "INSERT INTO terms (term, doc_id, tf) VALUES (?,?,?)",
                    [(term, doc_id, count) for term, count in tf.items()],
                )
                if vectors[seq] is not None:
                    conn.execute(
                        "INSERT INTO embeddings (doc_id, vec) VALUES (?,?)",
                        (doc_id, vectors[seq]),
                    )
        return len(chunks), vec_failures

    def remove_file(self, path: str) -> None:
        with self._lock, self._connect() as conn:
            self._remove_rows(conn, path)

    @staticmethod
    def _remove_rows(conn: sqlite3.Connection, path: str) -> None:
        doc_ids = [
            row[0]
            for row in conn.execute("SELECT doc_id FROM chunks WHERE path=?", (path,))
        ]
        conn.execute("DELETE FROM files WHERE path=?", (path,))
        conn.execute("DELETE FROM chunks WHERE path=?", (path,))
        for doc_id in doc_ids:
            conn.execute("DELETE FROM terms WHERE doc_id=?", (doc_id,))
            conn.execute("DELETE FROM embeddings WHERE doc_id=?", (doc_id,))

    def chunk_rows(self, source_filter: str = "all") -> list[tuple]:
        """(doc_id, path, source, date, content, nwords) rows in scope."""
        query = "SELECT doc_id, path, source, date, content, nwords FROM chunks"
        args: tuple = ()
        if source_filter != "all":
            query += " WHERE source=?"
            args = (source_filter,)
        with self._connect() as conn:
            return conn.execute(query + " ORDER BY doc_id", args).fetchall()

    def bm25(self, query_tokens: list[str], source_filter: str = "all") -> dict[str, float]:
        """Okapi BM25 (k1=1.2, b=0.75, non-negative idf) over chunks in scope."""
        if not query_tokens:
            return {}
        rows = self.chunk_rows(source_filter)
        if not rows:
            return {}
        in_scope = {row[0]: row[5] for row in rows}
        n_docs = len(in_scope)
        avgdl = sum(in_scope.values()) / n_docs if n_docs else 0.0
        scores: dict[str, float] = {}
        with self._connect() as conn:
            for term in set(query_tokens):
                hits = [
                    (doc_id, tf)
                    for doc_id, tf in conn.execute(
                        "SELECT doc_id, tf FROM terms WHERE term=?", (term,)
                    )
                    if doc_id in in_scope
                ]
                if not hits:
                    continue
                df = len(hits)
                idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
                for doc_id, tf in hits:
                    dl = in_scope[doc_id]
                    denom = tf + BM25_K1 * (1 - BM25_B + BM25_B * (dl / avgdl if avgdl else 0.0))
                    scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (BM25_K1 + 1) / denom
        return scores

    def vector_search(
        self, query_vec: list[float], source_filter: str = "all", limit: int = 200
    ) -> dict[str, float]:
        """Cosine similarity clamped to [0, 1] for every embedded chunk in scope."""
        query = (
            "SELECT e.doc_id, e.vec FROM embeddings e JOIN chunks c ON c.doc_id = e.doc_id"
        )
        args: tuple = ()
        if source_filter != "all":
            query += " WHERE c.source=?"
            args = (source_filter,)
        with self._connect() as conn:
            rows = conn.execute(query, args).fetchall()
        scored = {
            doc_id: max(0.0, cosine(query_vec, _unpack(blob))) for doc_id, blob in rows
        }
        top = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))[:limit]
        return dict(top)

    def chunk(self, doc_id: str) -> tuple | None:
        with self._connect() as conn:
            return conn.execute(
                "SELECT doc_id, path, source, date, content, nwords FROM chunks WHERE doc_id=?",
                (doc_id,),
            ).fetchone()


def normalize_scores(raw: dict[str, float]) -> dict[str, float]:
    """Min-max to [0, 1] within the candidate set; all-equal sets map to 1.0."""
    if not raw:
        return {}
    low = min(raw.values())
    high = max(raw.values())
    if high == low:
        return {doc: 1.0 for doc in raw}
    return {doc: (score - low) / (high - low) for doc, score in raw.items()}


def merge_candidates(
    vec: dict[str, float], fts: dict[str, float]
) -> dict[str, tuple[float | None, float | None, float]]:
    """The published merge rule: both paths vec*0.7 + fts*0.3, one path score*0.7.

    Returns doc_id -> (vec_score, fts_score, merged_score).
    """
    merged: dict[str, tuple[float | None, float | None, float]] = {}
    for doc in set(vec) | set(fts):
        v = vec.get(doc)
        f = fts.get(doc)
        if v is not None and f is not None:
            score = v * VEC_WEIGHT + f * FTS_WEIGHT
        elif v is not None:
            score = v * SINGLE_PATH_BASE
        else:
            score = f * SINGLE_PATH_BASE
        merged[doc] = (v, f, score)
    return merged


class MemoryManager:
    """One agent's daily logger, retention policy, index, and hybrid search."""

    def __init__(
        self,
        data_dir: Path | str,
        clock=None,
        stopwords: Iterable[str] | None = None,
        embedding: EmbeddingProvider | None = None,
        keyword_enabled: bool = True,
        vector_enabled: bool = True,
    ):
        self.data_dir = Path(data_dir)
        self.memory_dir = self.data_dir / "memory"
        self.memory_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.embedding = embedding
        self.keyword_enabled = keyword_enabled
        self.vector_enabled = vector_enabled
        self.index = SqliteIndex(self.data_dir / "index" / "memory.db")
        self._dirty_dates: set[str] = set()
        self._dirty_lock = threading.Lock()

    # -- writing ----------------------------------------------------------

    def append_daily_log(self, user_prompt: str, timestamp: float) -> Path:
        """Append exactly the user's prompt to the day's log; marks it dirty."""
        moment = datetime.fromtimestamp(timestamp, tz=timezone.utc)
        day = moment.strftime("%Y-%m-%d")
        path = self.memory_dir / f"{day}.md"
        entry = f"## {moment.strftime('%H:%M:%S')}\n\n{user_prompt}\n\n"
        try:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(entry)
        except OSError as exc:
            raise HarnessError(f"cannot append daily log {path}: {exc}") from exc
        self.mark_dirty(day)
        return path

    def mark_dirty(self, day: str | date) -> None:
        if isinstance(day, date):
            day = day.strftime("%Y-%m-%d")
        with self._dirty_lock:
            self._dirty_dates.add(day)

    def log_files(self) -> list[Path]:
        return sorted(
            p
            for p in self.memory_dir.glob("*.md")
            if re.fullmatch(r"\d{4}-\d{2}-\d{2}", p.stem)
        )

    def enforce_retention(self, today: date | str) -> list[Path]:
        """Delete dated logs older than the 50-day window; purge them from the index."""
        if isinstance(today, str):
            today = date.fromisoformat(today)
        cutoff = today - timedelta(days=RETENTION_DAYS - 1)
        removed = []
        for path in self.log_files():
            file_date = date.fromisoformat(path.stem)
            if file_date < cutoff:
                path.unlink()
                self.index.remove_file(str(path))
                with self._dirty_lock:
                    self._dirty_dates.discard(path.stem)
                removed.append(path)
        return removed

    # -- indexing ---------------------------------------------------------

    def _memory_index_file(self) -> Path:
        return self.data_dir / "MEMORY.md"

    def index_sync(self) -> IndexStats:
        """Reindex dirty and never-indexed files into keyword (+ vector) paths."""
        stats = IndexStats()
        with self._dirty_lock:
            dirty = set(self._dirty_dates)
        known = self.index.known_files()
        jobs: list[tuple[Path, str | None]] = []
        for path in self.log_files():
            if str(path) not in known or path.stem in dirty:
                jobs.append((path, path.stem))
        mem_file = self._memory_index_file()
        if mem_file.exists():
            mtime = mem_file.stat().st_mtime
            if str(mem_file) not in known or known[str(mem_file)] != mtime:
                jobs.append((mem_file, None))
        embedder = self.embedding if (self.embedding and self.vector_enabled) else None
        for path, file_date in jobs:
            chunks = split_chunks(path.read_text(encoding="utf-8"))
            n, failures = self.index.upsert_file(
                str(path), path.stat().st_mtime, "memory", file_date, chunks, embedder
            )
            stats.files_indexed += 1
            stats.chunks += n
            stats.vector_failures += failures
        with self._dirty_lock:
            self._dirty_dates.clear()
        return stats

    # -- retrieval --------------------------------------------------------

    def query_tokens(self, text: str) -> list[str]:
        return [t for t in tokenize(text) if t not in self.stopwords]

    def hybrid_search(self, q: RetrievalQuery) -> list[MemoryRecord]:
        tokens = self.query_tokens(q.text)
        # level 1: vector path live
        if self.embedding is not None and self.vector_enabled:
            vec = self._vector_candidates(q)
            if vec and max(vec.values()) >= VECTOR_QUALITY_THRESHOLD:
                fts = normalize_scores(self._keyword_candidates(tokens, q.source_filter))
                return self._records(merge_candidates(vec, fts), q.k)
        # level 2: keyword alone
        if self.keyword_enabled:
            try:
                raw = self.index.bm25(tokens, q.source_filter)
                fts = normalize_scores(raw)
                return self._records(merge_candidates({}, fts), q.k)
            except Exception:
                pass
        # level 3: token-overlap scan over the raw files
        return self._overlap_scan(tokens, q)

    def _vector_candidates(self, q: RetrievalQuery) -> dict[str, float]:
        try:
            query_vec = self.embedding.embed([q.text])[0]
            return self.index.vector_search(query_vec, q.source_filter)
        except Exception:
            return {}

    def _keyword_candidates(self, tokens: list[str], source_filter: str) -> dict[str, float]:
        if not self.keyword_enabled:
            return {}
        try:
            return self.index.bm25(tokens, source_filter)
        except Exception:
            return {}

    def _records(
        self, merged: dict[str, tuple[float | None, float | None, float]], k: int
    ) -> list[MemoryRecord]:
        ranked = sorted(merged.items(), key=lambda kv: (-kv[1][2], kv[0]))[:k]
        records = []
        for doc_id, (v, f, score) in ranked:
            row = self.index.chunk(doc_id)
            if row is None:
                continue
            records.append(
                MemoryRecord(
                    doc_id=doc_id,
                    source=row[2],
                    file=row[1],
                    date=row[3],
                    chunk=row[4],
                    fts_score=f,
                    vec_score=v,
                    merged_score=score,
                )
            )
        return records

    def _corpus_files(self) -> list[tuple[Path, str | None]]:
        files: list[tuple[Path, str | None]] = []
        mem_file = self._memory_index_file()
        if mem_file.exists():
            files.append((mem_file, None))
        files.extend((p, p.stem) for p in self.log_files())
        return files

    def _overlap_scan(self, tokens: list[str], q: RetrievalQuery) -> list[MemoryRecord]:
        """Last-resort lexical scan straight over the files; overlap-count scored."""
        if not tokens or q.source_filter == "session":
            return []
        wanted = set(tokens)
        hits: list[MemoryRecord] = []
        for path, file_date in self._corpus_files():
            try:
                text = path.read_text(encoding="utf-8")
            except OSError:
                continue
            for seq, chunk in enumerate(split_chunks(text)):
                overlap = len(wanted & set(tokenize(chunk)))
                if overlap == 0:
                    continue
                hits.append(
                    MemoryRecord(
                        doc_id=f"{path}#{seq:03d}",
                        source="memory",
                        file=str(path),
                        date=file_date,
                        chunk=chunk,
                        fts_score=float(overlap),
                        vec_score=None,
                        merged_score=float(overlap),
                    )
                )
        hits.sort(key=lambda r: (-r.merged_score, r.doc_id))
        return hits[: q.k]
