"""Word-embedding tables, phrase vectors, and cosine similarity.

Tables load from the standard whitespace-separated text format
(``word v1 v2 ... vd``).  Out-of-vocabulary tokens map to deterministic
pseudo-random unit vectors so that runs stay reproducible with small
fixture vocabularies.
"""

from __future__ import annotations

import re
from hashlib import sha256

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingError(Exception):
    pass


class EmbeddingParseError(EmbeddingError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


class EmbeddingTable:
    """Case-insensitive word -> vector lookup with a deterministic OOV fallback."""

    def __init__(self, dim: int, entries: dict[str, np.ndarray], fallback_seed: int = 0):
        self.dim = dim
        self.entries = entries
        self.fallback_seed = fallback_seed
        self._oov_cache: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def vector(self, word: str) -> np.ndarray:
        key = word.lower()
        vec = self.entries.get(key)
        if vec is not None:
            return vec
        vec = self._oov_cache.get(key)
        if vec is None:
            vec = self._fallback_vector(key)
            self._oov_cache[key] = vec
        return vec

    def _fallback_vector(self, token: str) -> np.ndarray:
        # Seeded by (fallback_seed, token) through a stable hash so the
        # vector is identical across processes and runs.
        digest = sha256(f"{self.fallback_seed}:{token}".encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec

    def content_hash(self) -> str:
        """Hash of the table contents (dim, words, values)."""
        h = sha256()
        h.update(str(self.dim).encode())
        for word in sorted(self.entries):
            h.update(word.encode("utf-8"))
            h.update(np.ascontiguousarray(self.entries[word]).tobytes())
        return h.hexdigest()


def load_embeddings(path, fallback_seed: int = 0) -> EmbeddingTable:
    """Parse a text embedding file; dimension inferred from the first line."""
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0].lower(), parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingParseError("line has no vector components", line_no)
            elif len(values) != dim:
                raise EmbeddingParseError(
                    f"expected {dim} components, found {len(values)}", line_no)
            try:
                entries[word] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingParseError("non-numeric vector component", line_no) from None
    if dim is None:
        raise EmbeddingParseError("embedding file is empty", 0)
    return EmbeddingTable(dim=dim, entries=entries, fallback_seed=fallback_seed)


def embed_phrase(table: EmbeddingTable, text: str) -> np.ndarray:
    """Mean of the per-token vectors of ``text``."""
    tokens = tokenize(text)
    if not tokens:
        raise EmbeddingError(f"no tokens in text {text!r}")
    acc = np.zeros(table.dim, dtype=np.float64)
    for token in tokens:
        acc += table.vector(token)
    return acc / len(tokens)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
