"""Triple store: interned vocabularies, observed-set indexing, split handling.

Entities and relations are interned to dense integer ids in first-appearance
order, so the same input files always produce the same vocabulary and the
same triple ids. The observed (training) triple set is kept both as an
ordered list for batching and as a hash set for O(1) membership; a
per-relation index feeds the rule grounder, and a train/valid/test filter
index feeds the filtered ranking evaluator.

All structures are immutable after construction and safe for concurrent
read-only access.
"""

from __future__ import annotations

import hashlib
import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Entity and relation ids are plain ints, contiguous from 0.
EntityId = int
RelationId = int


class Triple(NamedTuple):
    """A (head, relation, tail) edge with dense integer ids."""

    head: EntityId
    relation: RelationId
    tail: EntityId


class TripleFileError(ValueError):
    """A triple file violates the tab-separated grammar."""


class Vocabulary:
    """Bidirectional mapping between surface strings and dense ids.

    Ids are assigned in first-appearance order, starting at 0, and every id
    maps to exactly one string and back.
    """

    def __init__(self, names: Iterable[str] = ()):
        self._id_of: dict[str, int] = {}
        self._name_of: list[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        """Return the id for ``name``, assigning the next free id if new."""
        idx = self._id_of.get(name)
        if idx is None:
            idx = len(self._name_of)
            self._id_of[name] = idx
            self._name_of.append(name)
        return idx

    def id_of(self, name: str) -> int:
        return self._id_of[name]

    def name_of(self, idx: int) -> str:
        return self._name_of[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._id_of

    def __len__(self) -> int:
        return len(self._name_of)

    def __iter__(self):
        return iter(self._name_of)

    def sha256(self) -> str:
        """Digest of the full vocabulary in id order (checkpoint guard)."""
        h = hashlib.sha256()
        for name in self._name_of:
            h.update(name.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def load_triples(
    path: str | Path,
    entities: Vocabulary,
    relations: Vocabulary,
    vocab_mode: str = "extend",
) -> list[Triple]:
    """Read a tab-separated triple file and intern it against the vocabularies.

    Each non-comment line must contain exactly three non-empty fields
    separated by single tab characters: head, relation, tail. Lines starting
    with '#' are ignored. Duplicate triples are dropped (first occurrence
    wins) and counted in a single warning.

    Parameters
    ----------
    path:
        UTF-8 text file, one triple per line.
    entities, relations:
        Vocabularies to intern into. In "extend" mode unknown symbols are
        added; in "frozen" mode they raise :class:`TripleFileError`.

    Returns
    -------
    list of Triple in file order, deduplicated.
    """
    if vocab_mode not in ("extend", "frozen"):
        raise ValueError(f"vocab_mode must be 'extend' or 'frozen', got {vocab_mode!r}")
    path = Path(path)
    triples: list[Triple] = []
    seen: set[Triple] = set()
    n_dup = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise TripleFileError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            h, r, t = fields
            if vocab_mode == "frozen":
                for sym, vocab, kind in ((h, entities, "entity"), (r, relations, "relation"), (t, entities, "entity")):
                    if sym not in vocab:
                        raise TripleFileError(f"{path}:{lineno}: unknown {kind} {sym!r}")
                triple = Triple(entities.id_of(h), relations.id_of(r), entities.id_of(t))
            else:
                triple = Triple(entities.intern(h), relations.intern(r), entities.intern(t))
            if triple in seen:
                n_dup += 1
                continue
            seen.add(triple)
            triples.append(triple)
    if n_dup:
        logger.warning("%s: dropped %d duplicate triple(s)", path, n_dup)
    return triples


def write_triples(path: str | Path, triples: Iterable[Triple], kg: "KnowledgeGraph") -> None:
    """Serialize triples back to the tab-separated surface form."""
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            f.write(
                f"{kg.entities.name_of(t.head)}\t"
                f"{kg.relations.name_of(t.relation)}\t"
                f"{kg.entities.name_of(t.tail)}\n"
            )


class KnowledgeGraph:
    """Interned vocabularies plus the indexed observed triple set.

    ``train`` is the observed set used for learning; ``valid`` and ``test``
    only contribute to the filter index used by the ranking evaluator.

    Attributes
    ----------
    entities, relations: Vocabulary
    train, valid, test: list of Triple
    observed: frozenset of Triple
        The training triples (the positive set).
    by_relation: dict relation id -> list of (head, tail)
        Insertion-ordered instance lists, used by the rule grounder.
    filter_index: frozenset of Triple
        Union of all three splits.
    """

    def __init__(
        self,
        entities: Vocabulary,
        relations: Vocabulary,
        train: Sequence[Triple],
        valid: Sequence[Triple] = (),
        test: Sequence[Triple] = (),
    ):
        self.entities = entities
        self.relations = relations
        self.train = list(train)
        self.valid = list(valid)
        self.test = list(test)
        self.observed = frozenset(self.train)
        self.filter_index = frozenset().union(self.observed, self.valid, self.test)

        by_relation: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for h, r, t in self.train:
            by_relation[r].append((h, t))
        self.by_relation = dict(by_relation)

        known_heads: dict[tuple[int, int], set[int]] = defaultdict(set)
        known_tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        for h, r, t in self.filter_index:
            known_heads[(r, t)].add(h)
            known_tails[(h, r)].add(t)
        self._known_heads = dict(known_heads)
        self._known_tails = dict(known_tails)

        # Packed int64 keys for vectorized membership tests during negative
        # sampling; falls back to set lookups if the id space would overflow.
        n_e, n_r = len(entities), len(relations)
        if n_e and n_r and n_e * n_r * n_e < 2**62:
            self._key_stride = (n_r * n_e, n_e)
            keys = self.encode_triples(np.asarray(self.train, dtype=np.int64))
            self._observed_keys = np.sort(keys)
        else:
            self._key_stride = None
            self._observed_keys = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_files(
        cls,
        train_path: str | Path,
        valid_path: str | Path | None = None,
        test_path: str | Path | None = None,
    ) -> "KnowledgeGraph":
        """Load splits from triple files; the training file defines id order.

        Validation/test entities or relations missing from the training file
        are appended to the vocabularies after all training symbols.
        """
        entities, relations = Vocabulary(), Vocabulary()
        train = load_triples(train_path, entities, relations, "extend")
        valid = load_triples(valid_path, entities, relations, "extend") if valid_path else []
        test = load_triples(test_path, entities, relations, "extend") if test_path else []
        return cls(entities, relations, train, valid, test)

    @classmethod
    def from_string_triples(
        cls,
        train: Iterable[tuple[str, str, str]],
        valid: Iterable[tuple[str, str, str]] = (),
        test: Iterable[tuple[str, str, str]] = (),
    ) -> "KnowledgeGraph":
        """Build a graph directly from string triples (tests, synthetic data)."""
        entities, relations = Vocabulary(), Vocabulary()

        def intern_all(rows):
            out, seen = [], set()
            for h, r, t in rows:
                triple = Triple(entities.intern(h), relations.intern(r), entities.intern(t))
                if triple not in seen:
                    seen.add(triple)
                    out.append(triple)
            return out

        return cls(entities, relations, intern_all(train), intern_all(valid), intern_all(test))

    # -- queries --------------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def contains(self, t: Triple) -> bool:
        """True iff ``t`` is an observed (training) triple."""
        return t in self.observed

    def in_filter(self, t: Triple) -> bool:
        """True iff ``t`` appears in any split."""
        return t in self.filter_index

    def known_heads(self, relation: RelationId, tail: EntityId) -> set[int]:
        """Head entities h with (h, relation, tail) in any split."""
        return self._known_heads.get((relation, tail), set())

    def known_tails(self, head: EntityId, relation: RelationId) -> set[int]:
        """Tail entities t with (head, relation, t) in any split."""
        return self._known_tails.get((head, relation), set())

    def triple_names(self, t: Triple) -> tuple[str, str, str]:
        return (
            self.entities.name_of(t.head),
            self.relations.name_of(t.relation),
            self.entities.name_of(t.tail),
        )

    def vocab_hashes(self) -> tuple[str, str]:
        return self.entities.sha256(), self.relations.sha256()

    # -- vectorized membership (negative sampling support) --------------------

    def encode_triples(self, triples: np.ndarray) -> np.ndarray:
        """Pack an (n, 3) id array into int64 keys. Requires packed key support."""
        if self._key_stride is None:
            raise ValueError("id space too large for packed keys")
        sr, se = self._key_stride
        arr = np.asarray(triples, dtype=np.int64)
        return arr[:, 0] * sr + arr[:, 1] * se + arr[:, 2]

    def observed_mask(self, triples: np.ndarray) -> np.ndarray:
        """Boolean mask of which rows of an (n, 3) id array are observed."""
        arr = np.asarray(triples, dtype=np.int64)
        if self._observed_keys is not None:
            keys = self.encode_triples(arr)
            idx = np.searchsorted(self._observed_keys, keys)
            idx_clipped = np.minimum(idx, len(self._observed_keys) - 1)
            return (idx < len(self._observed_keys)) & (self._observed_keys[idx_clipped] == keys)
        return np.fromiter(
            (Triple(*row) in self.observed for row in arr.tolist()),
            dtype=bool,
            count=len(arr),
        )
