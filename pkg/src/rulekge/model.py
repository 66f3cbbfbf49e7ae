"""Complex-valued entity/relation embeddings and the bilinear triple score.

Each entity and relation owns a d-dimensional complex vector, stored as
parallel real and imaginary float64 matrices. A triple (h, r, t) is scored
by the real part of the three-way Hermitian product of head, relation, and
conjugated tail; a sigmoid maps the score to a truth value in (0, 1).

Reads may run concurrently; updates require exclusive access.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .kg import Triple

CHECKPOINT_FORMAT_VERSION = 1

# Truth values are clamped to the widest open float64 interval so that
# downstream truth-value algebra never sees an exact 0 or 1.
_TRUTH_LO = np.nextafter(0.0, 1.0)
_TRUTH_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    """Numerically stable logistic function for floats or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


class ComplexEmbeddings:
    """The full parameter set: complex vectors for all entities and relations.

    Attributes
    ----------
    entity_re, entity_im: float64 arrays, shape (n_entities, dim)
    relation_re, relation_im: float64 arrays, shape (n_relations, dim)
    """

    def __init__(self, entity_re, entity_im, relation_re, relation_im):
        self.entity_re = np.asarray(entity_re, dtype=np.float64)
        self.entity_im = np.asarray(entity_im, dtype=np.float64)
        self.relation_re = np.asarray(relation_re, dtype=np.float64)
        self.relation_im = np.asarray(relation_im, dtype=np.float64)
        if self.entity_re.shape != self.entity_im.shape or self.relation_re.shape != self.relation_im.shape:
            raise ValueError("real/imaginary shapes disagree")
        if self.entity_re.shape[1] != self.relation_re.shape[1]:
            raise ValueError("entity and relation dimensionality disagree")

    @classmethod
    def init_random(
        cls,
        n_entities: int,
        n_relations: int,
        dim: int,
        seed: int | np.random.Generator,
        scale: float = 0.1,
    ) -> "ComplexEmbeddings":
        """Uniform init in [-scale, scale] per real/imaginary entry.

        Deterministic for a fixed integer seed; pass a Generator to share a
        random stream with a caller.
        """
        if n_entities < 1 or n_relations < 1 or dim < 1:
            raise ValueError("n_entities, n_relations, and dim must be positive")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        u = lambda n: rng.uniform(-scale, scale, size=(n, dim))
        return cls(u(n_entities), u(n_entities), u(n_relations), u(n_relations))

    # -- shape queries ---------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return self.entity_re.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_re.shape[0]

    @property
    def dim(self) -> int:
        return self.entity_re.shape[1]

    def copy(self) -> "ComplexEmbeddings":
        return ComplexEmbeddings(
            self.entity_re.copy(), self.entity_im.copy(),
            self.relation_re.copy(), self.relation_im.copy(),
        )

    def all_finite(self) -> bool:
        return all(
            np.isfinite(m).all()
            for m in (self.entity_re, self.entity_im, self.relation_re, self.relation_im)
        )

    # -- scoring ---------------------------------------------------------------

    def scores(self, triples: np.ndarray) -> np.ndarray:
        """Bilinear scores for an (n, 3) array of (head, relation, tail) ids.

        Equals Re(sum_m head_m * rel_m * conj(tail_m)) per row, computed in
        real arithmetic.
        """
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        h_re, h_im = self.entity_re[arr[:, 0]], self.entity_im[arr[:, 0]]
        r_re, r_im = self.relation_re[arr[:, 1]], self.relation_im[arr[:, 1]]
        t_re, t_im = self.entity_re[arr[:, 2]], self.entity_im[arr[:, 2]]
        return (
            (h_re * r_re - h_im * r_im) * t_re + (h_re * r_im + h_im * r_re) * t_im
        ).sum(axis=1)

    def score(self, t: Triple) -> float:
        """Score of a single triple."""
        return float(self.scores(np.array([t], dtype=np.int64))[0])

    def truths(self, triples: np.ndarray) -> np.ndarray:
        """Sigmoid-mapped scores, clamped to the open interval (0, 1)."""
        return np.clip(sigmoid(self.scores(triples)), _TRUTH_LO, _TRUTH_HI)

    def truth(self, t: Triple) -> float:
        return float(self.truths(np.array([t], dtype=np.int64))[0])

    def score_all_heads(self, relation: int, tail: int) -> np.ndarray:
        """Scores of (e, relation, tail) for every entity e, as one vector."""
        r_re, r_im = self.relation_re[relation], self.relation_im[relation]
        t_re, t_im = self.entity_re[tail], self.entity_im[tail]
        return self.entity_re @ (r_re * t_re + r_im * t_im) + self.entity_im @ (
            r_re * t_im - r_im * t_re
        )

    def score_all_tails(self, head: int, relation: int) -> np.ndarray:
        """Scores of (head, relation, e) for every entity e, as one vector."""
        h_re, h_im = self.entity_re[head], self.entity_im[head]
        r_re, r_im = self.relation_re[relation], self.relation_im[relation]
        return self.entity_re @ (h_re * r_re - h_im * r_im) + self.entity_im @ (
            h_re * r_im + h_im * r_re
        )

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """Write a checkpoint; the four matrices round-trip bit-exactly.

        ``meta`` is merged into the header next to the format version and
        shape fields (callers add vocabulary hashes and config snapshots).
        """
        header = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "dim": self.dim,
        }
        if meta:
            header.update(meta)
        with open(path, "wb") as f:
            np.savez(
                f,
                meta=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
                entity_re=self.entity_re,
                entity_im=self.entity_im,
                relation_re=self.relation_re,
                relation_im=self.relation_im,
            )

    @classmethod
    def load(cls, path: str | Path) -> tuple["ComplexEmbeddings", dict]:
        """Read a checkpoint, returning the embeddings and the header dict."""
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint format version {meta.get('format_version')!r}"
                )
            emb = cls(
                data["entity_re"], data["entity_im"],
                data["relation_re"], data["relation_im"],
            )
        expected = (meta["n_entities"], meta["n_relations"], meta["dim"])
        actual = (emb.n_entities, emb.n_relations, emb.dim)
        if expected != actual:
            raise ValueError(f"checkpoint header {expected} does not match arrays {actual}")
        return emb, meta
