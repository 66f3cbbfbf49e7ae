"""Embedding rectification and the outer training loop.

Each iteration takes one mini-batch of positives, corrupts them into
negatives under the local closed world assumption, matches the groundings
whose premises all sit inside the batch, predicts soft labels for their
conclusions, and then updates the embeddings by AdaGrad on a cross-entropy
loss over both the hard-labeled and the soft-labeled triples.

Only embedding rows referenced by a batch are touched by its update, and L2
regularization is likewise restricted to those rows by default (a dense mode
exists behind a config flag), keeping the per-iteration cost linear in the
batch size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .evaluation import evaluate
from .kg import KnowledgeGraph, Triple
from .model import ComplexEmbeddings, sigmoid
from .rules import Grounding, GroundingIndex, Rule
from .softlabels import predict_soft_labels

logger = logging.getLogger(__name__)


class LabeledExample(NamedTuple):
    triple: Triple
    label: int


class TrainingAbort(RuntimeError):
    """Raised when an update produces non-finite gradients."""


@dataclass
class TrainConfig:
    """Hyperparameters for the iterative training procedure.

    ``l2`` is the embedding regularization coefficient, distinct from the
    per-rule confidences. ``grad_norm`` selects the gradient normalization
    mode: "row" rescales each embedding row's gradient to unit L2 norm when
    it exceeds 1, "global" rescales the whole batch gradient, "none"
    disables normalization.
    """

    dim: int = 100
    neg_ratio: int = 10
    learning_rate: float = 0.5
    l2: float = 0.01
    slack_penalty: float = 0.01
    inner_epochs: int = 1
    n_batches: int = 100
    max_epochs: int = 1000
    eval_every: int = 50
    patience: int = 3
    seed: int = 0
    grad_norm: str = "row"
    init_scale: float = 0.1
    adagrad_eps: float = 1e-8
    dense_l2: bool = False

    def validate(self) -> None:
        if self.dim < 1 or self.neg_ratio < 1 or self.max_epochs < 1:
            raise ValueError("dim, neg_ratio, and max_epochs must be >= 1")
        if self.learning_rate < 0 or self.slack_penalty < 0 or self.l2 < 0:
            raise ValueError("learning_rate, slack_penalty, and l2 must be >= 0")
        if self.inner_epochs < 1 or self.n_batches < 1:
            raise ValueError("inner_epochs and n_batches must be >= 1")
        if self.grad_norm not in ("row", "global", "none"):
            raise ValueError(f"unknown grad_norm mode {self.grad_norm!r}")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")


# -- negative sampling ----------------------------------------------------------


def _corrupt_batch(
    positives: np.ndarray,
    kg: KnowledgeGraph,
    n_per_positive: int,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> np.ndarray:
    """Corrupt head or tail (fair coin) with a uniform entity != original.

    Candidates observed in the training set are rejected and redrawn up to
    ``max_retries`` rounds; survivors are then accepted with a warning, which
    only matters on degenerate tiny graphs.
    """
    base = np.repeat(np.asarray(positives, dtype=np.int64).reshape(-1, 3), n_per_positive, axis=0)
    out = base.copy()
    n_e = kg.n_entities
    pending = np.arange(len(out))
    for _ in range(max_retries):
        if len(pending) == 0:
            break
        corrupt_head = rng.random(len(pending)) < 0.5
        slot = np.where(corrupt_head, 0, 2)
        original = base[pending, slot]
        # Uniform over all entities except the original: draw from n_e - 1
        # values and shift past the original.
        replacement = rng.integers(0, n_e - 1, size=len(pending))
        replacement += replacement >= original
        candidate = base[pending].copy()
        candidate[np.arange(len(pending)), slot] = replacement
        rejected = kg.observed_mask(candidate)
        out[pending] = candidate
        pending = pending[rejected]
    if len(pending):
        logger.warning(
            "accepted %d observed triples as negatives after %d retries",
            len(pending), max_retries,
        )
    return out


def sample_negatives(
    positive: Triple,
    kg: KnowledgeGraph,
    n: int,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> list[LabeledExample]:
    """Draw ``n`` corrupted copies of one positive, labeled 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = _corrupt_batch(np.array([positive], dtype=np.int64), kg, n, rng, max_retries)
    return [LabeledExample(Triple(*row), 0) for row in rows.tolist()]


# -- loss and gradients ----------------------------------------------------------


@dataclass
class SparseGradient:
    """Per-row gradients restricted to the rows a batch touches."""

    entity_ids: np.ndarray
    entity_re: np.ndarray
    entity_im: np.ndarray
    relation_ids: np.ndarray
    relation_re: np.ndarray
    relation_im: np.ndarray

    def blocks(self):
        yield self.entity_re
        yield self.entity_im
        yield self.relation_re
        yield self.relation_im

    def all_finite(self) -> bool:
        return all(np.isfinite(b).all() for b in self.blocks())


def _segment_sum(values: np.ndarray, inverse: np.ndarray, n_groups: int) -> np.ndarray:
    """Sum (n, d) rows into (n_groups, d) groups; every group must be non-empty."""
    order = np.argsort(inverse, kind="stable")
    boundaries = np.searchsorted(inverse[order], np.arange(n_groups))
    return np.add.reduceat(values[order], boundaries, axis=0)


def _assemble(
    batch_l: Sequence[LabeledExample],
    batch_u: Sequence[tuple[Triple, float]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack both loss terms into (triples, targets, per-example weights)."""
    if not batch_l:
        raise ValueError("labeled batch must be non-empty")
    triples = np.array(
        [ex.triple for ex in batch_l] + [t for t, _ in batch_u], dtype=np.int64
    )
    targets = np.array(
        [float(ex.label) for ex in batch_l] + [s for _, s in batch_u]
    )
    weights = np.concatenate([
        np.full(len(batch_l), 1.0 / len(batch_l)),
        np.full(len(batch_u), 1.0 / len(batch_u)) if batch_u else np.empty(0),
    ])
    return triples, targets, weights


def _loss_and_grad(
    emb: ComplexEmbeddings,
    triples: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    l2: float,
    dense_l2: bool = False,
    need_grad: bool = True,
) -> tuple[float, SparseGradient | None]:
    """Weighted cross-entropy over scores plus L2 on the touched rows.

    The data term is computed from the raw scores via log(1 + exp(eta)) -
    y * eta, which is exact cross-entropy between sigmoid(eta) and target y
    and stays finite for any score.
    """
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    h_re, h_im = emb.entity_re[h], emb.entity_im[h]
    r_re, r_im = emb.relation_re[r], emb.relation_im[r]
    t_re, t_im = emb.entity_re[t], emb.entity_im[t]

    eta = ((h_re * r_re - h_im * r_im) * t_re + (h_re * r_im + h_im * r_re) * t_im).sum(axis=1)
    loss = float(np.sum(weights * (np.logaddexp(0.0, eta) - targets * eta)))

    touched_ent, ent_inv = np.unique(np.concatenate([h, t]), return_inverse=True)
    touched_rel, rel_inv = np.unique(r, return_inverse=True)
    # Regularization covers the touched rows only, unless dense mode widens
    # it to the whole parameter set.
    ent_ids = np.arange(emb.n_entities) if dense_l2 else touched_ent
    rel_ids = np.arange(emb.n_relations) if dense_l2 else touched_rel
    loss += l2 * float(
        np.sum(emb.entity_re[ent_ids] ** 2) + np.sum(emb.entity_im[ent_ids] ** 2)
        + np.sum(emb.relation_re[rel_ids] ** 2) + np.sum(emb.relation_im[rel_ids] ** 2)
    )
    if not need_grad:
        return loss, None

    dl_deta = (weights * (sigmoid(eta) - targets))[:, None]
    gh_re = dl_deta * (r_re * t_re + r_im * t_im)
    gh_im = dl_deta * (r_re * t_im - r_im * t_re)
    gr_re = dl_deta * (h_re * t_re + h_im * t_im)
    gr_im = dl_deta * (h_re * t_im - h_im * t_re)
    gt_re = dl_deta * (h_re * r_re - h_im * r_im)
    gt_im = dl_deta * (h_re * r_im + h_im * r_re)

    ent_grad_re = _segment_sum(np.vstack([gh_re, gt_re]), ent_inv, len(touched_ent))
    ent_grad_im = _segment_sum(np.vstack([gh_im, gt_im]), ent_inv, len(touched_ent))
    rel_grad_re = _segment_sum(gr_re, rel_inv, len(touched_rel))
    rel_grad_im = _segment_sum(gr_im, rel_inv, len(touched_rel))

    if dense_l2:
        full_ent_re = np.zeros((emb.n_entities, emb.dim))
        full_ent_im = np.zeros((emb.n_entities, emb.dim))
        full_ent_re[touched_ent] = ent_grad_re
        full_ent_im[touched_ent] = ent_grad_im
        full_rel_re = np.zeros((emb.n_relations, emb.dim))
        full_rel_im = np.zeros((emb.n_relations, emb.dim))
        full_rel_re[touched_rel] = rel_grad_re
        full_rel_im[touched_rel] = rel_grad_im
        ent_grad_re, ent_grad_im = full_ent_re, full_ent_im
        rel_grad_re, rel_grad_im = full_rel_re, full_rel_im

    ent_grad_re += 2.0 * l2 * emb.entity_re[ent_ids]
    ent_grad_im += 2.0 * l2 * emb.entity_im[ent_ids]
    rel_grad_re += 2.0 * l2 * emb.relation_re[rel_ids]
    rel_grad_im += 2.0 * l2 * emb.relation_im[rel_ids]

    return loss, SparseGradient(ent_ids, ent_grad_re, ent_grad_im, rel_ids, rel_grad_re, rel_grad_im)


def rectification_loss(
    batch_l: Sequence[LabeledExample],
    batch_u: Sequence[tuple[Triple, float]],
    emb: ComplexEmbeddings,
    l2: float,
    dense_l2: bool = False,
) -> float:
    """Mean cross-entropy over hard labels plus mean over soft labels plus L2.

    An empty soft-labeled batch drops its term entirely.
    """
    triples, targets, weights = _assemble(batch_l, batch_u)
    loss, _ = _loss_and_grad(emb, triples, targets, weights, l2, dense_l2, need_grad=False)
    return loss


def _normalize_gradient(grad: SparseGradient, mode: str) -> None:
    """Clip-style normalization, in place.

    Row mode treats each embedding row's (re, im) pair as one vector and
    rescales it to unit norm when its norm exceeds 1; global mode does the
    same for the concatenation of everything.
    """
    if mode == "none":
        return
    if mode == "row":
        for g_re, g_im in ((grad.entity_re, grad.entity_im), (grad.relation_re, grad.relation_im)):
            norms = np.sqrt((g_re**2).sum(axis=1) + (g_im**2).sum(axis=1))
            scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)[:, None]
            g_re *= scale
            g_im *= scale
    elif mode == "global":
        total = np.sqrt(sum(float((b**2).sum()) for b in grad.blocks()))
        if total > 1.0:
            for b in grad.blocks():
                b *= 1.0 / total
    else:
        raise ValueError(f"unknown grad_norm mode {mode!r}")


class AdaGradState:
    """Accumulated squared gradients, one cell per embedding parameter."""

    def __init__(self, n_entities: int, n_relations: int, dim: int, eps: float = 1e-8):
        self.entity_re = np.zeros((n_entities, dim))
        self.entity_im = np.zeros((n_entities, dim))
        self.relation_re = np.zeros((n_relations, dim))
        self.relation_im = np.zeros((n_relations, dim))
        self.eps = eps

    def apply(self, emb: ComplexEmbeddings, grad: SparseGradient, lr: float) -> None:
        """One AdaGrad step on the rows present in ``grad``."""
        updates = (
            (self.entity_re, emb.entity_re, grad.entity_ids, grad.entity_re),
            (self.entity_im, emb.entity_im, grad.entity_ids, grad.entity_im),
            (self.relation_re, emb.relation_re, grad.relation_ids, grad.relation_re),
            (self.relation_im, emb.relation_im, grad.relation_ids, grad.relation_im),
        )
        for acc, param, ids, g in updates:
            acc[ids] += g**2
            param[ids] -= lr * g / np.sqrt(acc[ids] + self.eps)


def _rectify_arrays(
    emb: ComplexEmbeddings,
    adagrad: AdaGradState,
    config: TrainConfig,
    triples: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
) -> None:
    for _ in range(config.inner_epochs):
        _, grad = _loss_and_grad(emb, triples, targets, weights, config.l2, config.dense_l2)
        if not grad.all_finite():
            raise TrainingAbort(
                f"non-finite gradient on a batch of {len(triples)} examples "
                f"(touched {len(grad.entity_ids)} entities, {len(grad.relation_ids)} relations)"
            )
        _normalize_gradient(grad, config.grad_norm)
        adagrad.apply(emb, grad, config.learning_rate)


def rectify(
    batch_l: Sequence[LabeledExample],
    batch_u: Sequence[tuple[Triple, float]],
    emb: ComplexEmbeddings,
    adagrad: AdaGradState,
    config: TrainConfig,
) -> ComplexEmbeddings:
    """Run ``config.inner_epochs`` AdaGrad passes on one mini-batch, in place.

    Soft labels are taken as fixed. Rows not referenced by the batch are
    untouched.
    """
    triples, targets, weights = _assemble(batch_l, batch_u)
    _rectify_arrays(emb, adagrad, config, triples, targets, weights)
    return emb


# -- outer loop -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_mrr: float | None = None

    def as_line(self) -> str:
        line = f"epoch={self.epoch} mean_loss={self.mean_loss:.10f}"
        if self.val_mrr is not None:
            line += f" val_mrr={self.val_mrr:.6f}"
        return line


@dataclass
class TrainResult:
    embeddings: ComplexEmbeddings
    log: list[EpochRecord] = field(default_factory=list)
    best_val_mrr: float | None = None
    stopped_epoch: int = 0


def _labeled_arrays(
    positives: np.ndarray, negatives: np.ndarray, soft: list[tuple[Triple, float]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_l = len(positives) + len(negatives)
    triples = np.concatenate([
        positives,
        negatives,
        np.array([t for t, _ in soft], dtype=np.int64).reshape(-1, 3),
    ])
    targets = np.concatenate([
        np.ones(len(positives)),
        np.zeros(len(negatives)),
        np.array([s for _, s in soft]),
    ])
    weights = np.concatenate([
        np.full(n_l, 1.0 / n_l),
        np.full(len(soft), 1.0 / len(soft)) if soft else np.empty(0),
    ])
    return triples, targets, weights


def train(
    kg: KnowledgeGraph,
    rules: Sequence[Rule],
    groundings: Sequence[Grounding],
    config: TrainConfig,
    log_lines: list[str] | None = None,
) -> TrainResult:
    """The full iterative procedure over a prepared graph and its groundings.

    Per epoch the positives are shuffled and split into ``n_batches``
    mini-batches; each batch is corrupted into negatives, matched against the
    grounding index, soft-labeled, and rectified. Validation MRR (filtered)
    is computed every ``eval_every`` epochs when a validation split exists;
    the best checkpoint is kept and training stops after ``patience``
    validations without improvement.

    With no rules the soft-label machinery is bypassed and the run is a plain
    logistic-loss trainer over the labeled triples.
    """
    config.validate()
    if not kg.train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    emb = ComplexEmbeddings.init_random(
        kg.n_entities, kg.n_relations, config.dim, rng, config.init_scale
    )
    adagrad = AdaGradState(kg.n_entities, kg.n_relations, config.dim, config.adagrad_eps)
    index = GroundingIndex(groundings) if groundings else None
    train_arr = np.asarray(kg.train, dtype=np.int64)

    result = TrainResult(embeddings=emb)
    best_emb: ComplexEmbeddings | None = None
    bad_validations = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(train_arr))
        losses = []
        for chunk in np.array_split(perm, min(config.n_batches, len(train_arr))):
            positives = train_arr[chunk]
            negatives = _corrupt_batch(positives, kg, config.neg_ratio, rng)
            soft: list[tuple[Triple, float]] = []
            if index is not None:
                batch_set = {Triple(*row) for row in positives.tolist()}
                g_b, u_b = index.match(batch_set)
                if u_b:
                    s_b = predict_soft_labels(u_b, g_b, rules, emb, config.slack_penalty)
                    soft = [(t, s_b[t]) for t in u_b]
            triples, targets, weights = _labeled_arrays(positives, negatives, soft)
            loss, _ = _loss_and_grad(
                emb, triples, targets, weights, config.l2, config.dense_l2, need_grad=False
            )
            losses.append(loss)
            _rectify_arrays(emb, adagrad, config, triples, targets, weights)

        record = EpochRecord(epoch=epoch, mean_loss=float(np.mean(losses)))
        if kg.valid and epoch % config.eval_every == 0:
            record.val_mrr = evaluate(emb, kg.valid, kg).mrr
            if result.best_val_mrr is None or record.val_mrr > result.best_val_mrr:
                result.best_val_mrr = record.val_mrr
                best_emb = emb.copy()
                bad_validations = 0
            else:
                bad_validations += 1
        result.log.append(record)
        if log_lines is not None:
            log_lines.append(record.as_line())
        logger.info("%s", record.as_line())
        result.stopped_epoch = epoch
        if bad_validations >= config.patience:
            logger.info("early stop at epoch %d (patience exhausted)", epoch)
            break

    result.embeddings = best_emb if best_emb is not None else emb
    return result


def train_baseline(
    kg: KnowledgeGraph,
    config: TrainConfig,
    log_lines: list[str] | None = None,
) -> TrainResult:
    """Plain logistic-loss trainer built from the same components, no rules."""
    return train(kg, [], [], config, log_lines)
