"""Soft-label prediction: the rule-constrained projection and its closed form.

Every iteration, each unlabeled triple receives a soft label that stays
close to its current model truth value while honoring the groundings that
conclude it. The underlying problem is a box-constrained quadratic with
hinge slack on the rule constraints; its closed form adds, per unlabeled
triple, the penalty-weighted sum of (confidence * premise truth product)
over the groundings concluding that triple, then truncates to [0, 1].

``oracle_solve`` is a deliberately independent numerical solver for the same
problem, kept for verification; it never uses the closed form.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from .fuzzy import implication, t_and
from .kg import Triple
from .model import ComplexEmbeddings
from .rules import Grounding, Rule

logger = logging.getLogger(__name__)

SoftLabels = dict[Triple, float]


def _premise_truth(g: Grounding, emb: ComplexEmbeddings) -> float:
    prem = 1.0
    for t in g.premise:
        prem = t_and(prem, emb.truth(t))
    return prem


def conditional_truth(
    g: Grounding, emb: ComplexEmbeddings, soft_labels: Mapping[Triple, float]
) -> float:
    """Truth of a grounding with its conclusion read from the soft labels.

    The premise triples are observed, so their truth comes from the current
    embeddings; the conclusion's comes from the label assignment.
    """
    if g.conclusion not in soft_labels:
        raise KeyError(f"no soft label for conclusion {g.conclusion}")
    return implication(_premise_truth(g, emb), soft_labels[g.conclusion])


def predict_soft_labels(
    unlabeled: Sequence[Triple],
    groundings: Sequence[Grounding],
    rules: Sequence[Rule],
    emb: ComplexEmbeddings,
    penalty: float,
) -> SoftLabels:
    """Closed-form soft labels for a batch of unlabeled triples.

    For each unlabeled triple u:
        s(u) = clip01( phi(u) + penalty * sum over groundings concluding u of
                       confidence * premise-truth-product )
    Contributions of all groundings sharing a conclusion are summed before
    the single truncation. With ``penalty`` zero the labels are exactly the
    current truth values.
    """
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    if not unlabeled:
        return {}
    index = {t: i for i, t in enumerate(unlabeled)}
    s = emb.truths(np.asarray(unlabeled, dtype=np.int64))
    correction = np.zeros(len(unlabeled))
    for g in groundings:
        correction[index[g.conclusion]] += rules[g.rule_index].confidence * _premise_truth(g, emb)
    s = np.clip(s + penalty * correction, 0.0, 1.0)
    return {t: float(v) for t, v in zip(unlabeled, s)}


def oracle_objective(
    labels: Mapping[Triple, float],
    unlabeled: Sequence[Triple],
    groundings: Sequence[Grounding],
    rules: Sequence[Rule],
    emb: ComplexEmbeddings,
    penalty: float,
) -> float:
    """Projection objective: squared distance plus hinge slack on each rule.

    0.5 * sum_u (s(u) - phi(u))^2
      + penalty * sum_g max(0, confidence_g * (1 - conditional_truth(g)))
    """
    phi = emb.truths(np.asarray(unlabeled, dtype=np.int64))
    value = 0.5 * float(sum((labels[t] - p) ** 2 for t, p in zip(unlabeled, phi)))
    for g in groundings:
        violation = rules[g.rule_index].confidence * (1.0 - conditional_truth(g, emb, labels))
        value += penalty * max(0.0, violation)
    return value


def oracle_solve(
    unlabeled: Sequence[Triple],
    groundings: Sequence[Grounding],
    rules: Sequence[Rule],
    emb: ComplexEmbeddings,
    penalty: float,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> SoftLabels:
    """Solve the projection numerically by projected subgradient descent.

    Test-support path for small instances; independent of the closed form.
    The hinge subgradient is assembled per grounding from a central finite
    difference of the conditional truth value, so no analytic gradient of the
    truth composition is assumed. Raises RuntimeError if the iterate change
    does not fall below ``tol`` within ``max_iter`` steps (which signals a
    misconfigured oracle, not a product failure).
    """
    if not unlabeled:
        return {}
    unlabeled = list(unlabeled)
    index = {t: i for i, t in enumerate(unlabeled)}
    phi = emb.truths(np.asarray(unlabeled, dtype=np.int64))
    s = phi.copy()
    step, fd_h = 0.5, 1e-6

    def hinge_subgrad(current: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(current)
        labels = {t: float(v) for t, v in zip(unlabeled, current)}
        for g in groundings:
            lam = rules[g.rule_index].confidence
            if lam * (1.0 - conditional_truth(g, emb, labels)) <= 0.0:
                continue
            i = index[g.conclusion]
            up, down = dict(labels), dict(labels)
            up[g.conclusion] = labels[g.conclusion] + fd_h
            down[g.conclusion] = labels[g.conclusion] - fd_h
            dpi = (conditional_truth(g, emb, up) - conditional_truth(g, emb, down)) / (2 * fd_h)
            grad[i] -= lam * dpi
        return grad

    for iteration in range(max_iter):
        grad = (s - phi) + penalty * hinge_subgrad(s)
        s_next = np.clip(s - step * grad, 0.0, 1.0)
        delta = float(np.max(np.abs(s_next - s)))
        s = s_next
        if delta <= tol:
            break
    else:
        raise RuntimeError(f"oracle did not converge within {max_iter} iterations")
    logger.debug("oracle converged after %d iterations", iteration + 1)
    return {t: float(v) for t, v in zip(unlabeled, s)}
