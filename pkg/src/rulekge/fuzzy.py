"""Product t-norm truth-value algebra.

All operators map [0, 1] inputs to [0, 1] outputs and accept floats or numpy
arrays. Inputs are not validated; callers own the range precondition. Other
t-norm families could be slotted in behind the same five functions, but only
the product family is provided.
"""

from __future__ import annotations

from typing import Callable

from .rules import Grounding
from .kg import Triple


def t_and(a, b):
    """Conjunction: a * b."""
    return a * b


def t_or(a, b):
    """Disjunction: a + b - a * b."""
    return a + b - a * b


def t_not(a):
    """Negation: 1 - a."""
    return 1.0 - a


def implication(premise, conclusion):
    """Truth of (premise => conclusion), i.e. not-premise or conclusion.

    Expands to premise * conclusion - premise + 1.
    """
    return premise * conclusion - premise + 1.0


def grounding_truth(g: Grounding, triple_truth: Callable[[Triple], float]) -> float:
    """Truth value of a grounded rule under a per-triple truth assignment.

    The premise conjunction is folded with ``t_and`` and combined with the
    conclusion through ``implication``.
    """
    prem = 1.0
    for t in g.premise:
        prem = t_and(prem, triple_truth(t))
    return implication(prem, triple_truth(g.conclusion))
