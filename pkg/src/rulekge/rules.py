"""Soft Horn rules: parsing, propositionalization, and batch matching.

A rule is an implication with a one- or two-atom premise conjunction, a
single-atom conclusion, and a confidence in [0, 1]. Propositionalization
instantiates rule variables with concrete entities and keeps only the valid
groundings: premise triples observed in the training set, conclusion triple
not. The distinct conclusions of the valid groundings form the unlabeled
triple set that later receives soft labels.
"""

from __future__ import annotations

import logging
import re
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .kg import KnowledgeGraph, Triple

logger = logging.getLogger(__name__)

_ATOM_RE = re.compile(r"\s*([^\s()]+)\s*\(\s*([xyz])\s*,\s*([xyz])\s*\)\s*$")


class Atom(NamedTuple):
    """A relation applied to two rule variables."""

    relation: int
    arg1: str
    arg2: str


class Rule(NamedTuple):
    """Horn clause: 1..2 premise atoms imply a single conclusion atom."""

    premise: tuple[Atom, ...]
    conclusion: Atom
    confidence: float


class Grounding(NamedTuple):
    """A rule instantiated with concrete entities.

    Valid iff every premise triple is observed and the conclusion is not.
    """

    rule_index: int
    premise: tuple[Triple, ...]
    conclusion: Triple


class RuleFileError(ValueError):
    """A rule file violates the clause grammar or names unknown relations."""


def _parse_atom(text: str, kg: KnowledgeGraph, where: str) -> Atom:
    m = _ATOM_RE.match(text)
    if m is None:
        raise RuleFileError(f"{where}: malformed atom {text.strip()!r}")
    name, a1, a2 = m.groups()
    if name not in kg.relations:
        raise RuleFileError(f"{where}: unknown relation {name!r}")
    return Atom(kg.relations.id_of(name), a1, a2)


def parse_rule_lines(
    lines: Iterable[str],
    kg: KnowledgeGraph,
    min_confidence: float = 0.0,
    source: str = "<rules>",
) -> list[Rule]:
    """Parse rule clauses, dropping rules below the confidence threshold.

    Grammar, one rule per line::

        atom ("&" atom)? "=>" atom <tabs-or-spaces> confidence
        atom := relation-name "(" var "," var ")" ;  var in {x, y, z}

    Lines starting with '#' are ignored.
    """
    rules: list[Rule] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if line.count("=>") != 1:
            raise RuleFileError(f"{where}: expected exactly one '=>'")
        lhs, rhs = line.split("=>")
        rhs = rhs.strip()
        parts = rhs.rsplit(None, 1)
        if len(parts) != 2:
            raise RuleFileError(f"{where}: missing confidence value")
        conclusion_text, conf_text = parts
        try:
            confidence = float(conf_text)
        except ValueError:
            raise RuleFileError(f"{where}: bad confidence {conf_text!r}") from None
        if not 0.0 <= confidence <= 1.0:
            raise RuleFileError(f"{where}: confidence {confidence} outside [0, 1]")

        premise_texts = lhs.split("&")
        if not 1 <= len(premise_texts) <= 2:
            raise RuleFileError(f"{where}: premise must have 1 or 2 atoms")
        premise = tuple(_parse_atom(p, kg, where) for p in premise_texts)
        conclusion = _parse_atom(conclusion_text, kg, where)

        premise_vars = {v for atom in premise for v in (atom.arg1, atom.arg2)}
        if not {conclusion.arg1, conclusion.arg2} <= premise_vars:
            raise RuleFileError(f"{where}: conclusion variable not bound by the premise")

        if confidence < min_confidence:
            continue
        rules.append(Rule(premise, conclusion, confidence))
    return rules


def parse_rules(
    path: str | Path, kg: KnowledgeGraph, min_confidence: float = 0.0
) -> list[Rule]:
    """Parse a rule file against the graph's relation vocabulary."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        return parse_rule_lines(f, kg, min_confidence, source=str(path))


def _instantiate(atom: Atom, binding: dict[str, int]) -> Triple:
    return Triple(binding[atom.arg1], atom.relation, binding[atom.arg2])


def _atom_bindings(atom: Atom, kg: KnowledgeGraph):
    """Yield variable bindings from the observed instances of an atom."""
    for h, t in kg.by_relation.get(atom.relation, ()):
        if atom.arg1 == atom.arg2:
            if h != t:
                continue
            yield {atom.arg1: h}
        else:
            yield {atom.arg1: h, atom.arg2: t}


def _rule_groundings(rule_index: int, rule: Rule, kg: KnowledgeGraph):
    if len(rule.premise) == 1:
        for binding in _atom_bindings(rule.premise[0], kg):
            conclusion = _instantiate(rule.conclusion, binding)
            if conclusion not in kg.observed:
                yield Grounding(
                    rule_index, (_instantiate(rule.premise[0], binding),), conclusion
                )
        return

    first, second = rule.premise
    shared = sorted(({first.arg1, first.arg2} & {second.arg1, second.arg2}))
    # Hash join on the shared variables: index the second atom's observed
    # instances once, then probe with each instance of the first atom.
    index: dict[tuple[int, ...], list[dict[str, int]]] = defaultdict(list)
    for b in _atom_bindings(second, kg):
        index[tuple(b[v] for v in shared)].append(b)
    for b1 in _atom_bindings(first, kg):
        for b2 in index.get(tuple(b1[v] for v in shared), ()):
            binding = {**b1, **b2}
            conclusion = _instantiate(rule.conclusion, binding)
            if conclusion in kg.observed:
                continue
            yield Grounding(
                rule_index,
                (_instantiate(first, binding), _instantiate(second, binding)),
                conclusion,
            )


def propositionalize(
    rules: Sequence[Rule], kg: KnowledgeGraph
) -> tuple[list[Grounding], list[Triple]]:
    """Instantiate every rule against the observed set.

    Returns the valid groundings (rules in order, instances in observed-set
    order, hence deterministic) and the deduplicated list of their conclusion
    triples in first-appearance order.
    """
    groundings: list[Grounding] = []
    for p, rule in enumerate(rules):
        groundings.extend(_rule_groundings(p, rule, kg))
    unlabeled = list(dict.fromkeys(g.conclusion for g in groundings))
    logger.info("propositionalized %d rules: %d groundings, %d unlabeled triples",
                len(rules), len(groundings), len(unlabeled))
    return groundings, unlabeled


class GroundingIndex:
    """Premise-triple inverted index for per-batch grounding lookup.

    Built once over all groundings; ``match`` then returns the groundings
    whose premise triples are all contained in a batch of positive triples,
    together with the distinct conclusions of those groundings.
    """

    def __init__(self, groundings: Sequence[Grounding]):
        self._groundings = list(groundings)
        self._required: list[int] = []
        self._by_premise: dict[Triple, list[int]] = defaultdict(list)
        for gi, g in enumerate(self._groundings):
            distinct = set(g.premise)
            self._required.append(len(distinct))
            for t in distinct:
                self._by_premise[t].append(gi)

    def __len__(self) -> int:
        return len(self._groundings)

    def match(self, batch_positives: set[Triple]) -> tuple[list[Grounding], list[Triple]]:
        """Groundings fully premised inside the batch, plus their conclusions."""
        hits: Counter[int] = Counter()
        for t in batch_positives:
            for gi in self._by_premise.get(t, ()):
                hits[gi] += 1
        matched = sorted(gi for gi, n in hits.items() if n == self._required[gi])
        g_b = [self._groundings[gi] for gi in matched]
        u_b = list(dict.fromkeys(g.conclusion for g in g_b))
        return g_b, u_b
