"""Synthetic graphs with a planted implication, for experiments and demos.

The generator creates a source relation over random entity pairs and a
target relation that holds exactly on the same pairs, then hides a fraction
of the target triples. The hidden triples are precisely the conclusions a
rule-aware trainer can recover through the planted rule, so they make a
clean test bed for measuring the benefit of rule guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, Triple
from .rules import Grounding, Rule, parse_rule_lines, propositionalize


@dataclass
class PlantedRuleData:
    kg: KnowledgeGraph
    rules: list[Rule]
    groundings: list[Grounding]
    unlabeled: list[Triple]
    rule_line: str


def planted_rule_dataset(
    n_entities: int = 200,
    n_pairs: int = 240,
    holdout_fraction: float = 0.3,
    n_noise_relations: int = 2,
    n_noise_triples: int = 400,
    confidence: float = 0.9,
    seed: int = 0,
) -> PlantedRuleData:
    """Build a graph governed by the rule src(x, y) => dst(x, y).

    All src pairs are observed. dst holds on the same pairs, but a random
    ``holdout_fraction`` of the dst triples goes to the test split instead of
    training. Noise triples over unrelated relations pad the graph so the
    vocabularies are not trivially aligned.
    """
    rng = np.random.default_rng(seed)
    width = len(str(n_entities - 1))
    names = [f"e{i:0{width}d}" for i in range(n_entities)]

    pairs: set[tuple[int, int]] = set()
    while len(pairs) < n_pairs:
        h, t = rng.integers(0, n_entities, size=2)
        if h != t:
            pairs.add((int(h), int(t)))
    pair_list = sorted(pairs)
    order = rng.permutation(len(pair_list))
    n_holdout = int(round(holdout_fraction * len(pair_list)))
    holdout = {pair_list[i] for i in order[:n_holdout]}

    train = [(names[h], "src", names[t]) for h, t in pair_list]
    train += [(names[h], "dst", names[t]) for h, t in pair_list if (h, t) not in holdout]
    test = [(names[h], "dst", names[t]) for h, t in sorted(holdout)]

    noise_seen: set[tuple[int, int, int]] = set()
    while len(noise_seen) < n_noise_triples:
        h, t = rng.integers(0, n_entities, size=2)
        r = rng.integers(0, n_noise_relations)
        if h != t:
            noise_seen.add((int(h), int(r), int(t)))
    train += [(names[h], f"noise{r}", names[t]) for h, r, t in sorted(noise_seen)]

    kg = KnowledgeGraph.from_string_triples(train, valid=(), test=test)
    rule_line = f"src(x,y) => dst(x,y)\t{confidence}"
    rules = parse_rule_lines([rule_line], kg)
    groundings, unlabeled = propositionalize(rules, kg)
    return PlantedRuleData(kg, rules, groundings, unlabeled, rule_line)
