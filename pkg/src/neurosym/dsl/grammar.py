"""Context-free grammar over architectures and the program-graph edge relation."""

from __future__ import annotations

from dataclasses import dataclass

from .ast import (FRAME, SEQ, Affine, Architecture, FeatureSchema, Hole, IfThenElse,
                  Input, MapAverage, Node, Op, Select, skeleton)


@dataclass(frozen=True)
class Rule:
    name: str
    signature: str
    template: Node

    @property
    def child_signatures(self) -> tuple:
        return tuple(c.signature for c in self.template.children)


class Grammar:
    """Production rules keyed by nonterminal signature.

    Rule order is declaration order and fixes the order of enumerated
    children.
    """

    def __init__(self, rules, schema: FeatureSchema, start: str = SEQ):
        self.rules = tuple(rules)
        self.schema = schema
        self.start = start
        self.nonterminals = tuple(dict.fromkeys(r.signature for r in self.rules))
        for r in self.rules:
            for sig in r.child_signatures:
                if sig not in self.nonterminals:
                    raise ValueError(f"rule {r.name} needs nonterminal {sig!r} with no rules")
            for c in getattr(r.template, "channels", ()):
                if not 0 <= c < schema.dim:
                    raise ValueError(f"rule {r.name} uses channel {c} outside [0, {schema.dim})")
        self._min_depth = self._compute_min_depths()
        missing = [s for s in self.nonterminals if self._min_depth[s] is None]
        if start not in self.nonterminals or missing:
            raise ValueError(f"grammar cannot complete nonterminals {missing or [start]}")

    def _compute_min_depths(self) -> dict:
        best = {s: None for s in self.nonterminals}
        changed = True
        while changed:
            changed = False
            for r in self.rules:
                kids = [best[s] for s in r.child_signatures]
                if any(k is None for k in kids):
                    continue
                d = 1 + max(kids, default=0)
                if best[r.signature] is None or d < best[r.signature]:
                    best[r.signature] = d
                    changed = True
        return best

    def min_depth(self, signature: str) -> int:
        """Fewest levels needed to complete a hole of ``signature``."""
        return self._min_depth[signature]

    def rules_for(self, signature: str) -> list:
        return [r for r in self.rules if r.signature == signature]

    def rule_index(self, node: Node, signature: str):
        """Index of the rule that produced ``node`` at ``signature``, or None."""
        shape = skeleton(node, signature)
        for i, r in enumerate(self.rules):
            if r.signature == signature and r.template == shape:
                return i
        return None

    def root(self) -> Architecture:
        return Architecture(Hole(self.start), self.start)

    def rule_completion_depth(self, rule: Rule, hole_level: int) -> int:
        return hole_level + 1 + max((self.min_depth(s) for s in rule.child_signatures), default=0)

    def typecheck(self, arch: Architecture) -> None:
        """Raise TypeError unless every node comes from a rule of this grammar."""
        for path, node, sig in arch.walk():
            if isinstance(node, Hole):
                if node.signature != sig:
                    raise TypeError(f"hole at {path} has type {node.signature}, expected {sig}")
                continue
            if self.rule_index(node, sig) is None:
                raise TypeError(f"{type(node).__name__} at {path} is not a {sig} rule of this grammar")


def enumerate_children(arch: Architecture, grammar: Grammar, max_depth: int) -> list:
    """Every architecture one rule firing away, expanding the leftmost hole.

    Rules whose cheapest completion would exceed ``max_depth`` are skipped,
    so an architecture already at the bound has no children.
    """
    holes = arch.holes()
    if not holes:
        raise ValueError("architecture is complete; it has no children")
    path, hole = holes[0]
    children = []
    for rule in grammar.rules_for(hole.signature):
        if grammar.rule_completion_depth(rule, len(path)) > max_depth:
            continue
        children.append(arch.replace_at(path, rule.template))
    return children


def child_rule(parent: Architecture, child: Architecture, grammar: Grammar):
    """Rule index used on the edge (parent, child)."""
    path, hole = parent.holes()[0]
    return grammar.rule_index(child.node_at(path), hole.signature)


def trajectory_grammar(schema: FeatureSchema, *, affine_channels=None, select_channels=(),
                       algebraic: bool = True, ite: bool = True,
                       input_rule: bool = False) -> Grammar:
    """Sequence-classification DSL over ``schema``.

    ``affine_channels`` is a list of channel-index tuples, one affine library
    function per tuple; by default one single-channel affine per feature.
    """
    if affine_channels is None:
        affine_channels = [(i,) for i in range(schema.dim)]
    for c in [c for chans in affine_channels for c in chans] + list(select_channels):
        if not 0 <= c < schema.dim:
            raise ValueError(f"channel {c} outside a {schema.dim}-channel schema")
    seq, frame = Hole(SEQ), Hole(FRAME)
    rules = [Rule("map_avg", SEQ, MapAverage(frame))]
    if algebraic:
        rules += [Rule("add", SEQ, Op("add", seq, seq)), Rule("mul", SEQ, Op("mul", seq, seq))]
    if ite:
        rules.append(Rule("ite", SEQ, IfThenElse(seq, seq, seq)))
    for chans in affine_channels:
        names = "_".join(schema.names[c] for c in chans)
        rules.append(Rule(f"affine_{names}", FRAME, Affine(tuple(chans))))
    for c in select_channels:
        rules.append(Rule(f"select_{schema.names[c]}", FRAME, Select((c,))))
    if algebraic:
        rules += [Rule("add", FRAME, Op("add", frame, frame)),
                  Rule("mul", FRAME, Op("mul", frame, frame))]
    if ite:
        rules.append(Rule("ite", FRAME, IfThenElse(frame, frame, frame)))
    if input_rule:
        if schema.dim != 1:
            raise ValueError("the input rule needs a one-channel schema")
        rules.append(Rule("input", FRAME, Input()))
    return Grammar(rules, schema)
