"""Declarative constraint engine for event and sequence validity.

Rules are data (one ``.rules`` document per taxonomy) drawn from a small
predicate vocabulary.  The same rule set is used three ways: generatively by
the simulator (sampling only legal continuations), restrictively by the
constrained decoder, and diagnostically when validating annotated or
predicted sequences.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .taxonomy import Taxonomy


class RuleError(ValueError):
    """Raised for malformed rule documents."""


@dataclass(frozen=True)
class Rule:
    id: str
    kind: str        # combination | terminal | transition | handedness
    op: str          # behavioral sub-kind from the document
    severity: str    # hard | soft
    params: dict

    @property
    def hard(self):
        return self.severity == "hard"


@dataclass(frozen=True)
class Violation:
    rule_id: str
    kind: str
    severity: str
    index: int       # offending event position (later event for pair rules)
    message: str

    @property
    def hard(self):
        return self.severity == "hard"


def hard_only(violations):
    return [v for v in violations if v.hard]


@dataclass
class RallyContext:
    """Per-clip context needed by handedness and serve-order rules."""

    near_hand: str = "right"
    far_hand: str = "right"
    serving: str = "near"

    def hand_of(self, player):
        return self.near_hand if player == "near" else self.far_hand


_KIND_OF_OP = {
    "combination": "combination",
    "terminal": "terminal",
    "opening": "transition",
    "chain": "transition",
    "alternate": "transition",
    "transition": "transition",
    "handedness": "handedness",
    "return-side": "handedness",
}


def _kv(token):
    if "=" not in token:
        raise RuleError(f"expected key=value, got {token!r}")
    key, _, value = token.partition("=")
    return key, tuple(value.split(","))


class Rulebook:
    """Immutable rule set bound to one taxonomy; all checks are pure."""

    def __init__(self, taxonomy: Taxonomy, rules):
        self.taxonomy = taxonomy
        self.rules = tuple(rules)
        tax = taxonomy

        # normalized lookup structures
        self.combinations = []     # (rule, cond_sc, cond_els, mode, target_sc, allowed)
        self.terminal_subclass = None
        self.terminal_outcomes = frozenset()
        self.opening = None        # (rule, sc_name, allowed shots)
        self.chain = None          # (rule, sc_name, groups)
        self.alternate_sc = None   # (rule, sc_name)
        self.transitions = {}      # (direction, from_court) -> (rule, allowed courts)
        self.handedness = []       # (rule, direction, side, hand, allowed courts)
        self.return_side = []      # (rule, params)

        for rule in self.rules:
            p = rule.params
            if rule.op == "combination":
                self.combinations.append(
                    (rule, p["when_sc"], p["when_els"], p["mode"],
                     p["target_sc"], p.get("allowed", ())))
            elif rule.op == "terminal":
                self.terminal_subclass = p["sc"]
                self.terminal_outcomes = frozenset(p["els"])
            elif rule.op == "opening":
                self.opening = (rule, p["sc"], frozenset(p["els"]))
            elif rule.op == "chain":
                self.chain = (rule, p["sc"], tuple(frozenset(g) for g in p["groups"]))
            elif rule.op == "alternate":
                self.alternate_sc = (rule, p["sc"])
            elif rule.op == "transition":
                for frm in p["from"]:
                    self.transitions[(p["direction"], frm)] = (rule, frozenset(p["to"]))
            elif rule.op == "handedness":
                self.handedness.append(
                    (rule, p["direction"], p["side"], p["hand"], frozenset(p["court"])))
            elif rule.op == "return-side":
                self.return_side.append((rule, p))
            # element references were validated at parse time

    # ------------------------------------------------------------------
    # event-level checks

    def check_combination(self, vec, within=None):
        """Violations of hard combination rules for one event vector.

        `within` restricts the check to rules whose condition and target
        sub-classes both lie inside the given granularity (used when events
        are typed at reduced granularity).
        """
        tax = self.taxonomy
        g = None if within is None else tax.granularity(within)
        out = []
        for rule, cond_sc, cond_els, mode, target_sc, allowed in self.combinations:
            if g is not None:
                if tax.subclass(cond_sc).index not in g.indices:
                    continue
                if tax.subclass(target_sc).index not in g.indices:
                    continue
            cond = tax.subclass_value(vec, cond_sc)
            if cond is None or cond not in cond_els:
                continue
            value = tax.subclass_value(vec, target_sc)
            bad = None
            if mode == "allow" and value is not None and value not in allowed:
                bad = f"{target_sc}={value} not allowed when {cond_sc}={cond}"
            elif mode == "require" and value is None:
                bad = f"{target_sc} required when {cond_sc}={cond}"
            elif mode == "forbid" and value is not None:
                bad = f"{target_sc} must be absent when {cond_sc}={cond}"
            if bad:
                out.append(Violation(rule.id, rule.kind, rule.severity, 0, bad))
        return out

    # ------------------------------------------------------------------
    # sequence-level checks

    def validate_sequence(self, events, ctx=None):
        """Violations of terminal, ordering, ball-flow and handedness rules.

        `events` are event vectors ordered by frame.  Soft rules are
        reported with severity "soft" and never block anything.
        """
        tax = self.taxonomy
        ctx = ctx or RallyContext()
        events = [np.asarray(e) for e in events]
        out = []
        n = len(events)

        def value(i, sc):
            return tax.subclass_value(events[i], sc)

        if self.terminal_subclass:
            for i in range(n - 1):
                v = value(i, self.terminal_subclass)
                if v in self.terminal_outcomes:
                    out.append(Violation(
                        "terminal", "terminal", "hard", i,
                        f"event {i}: outcome {v!r} must end the sequence"))

        if self.opening and n:
            rule, sc, allowed = self.opening
            v = value(0, sc)
            if v is not None and v not in allowed:
                out.append(Violation(rule.id, rule.kind, rule.severity, 0,
                                     f"sequence must open with {sorted(allowed)}"))

        if self.chain:
            rule, sc, groups = self.chain
            def group_of(name):
                for gi, members in enumerate(groups):
                    if name in members:
                        return gi
                return None
            for i in range(n - 1):
                cur, nxt = value(i, sc), value(i + 1, sc)
                gi = group_of(cur) if cur else None
                gn = group_of(nxt) if nxt else None
                if gi is None or gn is None:
                    continue
                want = min(gi + 1, len(groups) - 1)
                if gn != want:
                    out.append(Violation(
                        rule.id, rule.kind, rule.severity, i + 1,
                        f"event {i + 1}: {sc}={nxt} cannot follow {sc}={cur}"))

        if self.alternate_sc:
            rule, sc = self.alternate_sc
            for i in range(n - 1):
                a, b = value(i, sc), value(i + 1, sc)
                if a is not None and a == b:
                    out.append(Violation(
                        rule.id, rule.kind, rule.severity, i + 1,
                        f"event {i + 1}: consecutive events share {sc}={a}"))

        if self.transitions:
            for i in range(n - 1):
                d, frm = value(i, "direction"), value(i, "court")
                nxt_court = value(i + 1, "court")
                if d is None or frm is None or nxt_court is None:
                    continue
                entry = self.transitions.get((d, frm))
                if entry is None:
                    continue
                rule, allowed = entry
                if nxt_court not in allowed:
                    out.append(Violation(
                        rule.id, rule.kind, rule.severity, i + 1,
                        f"event {i + 1}: court {nxt_court!r} does not follow "
                        f"a {d} shot from {frm!r}"))

        for rule, direction, side, hand, courts in self.handedness:
            for i in range(n):
                if value(i, "direction") != direction or value(i, "side") != side:
                    continue
                player = value(i, "player")
                if player is None or ctx.hand_of(player) != hand:
                    continue
                court = value(i, "court")
                if court is not None and court not in courts:
                    out.append(Violation(
                        rule.id, rule.kind, rule.severity, i,
                        f"event {i}: {side} {direction} from {court!r} is illegal "
                        f"for a {hand}-handed player"))

        for rule, p in self.return_side:
            for i in range(n - 1):
                if value(i, "direction") != p["direction"][0]:
                    continue
                if value(i + 1, "side") != p["side"][0]:
                    continue
                if value(i, "court") not in p["serve-court"]:
                    continue
                receiver = value(i + 1, "player")
                if receiver is None or ctx.hand_of(receiver) != p["hand"][0]:
                    continue
                out.append(Violation(
                    rule.id, rule.kind, rule.severity, i + 1,
                    f"event {i + 1}: uncommon {p['side'][0]} return of a "
                    f"{p['direction'][0]} serve"))

        out.sort(key=lambda v: (v.index, v.rule_id))
        return out

    # ------------------------------------------------------------------
    # generative dual

    def legal_followups(self, last_event, ctx=None):
        """Per-sub-class domains any legal next event must respect.

        Returns a dict mapping sub-class name to the set of allowed element
        names.  Absent keys are unconstrained (combination rules still
        apply).  An empty dict means no continuation is legal (the sequence
        already ended with a terminal outcome).
        """
        tax = self.taxonomy
        ctx = ctx or RallyContext()
        if last_event is None:
            domains = {}
            if self.opening:
                domains[self.opening[1]] = set(self.opening[2])
            if self.alternate_sc:
                domains[self.alternate_sc[1]] = {ctx.serving}
            return domains

        if self.terminal_subclass:
            v = tax.subclass_value(last_event, self.terminal_subclass)
            if v in self.terminal_outcomes:
                return {}

        domains = {}
        if self.alternate_sc:
            sc = self.alternate_sc[1]
            cur = tax.subclass_value(last_event, sc)
            if cur is not None:
                others = set(tax.subclass(sc).elements) - {cur}
                domains[sc] = others
        if self.chain:
            _, sc, groups = self.chain
            cur = tax.subclass_value(last_event, sc)
            for gi, members in enumerate(groups):
                if cur in members:
                    domains[sc] = set(groups[min(gi + 1, len(groups) - 1)])
                    break
        if self.transitions:
            d = tax.subclass_value(last_event, "direction")
            frm = tax.subclass_value(last_event, "court")
            entry = self.transitions.get((d, frm))
            if entry is not None:
                domains["court"] = set(entry[1])
        return domains

    def direction_domain(self, shot, court=None, side=None, hand=None):
        """Directions legal for a shot type, optionally narrowed by the
        hitting court and by handedness rules."""
        tax = self.taxonomy
        allowed = set(tax.subclass("direction").elements)
        for rule, cond_sc, cond_els, mode, target_sc, names in self.combinations:
            if not rule.hard or mode != "allow":
                continue
            if target_sc == "direction" and cond_sc == "shot" and shot in cond_els:
                allowed &= set(names)
            # a court constraint conditioned on the direction (e.g. line
            # shots only from a corner) rules the direction out elsewhere
            if (cond_sc == "direction" and target_sc == "court"
                    and court is not None and court not in names):
                allowed -= set(cond_els)
        if court is not None and side is not None and hand is not None:
            for rule, direction, rside, rhand, courts in self.handedness:
                if rule.hard and rside == side and rhand == hand and court not in courts:
                    allowed.discard(direction)
        return allowed

    def is_terminal(self, vec):
        if not self.terminal_subclass:
            return False
        v = self.taxonomy.subclass_value(vec, self.terminal_subclass)
        return v in self.terminal_outcomes


# ----------------------------------------------------------------------
# document loading

def _parse_rule_line(fields, taxonomy, lineno):
    if len(fields) < 4 or fields[0] != "rule":
        raise RuleError(f"line {lineno}: expected 'rule <id> <severity> <op> ...'")
    rid, severity, op = fields[1], fields[2], fields[3]
    if severity not in ("hard", "soft"):
        raise RuleError(f"line {lineno}: bad severity {severity!r}")
    if op not in _KIND_OF_OP:
        raise RuleError(f"line {lineno}: unknown rule op {op!r}")
    rest = fields[4:]
    tax = taxonomy

    def check_elements(sc, names):
        for n in names:
            tax.element(n, tax.subclass(sc).index)   # raises if unknown

    params = {}
    if op == "combination":
        if rest[0] != "when":
            raise RuleError(f"line {lineno}: combination rule must start with 'when'")
        sc, els = _kv(rest[1])
        check_elements(sc, els)
        params["when_sc"], params["when_els"] = sc, frozenset(els)
        mode = rest[2]
        params["mode"] = mode
        if mode == "allow":
            tsc, names = _kv(rest[3])
            check_elements(tsc, names)
            params["target_sc"], params["allowed"] = tsc, frozenset(names)
        elif mode in ("require", "forbid"):
            tsc = rest[3]
            tax.subclass(tsc)
            params["target_sc"] = tsc
        else:
            raise RuleError(f"line {lineno}: bad combination mode {mode!r}")
    elif op in ("terminal", "opening"):
        sc, els = _kv(rest[0])
        check_elements(sc, els)
        params["sc"], params["els"] = sc, tuple(els)
    elif op == "chain":
        key, _, value = rest[0].partition("=")
        groups = [tuple(g.split(",")) for g in value.split("|")]
        for g in groups:
            check_elements(key, g)
        params["sc"], params["groups"] = key, groups
    elif op == "alternate":
        tax.subclass(rest[0])
        params["sc"] = rest[0]
    elif op == "transition":
        kv = dict(_kv(t) for t in rest)
        params["direction"] = kv["direction"][0]
        params["from"] = kv["from"]
        params["to"] = kv["to"]
        check_elements("direction", kv["direction"])
        check_elements("court", kv["from"] + kv["to"])
    elif op == "handedness":
        kv = dict(_kv(t) for t in rest)
        params["direction"], params["side"] = kv["direction"][0], kv["side"][0]
        params["hand"], params["court"] = kv["hand"][0], kv["court"]
        check_elements("direction", kv["direction"])
        check_elements("side", kv["side"])
        check_elements("court", kv["court"])
    elif op == "return-side":
        params.update(dict(_kv(t) for t in rest))
    return Rule(rid, _KIND_OF_OP[op], op, severity, params)


def load_rules(taxonomy: Taxonomy, source=None) -> Rulebook:
    """Load the rule document for a taxonomy.

    `source` may be a path or raw text; by default the packaged
    ``rules/<taxonomy>.rules`` document named by the taxonomy config is used.
    """
    if source is None:
        name = taxonomy.rules_name or taxonomy.name
        source = resources.files("f3kit").joinpath("data", "rules", name + ".rules")
        text = source.read_text()
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = str(source)

    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "f3-rules":
            if fields[1:] != ["v1"]:
                raise RuleError(f"unsupported rules version {fields[1:]}")
            continue
        if fields[0] == "taxonomy":
            if fields[1] != taxonomy.name:
                raise RuleError(
                    f"rules document is for {fields[1]!r}, not {taxonomy.name!r}")
            continue
        rules.append(_parse_rule_line(fields, taxonomy, lineno))
    return Rulebook(taxonomy, rules)
