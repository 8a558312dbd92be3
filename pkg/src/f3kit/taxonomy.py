"""Event taxonomies: sub-classes, elements and the binary event-vector codec.

A taxonomy describes one application domain (one sport, for the shipped
configs).  Each event is an assignment of at most one *element* per
*sub-class*; the wire encoding is a length-K binary vector over the global
element index space.  Granularity selects a subset of sub-classes and
projects events onto it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

ABSENT = "-"


class TaxonomyError(ValueError):
    """Raised for malformed taxonomy documents or invalid event encodings."""


@dataclass(frozen=True)
class SubClass:
    """One attribute axis of an event (e.g. shot direction)."""

    index: int                 # 1-based position within the taxonomy
    name: str
    elements: tuple[str, ...]  # ordered, fixes global element indices
    always_one: bool           # False: the sub-class may be absent ("-")

    def __post_init__(self):
        if not self.elements:
            raise TaxonomyError(f"sub-class {self.name!r} has no elements")
        if len(set(self.elements)) != len(self.elements):
            raise TaxonomyError(f"duplicate element name in sub-class {self.name!r}")


@dataclass(frozen=True)
class Element:
    """One value on a sub-class axis, with its 1-based global index."""

    global_index: int
    name: str
    subclass_index: int


@dataclass(frozen=True)
class Granularity:
    """A non-empty subset of sub-class indices, optionally named."""

    indices: frozenset[int]
    name: str = ""

    def __post_init__(self):
        if not self.indices:
            raise TaxonomyError("granularity must include at least one sub-class")

    def ordered(self):
        return tuple(sorted(self.indices))

    def __contains__(self, subclass_index):
        return subclass_index in self.indices


class Taxonomy:
    """Immutable event taxonomy; all operations are pure and thread-safe."""

    def __init__(self, name, subclasses, granularities=None, rules_name=None,
                 canonical_types=None, expected=None):
        self.name = name
        self.subclasses = tuple(subclasses)
        self.S = len(self.subclasses)
        if self.S == 0:
            raise TaxonomyError("taxonomy has no sub-classes")
        for pos, sc in enumerate(self.subclasses, start=1):
            if sc.index != pos:
                raise TaxonomyError("sub-class indices must be 1..S in order")

        # Global element index space, assigned in document order.
        self.elements: tuple[Element, ...] = tuple(
            Element(gi + 1, name, sc.index)
            for gi, (sc, name) in enumerate(
                (sc, name) for sc in self.subclasses for name in sc.elements
            )
        )
        self.K = len(self.elements)

        # slice of the global index space covered by each sub-class (0-based)
        self._slices = {}
        start = 0
        for sc in self.subclasses:
            self._slices[sc.index] = slice(start, start + len(sc.elements))
            start += len(sc.elements)

        self._by_name = {}          # element name -> list of Element
        for el in self.elements:
            self._by_name.setdefault(el.name, []).append(el)
        self._sc_by_name = {sc.name: sc for sc in self.subclasses}
        if len(self._sc_by_name) != self.S:
            raise TaxonomyError("duplicate sub-class name")

        self.granularities = dict(granularities or {})
        self.rules_name = rules_name
        self.canonical_types = tuple(canonical_types) if canonical_types else None
        self.expected = dict(expected or {})
        self.full = Granularity(frozenset(sc.index for sc in self.subclasses), "full")

    # ------------------------------------------------------------------
    # lookups

    def has_subclass(self, name) -> bool:
        return name in self._sc_by_name

    def subclass(self, key) -> SubClass:
        if isinstance(key, int):
            try:
                return self.subclasses[key - 1]
            except IndexError:
                raise TaxonomyError(f"no sub-class with index {key}") from None
        try:
            return self._sc_by_name[key]
        except KeyError:
            raise TaxonomyError(f"no sub-class named {key!r}") from None

    def element(self, name, subclass_index=None) -> Element:
        candidates = self._by_name.get(name, [])
        if subclass_index is not None:
            candidates = [e for e in candidates if e.subclass_index == subclass_index]
        if not candidates:
            raise TaxonomyError(f"unknown element {name!r}")
        if len(candidates) > 1:
            raise TaxonomyError(f"ambiguous element name {name!r}")
        return candidates[0]

    def element_mask(self, subclass_key, names) -> np.ndarray:
        """Boolean mask over the K global slots for `names` of one sub-class."""
        sc = self.subclass(subclass_key)
        mask = np.zeros(self.K, dtype=bool)
        for name in names:
            el = self.element(name, sc.index)
            mask[el.global_index - 1] = True
        return mask

    def granularity(self, spec) -> Granularity:
        """Resolve a named preset, an iterable of sub-class names/indices,
        or pass through an existing Granularity."""
        if isinstance(spec, Granularity):
            unknown = spec.indices - self.full.indices
            if unknown:
                raise TaxonomyError(f"granularity references unknown sub-classes {sorted(unknown)}")
            return spec
        if isinstance(spec, str):
            if spec in self.granularities:
                return self.granularities[spec]
            if spec == "full" or spec == "high" and "high" not in self.granularities:
                return self.full
            raise TaxonomyError(f"no granularity named {spec!r}")
        indices = frozenset(self.subclass(k).index for k in spec)
        return Granularity(indices)

    def element_count(self, g) -> int:
        g = self.granularity(g)
        return sum(len(self.subclass(i).elements) for i in g.ordered())

    # ------------------------------------------------------------------
    # vector codec

    def empty_vector(self) -> np.ndarray:
        return np.zeros(self.K, dtype=np.uint8)

    def encode(self, assignment) -> np.ndarray:
        """Build an event vector from per-sub-class element names.

        `assignment` is either a sequence aligned with the sub-class order
        (use "-" for an absent conditional sub-class) or a mapping from
        sub-class name to element name.
        """
        if isinstance(assignment, dict):
            items = list(assignment.items())
        else:
            if len(assignment) != self.S:
                raise TaxonomyError(
                    f"expected {self.S} per-sub-class entries, got {len(assignment)}")
            items = [(sc.name, name) for sc, name in zip(self.subclasses, assignment)]

        vec = self.empty_vector()
        seen = set()
        for sc_name, el_name in items:
            sc = self.subclass(sc_name)
            if sc.index in seen:
                raise TaxonomyError(f"two elements assigned to sub-class {sc.name!r}")
            seen.add(sc.index)
            if el_name == ABSENT or el_name is None:
                continue
            el = self.element(el_name, sc.index)
            vec[el.global_index - 1] = 1
        return vec

    def validate_vector(self, vec, g=None):
        """Check structural invariants; raise TaxonomyError on violation.

        Always: at most one set bit per sub-class.  With `g`: exactly one
        set bit for every always-one sub-class inside the granularity.
        """
        vec = np.asarray(vec)
        if vec.shape != (self.K,):
            raise TaxonomyError(f"vector must have length {self.K}")
        for sc in self.subclasses:
            n = int(vec[self._slices[sc.index]].sum())
            if n > 1:
                raise TaxonomyError(f"more than one element set for sub-class {sc.name!r}")
        if g is not None:
            g = self.granularity(g)
            for i in g.ordered():
                sc = self.subclass(i)
                if sc.always_one and int(vec[self._slices[i]].sum()) != 1:
                    raise TaxonomyError(
                        f"sub-class {sc.name!r} requires exactly one element")

    def subclass_value(self, vec, subclass_key):
        """Element name set in the given sub-class, or None if absent."""
        sc = self.subclass(subclass_key)
        seg = np.asarray(vec)[self._slices[sc.index]]
        hits = np.flatnonzero(seg)
        if hits.size == 0:
            return None
        if hits.size > 1:
            raise TaxonomyError(f"more than one element set for sub-class {sc.name!r}")
        return sc.elements[hits[0]]

    def decode(self, vec, g=None) -> str:
        """Canonical event-type string: element names joined by "_" in
        sub-class index order, restricted to `g`, absent rendered "-"."""
        g = self.full if g is None else self.granularity(g)
        self.validate_vector(vec, g)
        parts = []
        for i in g.ordered():
            value = self.subclass_value(vec, i)
            parts.append(value if value is not None else ABSENT)
        return "_".join(parts)

    def parse_event(self, text, g=None) -> np.ndarray:
        """Parse an event-type string into a vector.

        Tokens are resolved by element name, so any field order is accepted
        as long as names are unambiguous; "-" marks an absent sub-class.
        The token count must match the sub-class count of `g` (full by
        default).
        """
        g = self.full if g is None else self.granularity(g)
        tokens = text.strip().split("_")
        order = g.ordered()
        if len(tokens) != len(order):
            raise TaxonomyError(
                f"expected {len(order)} fields for granularity, got {len(tokens)} in {text!r}")
        vec = self.empty_vector()
        seen = set()
        for pos, token in enumerate(tokens):
            if token == ABSENT:
                continue
            positional = self.subclass(order[pos])
            if token in positional.elements:
                el = self.element(token, positional.index)
            else:
                el = self.element(token)  # raises if unknown or ambiguous
            if el.subclass_index in seen:
                raise TaxonomyError(f"duplicate sub-class assignment in {text!r}")
            if el.subclass_index not in g.indices:
                raise TaxonomyError(
                    f"element {token!r} outside granularity in {text!r}")
            seen.add(el.subclass_index)
            vec[el.global_index - 1] = 1
        return vec

    def project(self, vec, g) -> np.ndarray:
        """Clear all bits of sub-classes outside `g`; idempotent."""
        g = self.granularity(g)
        out = np.array(vec, dtype=np.uint8, copy=True)
        for sc in self.subclasses:
            if sc.index not in g.indices:
                out[self._slices[sc.index]] = 0
        return out

    # ------------------------------------------------------------------
    # event-type enumeration

    def event_types(self, g=None, rules=None) -> tuple[str, ...]:
        """All valid event-type strings at granularity `g`.

        Uses the curated canonical list when the taxonomy ships one
        (projecting and deduplicating); otherwise enumerates per-sub-class
        choices and keeps combinations that pass the rulebook.
        """
        g = self.full if g is None else self.granularity(g)
        if self.canonical_types is not None:
            seen = {}
            for t in self.canonical_types:
                vec = self.parse_event(t)
                seen.setdefault(self.decode(self.project(vec, g), g), None)
            return tuple(sorted(seen))
        if rules is None:
            raise TaxonomyError(
                f"taxonomy {self.name!r} has no canonical event list; pass a rulebook")
        out = []
        choice_lists = []
        for i in g.ordered():
            sc = self.subclass(i)
            opts = list(sc.elements)
            if not sc.always_one:
                opts.append(ABSENT)
            choice_lists.append((sc, opts))
        for combo in itertools.product(*(opts for _, opts in choice_lists)):
            vec = self.empty_vector()
            for (sc, _), name in zip(choice_lists, combo):
                if name != ABSENT:
                    vec[self.element(name, sc.index).global_index - 1] = 1
            if not rules.check_combination(vec, within=g):
                out.append(self.decode(vec, g))
        return tuple(sorted(out))

    def __repr__(self):
        return f"Taxonomy({self.name!r}, S={self.S}, K={self.K})"


# ----------------------------------------------------------------------
# document loading

def _data_dir():
    return resources.files("f3kit").joinpath("data")


def builtin_taxonomies():
    """Names of the taxonomy configs shipped with the package."""
    folder = _data_dir().joinpath("taxonomies")
    return sorted(p.name[:-len(".taxonomy")] for p in folder.iterdir()
                  if p.name.endswith(".taxonomy"))


def _resolve_source(source):
    """Return (text, sibling_loader) for a builtin name, path or raw text."""
    if isinstance(source, Path) or (isinstance(source, str) and
                                    (source.endswith(".taxonomy") or "/" in source)):
        path = Path(source)
        return path.read_text(), lambda fname: (path.parent / fname).read_text()
    if isinstance(source, str) and "\n" not in source:
        ref = _data_dir().joinpath("taxonomies").joinpath(source + ".taxonomy")
        folder = _data_dir().joinpath("taxonomies")
        return ref.read_text(), lambda fname: folder.joinpath(fname).read_text()
    return str(source), None


def load_taxonomy(source) -> Taxonomy:
    """Load a taxonomy document from a builtin name, a path, or raw text.

    Sub-class and element indices are assigned in document order.  The
    sibling canonical event list referenced by an `events` line is loaded
    when available; expected element counts are verified immediately.
    """
    text, sibling = _resolve_source(source)
    name = None
    rules_name = None
    events_file = None
    subclasses = []
    current = None          # [name, always_one, [elements]]
    granularity_lines = []
    expected = {}

    def close_current():
        if current is not None:
            subclasses.append(SubClass(len(subclasses) + 1, current[0],
                                       tuple(current[2]), current[1]))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        key = fields[0]
        try:
            if key == "f3-taxonomy":
                if fields[1:] != ["v1"]:
                    raise TaxonomyError(f"unsupported taxonomy version {fields[1:]}")
            elif key == "name":
                name = fields[1]
            elif key == "rules":
                rules_name = fields[1]
            elif key == "events":
                events_file = fields[1]
            elif key == "subclass":
                close_current()
                if fields[2] not in ("always-one", "conditional"):
                    raise TaxonomyError(f"bad presence policy {fields[2]!r}")
                current = [fields[1], fields[2] == "always-one", []]
            elif key == "element":
                if current is None:
                    raise TaxonomyError("element outside sub-class")
                current[2].append(fields[1])
            elif key == "granularity":
                granularity_lines.append((fields[1], fields[2:]))
            elif key == "expect":
                expected[(fields[1], fields[2])] = int(fields[3])
            else:
                raise TaxonomyError(f"unknown directive {key!r}")
        except IndexError:
            raise TaxonomyError(f"malformed line {lineno}: {raw!r}") from None
    close_current()
    if name is None:
        raise TaxonomyError("taxonomy document has no name")

    canonical = None
    if events_file and sibling is not None:
        try:
            body = sibling(events_file)
        except (FileNotFoundError, OSError):
            body = None
        if body is not None:
            canonical = [ln.strip() for ln in body.splitlines()
                         if ln.strip() and not ln.startswith("#")]

    tax = Taxonomy(name, subclasses, rules_name=rules_name,
                   canonical_types=canonical, expected=expected)
    grans = {}
    for gname, sc_names in granularity_lines:
        grans[gname] = Granularity(
            frozenset(tax.subclass(n).index for n in sc_names), gname)
    tax.granularities.update(grans)

    for (kind, gname), want in expected.items():
        if kind == "elements":
            got = tax.element_count(tax.granularity(gname))
            if got != want:
                raise TaxonomyError(
                    f"{name}: expected {want} elements at {gname}, config yields {got}")
    return tax
