"""Lowering of raw functional-program lines into atomic operation triplets.

A question's reasoning process is an ordered list of steps, each a triplet
``<operation, attribute, category>`` plus links to the earlier steps it
consumes.  Eight operation kinds exist; raw text lines such as
``"filter size table"`` or ``"different color cup and plate"`` are lowered by
a small rules table, extensible through a user alias file.

Default text grammar (whitespace tokens, first token selects the rule):

* ``select <category...>``
* ``filter <attribute> [<category...>]``
* ``query|verify|relate <category>`` or ``query|verify|relate <attribute> <category...>``
  (``-`` in the attribute slot means "no attribute")
* ``compare <attribute|-> [<catA> and <catB>]``
* ``different|same <attribute> <catA> and <catB>`` (lowered to compare)
* ``and`` / ``or``

Anything else must be covered by an alias entry or it is an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import MalformedDeps, SchemaError, UnknownOperation


class AtomicOp(Enum):
    """The eight reasoning primitives."""

    SELECT = "select"
    FILTER = "filter"
    QUERY = "query"
    VERIFY = "verify"
    COMPARE = "compare"
    RELATE = "relate"
    AND = "and"
    OR = "or"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


OPS_NEEDING_CATEGORY = {AtomicOp.SELECT, AtomicOp.QUERY, AtomicOp.VERIFY, AtomicOp.RELATE}
OPS_BARE = {AtomicOp.AND, AtomicOp.OR}

# dependency arity per operation: (min, max); None = unbounded
_ARITY = {
    AtomicOp.SELECT: (0, 0),
    AtomicOp.FILTER: (1, 1),
    AtomicOp.QUERY: (1, 1),
    AtomicOp.VERIFY: (1, 1),
    AtomicOp.RELATE: (1, 1),
    AtomicOp.COMPARE: (2, None),
    AtomicOp.AND: (2, None),
    AtomicOp.OR: (2, None),
}


@dataclass(frozen=True)
class OperationTriplet:
    """One reasoning operation with its optional attribute and category.

    ``category`` is a plain string except for compare steps, where it is an
    ordered ``(catA, catB)`` pair preserved from the source text.
    """

    op: AtomicOp
    attribute: str | None = None
    category: str | tuple[str, str] | None = None

    def render(self) -> str:
        """Canonical text form; ``parse_line(render())`` is the identity."""
        if self.op in OPS_BARE:
            return self.op.value
        if self.op is AtomicOp.SELECT:
            return f"select {self.category}"
        if self.op is AtomicOp.FILTER:
            if self.category:
                return f"filter {self.attribute} {self.category}"
            return f"filter {self.attribute}"
        if self.op is AtomicOp.COMPARE:
            attr = self.attribute if self.attribute is not None else "-"
            if self.category:
                a, b = self.category
                return f"compare {attr} {a} and {b}"
            return f"compare {attr}"
        attr = self.attribute if self.attribute is not None else "-"
        return f"{self.op.value} {attr} {self.category}"


@dataclass(frozen=True)
class RawProgramEntry:
    """An un-lowered program line: free text plus dependency indices."""

    text: str
    deps: tuple[int, ...] = ()


@dataclass(frozen=True)
class Step:
    triplet: OperationTriplet
    deps: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReasoningProgram:
    """Topologically ordered steps; deps always point at earlier steps."""

    steps: tuple[Step, ...]
    question_id: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    def render_lines(self) -> list[RawProgramEntry]:
        return [RawProgramEntry(s.triplet.render(), s.deps) for s in self.steps]


@dataclass(frozen=True)
class Violation:
    """One invariant breach found by :func:`validate_program`."""

    kind: str
    step: int
    message: str


@dataclass
class AliasTable:
    """User-supplied lowering rules, matched by longest token prefix.

    Each entry maps a pattern (whitespace-split) to explicit triplet fields.
    A ``null`` category lets the unmatched remainder of the line fill the
    category slot; a ``null`` attribute stays empty.
    """

    rules: dict[tuple[str, ...], dict] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path: str | Path) -> "AliasTable":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise SchemaError(f"cannot read alias table {path}: {e}") from e
        rules = {}
        for pattern, spec in raw.items():
            if not isinstance(spec, dict) or "op" not in spec:
                raise SchemaError(f"alias entry {pattern!r} needs an 'op' field")
            try:
                op = AtomicOp(spec["op"].lower())
            except ValueError as e:
                raise SchemaError(f"alias entry {pattern!r}: unknown op {spec['op']!r}") from e
            rules[tuple(pattern.split())] = {
                "op": op,
                "attribute": spec.get("attribute"),
                "category": spec.get("category"),
            }
        return cls(rules)

    def match(self, tokens: list[str]) -> OperationTriplet | None:
        for n in range(len(tokens), 0, -1):
            spec = self.rules.get(tuple(tokens[:n]))
            if spec is None:
                continue
            category = spec["category"]
            if category is None and n < len(tokens):
                rest = " ".join(tokens[n:])
                category = rest or None
            if spec["op"] is AtomicOp.COMPARE and isinstance(category, str) and " and " in category:
                a, _, b = category.partition(" and ")
                category = (a, b)
            return OperationTriplet(spec["op"], spec["attribute"], category)
        return None


def _split_compare_categories(tokens: list[str]) -> tuple[str, str] | None:
    """Split ``[catA..., 'and', catB...]`` at the first bare ``and`` token."""
    if "and" not in tokens:
        return None
    i = tokens.index("and")
    a = " ".join(tokens[:i])
    b = " ".join(tokens[i + 1 :])
    if not a or not b:
        return None
    return (a, b)


def parse_line(text: str, aliases: AliasTable | None = None) -> OperationTriplet:
    """Lower one raw text line into a triplet.

    Aliases win over the built-in rules so users can override anything.
    Raises :class:`UnknownOperation` when nothing matches.
    """
    tokens = text.split()
    if not tokens:
        raise UnknownOperation(text)
    if aliases is not None:
        hit = aliases.match(tokens)
        if hit is not None:
            return hit

    head, rest = tokens[0].lower(), tokens[1:]
    if head in ("and", "or") and not rest:
        return OperationTriplet(AtomicOp(head))
    if head == "select" and rest:
        return OperationTriplet(AtomicOp.SELECT, None, " ".join(rest))
    if head == "filter" and rest:
        category = " ".join(rest[1:]) or None
        return OperationTriplet(AtomicOp.FILTER, rest[0], category)
    if head in ("query", "verify", "relate") and rest:
        if len(rest) == 1:
            return OperationTriplet(AtomicOp(head), None, rest[0])
        attr = None if rest[0] == "-" else rest[0]
        return OperationTriplet(AtomicOp(head), attr, " ".join(rest[1:]))
    if head == "compare" and rest:
        attr = None if rest[0] == "-" else rest[0]
        return OperationTriplet(AtomicOp.COMPARE, attr, _split_compare_categories(rest[1:]))
    if head in ("different", "same") and len(rest) >= 2:
        pair = _split_compare_categories(rest[1:])
        if pair is not None:
            return OperationTriplet(AtomicOp.COMPARE, rest[0], pair)
    raise UnknownOperation(text)


def parse_program(
    lines: list[RawProgramEntry],
    question_id: str = "",
    aliases: AliasTable | None = None,
) -> ReasoningProgram:
    """Lower a whole program and enforce every structural invariant.

    Raises :class:`UnknownOperation` for unloweable text and
    :class:`MalformedDeps` for dep cycles / forward references / arity
    violations.  The returned program always passes ``validate_program``.
    """
    if not lines:
        raise MalformedDeps("program has no steps")
    steps = []
    for i, entry in enumerate(lines):
        try:
            triplet = parse_line(entry.text, aliases)
        except UnknownOperation as e:
            raise UnknownOperation(entry.text, line=i) from e
        deps = tuple(entry.deps)
        for d in deps:
            if not (0 <= d < i):
                raise MalformedDeps(
                    f"step {i}: dep {d} must reference a strictly earlier step"
                )
        lo, hi = _ARITY[triplet.op]
        if len(deps) < lo or (hi is not None and len(deps) > hi):
            raise MalformedDeps(
                f"step {i}: {triplet.op.value} takes "
                f"{'exactly ' + str(lo) if lo == hi else 'at least ' + str(lo)} "
                f"dep(s), got {len(deps)}"
            )
        steps.append(Step(triplet, deps))
    return ReasoningProgram(tuple(steps), question_id)


def validate_program(p: ReasoningProgram) -> list[Violation]:
    """Check all invariants; returns one record per breach (empty = valid)."""
    out: list[Violation] = []
    if not p.steps:
        return [Violation("EmptyProgram", -1, "program has no steps")]
    for i, step in enumerate(p.steps):
        t = step.triplet
        for d in step.deps:
            if not (0 <= d < i):
                out.append(Violation("ForwardDep", i, f"dep {d} not strictly earlier"))
        lo, hi = _ARITY[t.op]
        if len(step.deps) < lo or (hi is not None and len(step.deps) > hi):
            out.append(
                Violation("ArityViolation", i, f"{t.op.value} with {len(step.deps)} deps")
            )
        if t.op in OPS_NEEDING_CATEGORY and not t.category:
            out.append(Violation("MissingCategory", i, f"{t.op.value} needs a category"))
        if t.op is AtomicOp.FILTER and not t.attribute:
            out.append(Violation("MissingAttribute", i, "filter needs an attribute"))
        if t.op in OPS_BARE and (t.attribute or t.category):
            out.append(
                Violation("ExtraFields", i, f"{t.op.value} carries attribute/category")
            )
    return out


def load_programs(
    path: str | Path,
    aliases: AliasTable | None = None,
    lenient: bool = False,
) -> tuple[dict[str, ReasoningProgram], list[str]]:
    """Read ``programs.json`` (``{question_id: [{"text","deps"}]}``).

    Returns (programs, skipped question ids).  In strict mode any bad entry
    raises; in lenient mode the offending question is skipped.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read programs {path}: {e}") from e
    if not isinstance(raw, dict):
        raise SchemaError("programs.json must map question_id -> list of steps")
    programs: dict[str, ReasoningProgram] = {}
    skipped: list[str] = []
    for qid, entries in raw.items():
        if not isinstance(entries, list):
            raise SchemaError(f"programs[{qid!r}] must be a list")
        try:
            lines = [
                RawProgramEntry(str(e["text"]), tuple(int(d) for d in e.get("deps", [])))
                for e in entries
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"programs[{qid!r}]: malformed step entry: {e}") from e
        try:
            programs[qid] = parse_program(lines, question_id=qid, aliases=aliases)
        except (UnknownOperation, MalformedDeps):
            if lenient:
                skipped.append(qid)
            else:
                raise
    return programs, skipped
