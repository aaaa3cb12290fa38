"""
Restricted ontology language and forward-chaining entailment.

An ontology file (``.fto``) is a sequence of statements terminated by ``.``::

    # upper layer
    sensitive concept SensitiveAttribute.
    concept ProxyForLowIncome.
    role livesInZIP.
    data MedianIncome.
    individual ZIP_12345.
    axiom exists(livesInZIP, {ZIP_12345}) => ProxyForLowIncome.
    axiom UrbanArea and MedianIncome < 30000 => LowIncomeArea.
    assert MedianIncome(ZIP_12345) = 28000.

Entailment is computed by materializing the least fixpoint of the TBox over a
FactStore (the ABox). The supported profile has no negation, so every
FactStore is consistent and materialization is monotone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Set, Tuple, Union

from .errors import OntologyError, OntologyParseError

COMPARATORS = ("<", "<=", ">", ">=", "=")

KEYWORDS = frozenset(
    {"concept", "sensitive", "role", "data", "individual", "axiom", "assert", "exists", "and"}
)

# (property, individual) pairs whose value was needed but absent
CoverageTally = Set[Tuple[str, str]]


# ---------------------------------------------------------------------------
# Numbers
# ---------------------------------------------------------------------------

def parse_decimal(text: str) -> Fraction:
    """Parse decimal text into an exact rational. Rejects NaN and infinities."""
    try:
        value = Decimal(text.strip())
    except (InvalidOperation, AttributeError):
        raise ValueError(f"'{text}' is not a decimal number") from None
    if not value.is_finite():
        raise ValueError(f"'{text}' is not a finite decimal number")
    return Fraction(value)


def format_decimal(value: Fraction) -> str:
    """Exact decimal text for a rational with a terminating expansion."""
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        raise ValueError(f"{value} has no finite decimal expansion")
    places = max(twos, fives)
    scaled = value * 10**places
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    if places == 0:
        return sign + digits
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def _compare(value: Fraction, comparator: str, threshold: Fraction) -> bool:
    """Apply a threshold comparator to exact rationals."""
    if comparator == "<":
        return value < threshold
    if comparator == "<=":
        return value <= threshold
    if comparator == ">":
        return value > threshold
    if comparator == ">=":
        return value >= threshold
    return value == threshold


# ---------------------------------------------------------------------------
# Concept expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atomic:
    """Named concept."""
    concept: str


@dataclass(frozen=True)
class ExistsNominal:
    """``exists(role, {individual})``"""
    role: str
    individual: str


@dataclass(frozen=True)
class ExistsConcept:
    """``exists(role, Concept)``"""
    role: str
    concept: str


@dataclass(frozen=True)
class DataThreshold:
    """``prop <cmp> threshold`` on a data property; the threshold is kept as a Fraction."""
    prop: str
    comparator: str
    threshold: Fraction

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ValueError(f"Unknown comparator '{self.comparator}'")
        object.__setattr__(self, "threshold", Fraction(self.threshold))


@dataclass(frozen=True)
class Conjunction:
    """
    Flat conjunction of at least two distinct conjuncts.

    Conjuncts are stored in canonical order (sorted by their printed form),
    so two conjunctions written in different orders compare equal.
    """
    conjuncts: Tuple["ConceptExpr", ...]

    def __post_init__(self):
        parts = tuple(self.conjuncts)
        if len(parts) < 2:
            raise ValueError("A conjunction needs at least two conjuncts")
        if any(isinstance(p, Conjunction) for p in parts):
            raise ValueError("Conjunctions must be flat")
        ordered = tuple(sorted(parts, key=render_expr))
        if len(set(ordered)) != len(ordered):
            raise ValueError("Duplicate conjunct in conjunction")
        object.__setattr__(self, "conjuncts", ordered)


ConceptExpr = Union[Atomic, ExistsNominal, ExistsConcept, DataThreshold, Conjunction]


def render_expr(expr: ConceptExpr) -> str:
    """Print a concept expression in ``.fto`` syntax."""
    if isinstance(expr, Atomic):
        return expr.concept
    if isinstance(expr, ExistsNominal):
        return f"exists({expr.role}, {{{expr.individual}}})"
    if isinstance(expr, ExistsConcept):
        return f"exists({expr.role}, {expr.concept})"
    if isinstance(expr, DataThreshold):
        return f"{expr.prop} {expr.comparator} {format_decimal(expr.threshold)}"
    if isinstance(expr, Conjunction):
        return " and ".join(render_expr(c) for c in expr.conjuncts)
    raise TypeError(f"Not a concept expression: {expr!r}")


@dataclass(frozen=True)
class Axiom:
    """Subsumption ``lhs ⊑ rhs`` with an atomic right-hand side."""
    lhs: ConceptExpr
    rhs: str

    def __str__(self) -> str:
        return f"axiom {render_expr(self.lhs)} => {self.rhs}."


@dataclass(frozen=True)
class ConceptAssertion:
    """``Concept(individual)``"""
    concept: str
    individual: str

    def __str__(self) -> str:
        return f"assert {self.concept}({self.individual})."


@dataclass(frozen=True)
class RoleAssertion:
    """``role(subject, object)``"""
    role: str
    subject: str
    object: str

    def __str__(self) -> str:
        return f"assert {self.role}({self.subject}, {self.object})."


@dataclass(frozen=True)
class DataAssertion:
    """``prop(individual) = value``"""
    prop: str
    individual: str
    value: Fraction

    def __str__(self) -> str:
        return f"assert {self.prop}({self.individual}) = {format_decimal(self.value)}."


Assertion = Union[ConceptAssertion, RoleAssertion, DataAssertion]


@dataclass(frozen=True)
class Ontology:
    """Validated vocabulary, TBox and (optional) ABox assertions."""
    concepts: FrozenSet[str]
    roles: FrozenSet[str]
    data_properties: FrozenSet[str]
    individuals: FrozenSet[str]
    tbox: Tuple[Axiom, ...]
    sensitive_markers: FrozenSet[str]
    abox: Tuple[Assertion, ...] = ()

    @property
    def sensitive_concepts(self) -> Tuple[str, ...]:
        """Sensitive concept names in lexicographic order (mask column order)."""
        return tuple(sorted(self.sensitive_markers))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<symbol>=>|<=|>=|≤|≥|<|>|=|\(|\)|\{|\}|,|\.)
    """,
    re.VERBOSE,
)

_UNICODE_COMPARATORS = {"≤": "<=", "≥": ">="}


class _Token(NamedTuple):
    """Lexeme with its 1-based source position."""
    kind: str
    text: str
    line: int
    column: int


def _tokenize(source: str) -> List[_Token]:
    """Split ``.fto`` source into tokens, dropping whitespace and comments. Ends with an ``eof`` token."""
    tokens: List[_Token] = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise OntologyParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        text = match.group()
        if kind not in ("ws", "comment"):
            if kind == "symbol":
                text = _UNICODE_COMPARATORS.get(text, text)
            tokens.append(_Token(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n") if kind == "ws" else 0
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = match.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    """
    Recursive-descent parser for ``.fto`` statements.

    Names are collected as references while parsing and checked against the
    declarations in ``finish``, so statements may use names declared later.
    """
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.declared: Dict[str, Tuple[str, int, int]] = {}
        self.sensitive: Set[str] = set()
        self.references: List[Tuple[str, str, int, int]] = []
        self.tbox: List[Axiom] = []
        self.abox: List[Assertion] = []

    # token helpers
    def peek(self, offset: int = 0) -> _Token:
        """Token ``offset`` ahead, clamped to ``eof``."""
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[_Token] = None) -> OntologyParseError:
        """Parse error located at ``tok`` (default: the current token)."""
        tok = tok or self.peek()
        return OntologyParseError(message, tok.line, tok.column)

    def expect(self, text: str) -> _Token:
        """Consume a token whose text is exactly ``text``."""
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise self.error(f"expected '{text}', found {found}")
        return self.advance()

    def expect_name(self, what: str) -> _Token:
        """Consume a non-keyword name."""
        tok = self.peek()
        if tok.kind != "name" or tok.text in KEYWORDS:
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise self.error(f"expected {what} name, found {found}")
        return self.advance()

    def reference(self, tok: _Token, kind: str) -> str:
        """Record that ``tok`` must resolve to a declaration of ``kind``."""
        self.references.append((tok.text, kind, tok.line, tok.column))
        return tok.text

    # statements
    def parse(self) -> Ontology:
        """Parse every statement, then resolve names."""
        while self.peek().kind != "eof":
            self.statement()
        return self.finish()

    def statement(self) -> None:
        """One ``.``-terminated statement."""
        tok = self.peek()
        if tok.kind != "name":
            raise self.error(f"expected a statement keyword, found {tok.text!r}")
        keyword = tok.text
        if keyword == "sensitive":
            self.advance()
            self.expect("concept")
            name = self.declare("concept")
            self.sensitive.add(name)
        elif keyword in ("concept", "role", "data", "individual"):
            self.advance()
            self.declare(keyword)
        elif keyword == "axiom":
            self.advance()
            self.axiom()
        elif keyword == "assert":
            self.advance()
            self.assertion()
        else:
            raise self.error(f"unknown statement keyword {keyword!r}")
        self.expect(".")

    def declare(self, kind: str) -> str:
        """Declare a new name of ``kind``; redeclaring any name is an error."""
        tok = self.expect_name(kind)
        if tok.text in self.declared:
            prior_kind, prior_line, _ = self.declared[tok.text]
            raise self.error(
                f"duplicate declaration of '{tok.text}' (already declared as {prior_kind} on line {prior_line})",
                tok,
            )
        self.declared[tok.text] = (kind, tok.line, tok.column)
        return tok.text

    def axiom(self) -> None:
        """``axiom <expr> => <Concept>``"""
        lhs = self.expression()
        self.expect("=>")
        rhs_tok = self.peek()
        rhs = self.expression()
        if not isinstance(rhs, Atomic):
            raise self.error("right-hand side of an axiom must be a single concept name", rhs_tok)
        self.tbox.append(Axiom(lhs, rhs.concept))

    def assertion(self) -> None:
        """``assert`` of a concept, role or data fact."""
        head = self.expect_name("concept, role or data property")
        self.expect("(")
        first = self.expect_name("individual")
        if self.peek().text == ",":
            self.advance()
            second = self.expect_name("individual")
            self.expect(")")
            self.abox.append(
                RoleAssertion(
                    self.reference(head, "role"),
                    self.reference(first, "individual"),
                    self.reference(second, "individual"),
                )
            )
            return
        self.expect(")")
        if self.peek().text == "=":
            self.advance()
            value = self.number()
            self.abox.append(
                DataAssertion(self.reference(head, "data"), self.reference(first, "individual"), value)
            )
            return
        self.abox.append(
            ConceptAssertion(self.reference(head, "concept"), self.reference(first, "individual"))
        )

    def number(self) -> Fraction:
        """Decimal literal as an exact Fraction."""
        tok = self.peek()
        if tok.kind != "number":
            raise self.error(f"expected a decimal number, found {tok.text!r}")
        self.advance()
        return parse_decimal(tok.text)

    # expressions
    def expression(self) -> ConceptExpr:
        """Conjunction of terms joined by ``and``; nested conjunctions are flattened."""
        start = self.peek()
        parts = self.flatten(self.term())
        while self.peek().kind == "name" and self.peek().text == "and":
            self.advance()
            parts.extend(self.flatten(self.term()))
        if len(parts) == 1:
            return parts[0]
        try:
            return Conjunction(tuple(parts))
        except ValueError as exc:
            raise self.error(str(exc), start) from None

    @staticmethod
    def flatten(expr: ConceptExpr) -> List[ConceptExpr]:
        if isinstance(expr, Conjunction):
            return list(expr.conjuncts)
        return [expr]

    def term(self) -> ConceptExpr:
        """Parenthesized expression, ``exists(...)``, data threshold or concept name."""
        tok = self.peek()
        if tok.text == "(":
            self.advance()
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.kind == "name" and tok.text == "exists":
            self.advance()
            self.expect("(")
            role = self.reference(self.expect_name("role"), "role")
            self.expect(",")
            if self.peek().text == "{":
                self.advance()
                individual = self.reference(self.expect_name("individual"), "individual")
                self.expect("}")
                self.expect(")")
                return ExistsNominal(role, individual)
            concept = self.reference(self.expect_name("concept"), "concept")
            self.expect(")")
            return ExistsConcept(role, concept)
        name_tok = self.expect_name("concept or data property")
        if self.peek().kind == "symbol" and self.peek().text in COMPARATORS:
            comparator = self.advance().text
            return DataThreshold(self.reference(name_tok, "data"), comparator, self.number())
        return Atomic(self.reference(name_tok, "concept"))

    def finish(self) -> Ontology:
        """Check every reference against its declaration and build the Ontology."""
        for name, kind, line, column in self.references:
            if name not in self.declared:
                raise OntologyParseError(f"undeclared name '{name}' (expected {kind})", line, column)
            declared_kind = self.declared[name][0]
            if declared_kind != kind:
                raise OntologyParseError(
                    f"'{name}' is declared as {declared_kind}, expected {kind}", line, column
                )
        by_kind: Dict[str, Set[str]] = {"concept": set(), "role": set(), "data": set(), "individual": set()}
        for name, (kind, _, _) in self.declared.items():
            by_kind[kind].add(name)
        return Ontology(
            concepts=frozenset(by_kind["concept"]),
            roles=frozenset(by_kind["role"]),
            data_properties=frozenset(by_kind["data"]),
            individuals=frozenset(by_kind["individual"]),
            tbox=tuple(self.tbox),
            sensitive_markers=frozenset(self.sensitive),
            abox=tuple(self.abox),
        )


def parse_ontology(source: Union[str, bytes]) -> Ontology:
    """
    Parse ``.fto`` text into a validated Ontology.

    Declarations may appear in any order; names are resolved once the whole
    source has been read.

    Raises:
        OntologyParseError: syntax error, undeclared name, duplicate
            declaration, non-atomic right-hand side. Carries line/column.
    """
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise OntologyParseError(f"ontology is not valid UTF-8: {exc}") from None
    return _Parser(source).parse()


def print_ontology(ontology: Ontology) -> str:
    """Canonical text: declarations sorted within kind, axioms and assertions in source order."""
    lines: List[str] = []
    for name in sorted(ontology.concepts):
        prefix = "sensitive concept" if name in ontology.sensitive_markers else "concept"
        lines.append(f"{prefix} {name}.")
    lines.extend(f"role {name}." for name in sorted(ontology.roles))
    lines.extend(f"data {name}." for name in sorted(ontology.data_properties))
    lines.extend(f"individual {name}." for name in sorted(ontology.individuals))
    lines.extend(str(axiom) for axiom in ontology.tbox)
    lines.extend(str(assertion) for assertion in ontology.abox)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Facts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactStore:
    """
    Immutable ABox: concept, role and data facts over named individuals.

    Use ``FactStoreBuilder`` to assemble one; ``data_facts`` holds at most one
    value per (property, individual).
    """
    individuals: FrozenSet[str]
    concept_facts: FrozenSet[Tuple[str, str]]
    role_facts: FrozenSet[Tuple[str, str, str]]
    data_facts: Mapping[Tuple[str, str], Fraction] = field(default_factory=dict)

    @cached_property
    def _objects(self) -> Dict[Tuple[str, str], Tuple[str, ...]]:
        index: Dict[Tuple[str, str], List[str]] = {}
        for role, subject, obj in self.role_facts:
            index.setdefault((role, subject), []).append(obj)
        return {key: tuple(sorted(objs)) for key, objs in index.items()}

    def objects(self, role: str, subject: str) -> Tuple[str, ...]:
        """Objects related to ``subject`` by ``role``, sorted."""
        return self._objects.get((role, subject), ())

    def to_text(self) -> str:
        """Canonical, line-sorted serialization (LF endings)."""
        lines = [f"individual\t{x}" for x in sorted(self.individuals)]
        lines += [f"concept\t{c}\t{x}" for c, x in sorted(self.concept_facts)]
        lines += [f"role\t{r}\t{s}\t{o}" for r, s, o in sorted(self.role_facts)]
        lines += [
            f"data\t{p}\t{x}\t{format_decimal(v)}" for (p, x), v in sorted(self.data_facts.items())
        ]
        return "\n".join(lines) + "\n"


class FactStoreBuilder:
    """Mutable accumulator producing a FactStore."""

    def __init__(self):
        self.individuals: Set[str] = set()
        self.concept_facts: Set[Tuple[str, str]] = set()
        self.role_facts: Set[Tuple[str, str, str]] = set()
        self.data_facts: Dict[Tuple[str, str], Fraction] = {}

    def add_individual(self, individual: str) -> None:
        """Register an individual with no facts."""
        self.individuals.add(individual)

    def add_concept(self, concept: str, individual: str) -> None:
        """Add ``concept(individual)``."""
        self.individuals.add(individual)
        self.concept_facts.add((concept, individual))

    def add_role(self, role: str, subject: str, obj: str) -> None:
        """Add ``role(subject, obj)``; both ends become individuals."""
        self.individuals.update((subject, obj))
        self.role_facts.add((role, subject, obj))

    def add_data(self, prop: str, individual: str, value: Fraction) -> None:
        """
        Set ``prop(individual)``.

        Raises:
            OntologyError: a different value is already stored for the pair.
        """
        value = Fraction(value)
        key = (prop, individual)
        prior = self.data_facts.get(key)
        if prior is not None and prior != value:
            raise OntologyError(
                f"conflicting values for {prop}({individual}): "
                f"{format_decimal(prior)} and {format_decimal(value)}"
            )
        self.individuals.add(individual)
        self.data_facts[key] = value

    def add_assertions(self, assertions: Iterable[Assertion]) -> None:
        """Add parsed ABox assertions."""
        for item in assertions:
            if isinstance(item, ConceptAssertion):
                self.add_concept(item.concept, item.individual)
            elif isinstance(item, RoleAssertion):
                self.add_role(item.role, item.subject, item.object)
            else:
                self.add_data(item.prop, item.individual, item.value)

    def build(self) -> FactStore:
        """Freeze into a FactStore with data facts in key order."""
        return FactStore(
            individuals=frozenset(self.individuals),
            concept_facts=frozenset(self.concept_facts),
            role_facts=frozenset(self.role_facts),
            data_facts=dict(sorted(self.data_facts.items())),
        )


def _check_vocabulary(ontology: Ontology, facts: FactStore) -> None:
    """Reject facts using names the ontology does not declare."""
    for concept, _ in facts.concept_facts:
        if concept not in ontology.concepts:
            raise OntologyError(f"fact uses unknown concept '{concept}'")
    for role, _, _ in facts.role_facts:
        if role not in ontology.roles:
            raise OntologyError(f"fact uses unknown role '{role}'")
    for prop, _ in facts.data_facts:
        if prop not in ontology.data_properties:
            raise OntologyError(f"fact uses unknown data property '{prop}'")


# ---------------------------------------------------------------------------
# Entailment
# ---------------------------------------------------------------------------

def _split_conjuncts(expr: Conjunction) -> Tuple[List[ConceptExpr], List[DataThreshold]]:
    """Separate data thresholds from the other conjuncts."""
    plain = [c for c in expr.conjuncts if not isinstance(c, DataThreshold)]
    thresholds = [c for c in expr.conjuncts if isinstance(c, DataThreshold)]
    return plain, thresholds


def satisfies(
    expr: ConceptExpr,
    individual: str,
    facts: FactStore,
    tally: Optional[CoverageTally] = None,
) -> bool:
    """
    Membership of ``individual`` in ``expr`` under the facts as given.

    A DataThreshold with no stored value evaluates to False and the missing
    (property, individual) pair is added to ``tally``. Within a conjunction
    thresholds are evaluated after the other conjuncts.
    """
    if individual not in facts.individuals:
        raise OntologyError(f"unknown individual '{individual}'")
    if isinstance(expr, Atomic):
        return (expr.concept, individual) in facts.concept_facts
    if isinstance(expr, ExistsNominal):
        return (expr.role, individual, expr.individual) in facts.role_facts
    if isinstance(expr, ExistsConcept):
        return any((expr.concept, obj) in facts.concept_facts for obj in facts.objects(expr.role, individual))
    if isinstance(expr, DataThreshold):
        value = facts.data_facts.get((expr.prop, individual))
        if value is None:
            if tally is not None:
                tally.add((expr.prop, individual))
            return False
        return _compare(value, expr.comparator, expr.threshold)
    if isinstance(expr, Conjunction):
        plain, thresholds = _split_conjuncts(expr)
        return all(satisfies(c, individual, facts, tally) for c in plain + thresholds)
    raise TypeError(f"Not a concept expression: {expr!r}")


class _Saturation:
    """Set-at-a-time evaluation state for one fixpoint computation."""

    def __init__(self, ontology: Ontology, facts: FactStore, tally: Optional[CoverageTally]):
        self.tally = tally
        self.members: Dict[str, Set[str]] = {c: set() for c in ontology.concepts}
        for concept, individual in facts.concept_facts:
            self.members[concept].add(individual)
        self.subjects: Dict[Tuple[str, str], Set[str]] = {}
        for role, subject, obj in facts.role_facts:
            self.subjects.setdefault((role, obj), set()).add(subject)
        self.objects_of_role: Dict[str, Set[str]] = {}
        for role, _, obj in facts.role_facts:
            self.objects_of_role.setdefault(role, set()).add(obj)
        self.values: Dict[str, Dict[str, Fraction]] = {}
        for (prop, individual), value in facts.data_facts.items():
            self.values.setdefault(prop, {})[individual] = value
        self.data_carriers = frozenset(x for _, x in facts.data_facts)
        # fact -> firing sequence number (-1 for asserted facts)
        self.sequence: Dict[Tuple[str, str], int] = {fact: -1 for fact in facts.concept_facts}
        self.fired_by: Dict[Tuple[str, str], int] = {}

    def evaluate(self, expr: ConceptExpr, pool: Optional[FrozenSet[str]] = None) -> Set[str]:
        """
        Individuals satisfying ``expr`` under the current members.

        A bare threshold is checked on ``pool`` when given, else on every
        individual carrying a data fact.
        """
        if isinstance(expr, Atomic):
            return set(self.members[expr.concept])
        if isinstance(expr, ExistsNominal):
            return set(self.subjects.get((expr.role, expr.individual), ()))
        if isinstance(expr, ExistsConcept):
            found: Set[str] = set()
            for obj in self.members[expr.concept] & self.objects_of_role.get(expr.role, set()):
                found |= self.subjects.get((expr.role, obj), set())
            return found
        if isinstance(expr, DataThreshold):
            candidates = self.data_carriers if pool is None else pool
            values = self.values.get(expr.prop, {})
            hits = set()
            for individual in candidates:
                value = values.get(individual)
                if value is None:
                    if self.tally is not None:
                        self.tally.add((expr.prop, individual))
                elif _compare(value, expr.comparator, expr.threshold):
                    hits.add(individual)
            return hits
        if isinstance(expr, Conjunction):
            plain, thresholds = _split_conjuncts(expr)
            result: Optional[Set[str]] = None
            for conjunct in plain:
                part = self.evaluate(conjunct)
                result = part if result is None else result & part
            for threshold in thresholds:
                result = self.evaluate(threshold, frozenset(result) if result is not None else None)
            return result if result is not None else set()
        raise TypeError(f"Not a concept expression: {expr!r}")

    def run(self, tbox: Tuple[Axiom, ...]) -> None:
        """Fire axioms round-robin until no new membership appears, recording firing order."""
        step = 0
        changed = True
        while changed:
            changed = False
            for index, axiom in enumerate(tbox):
                new = self.evaluate(axiom.lhs) - self.members[axiom.rhs]
                if not new:
                    continue
                self.members[axiom.rhs] |= new
                for individual in new:
                    self.sequence[(axiom.rhs, individual)] = step
                    self.fired_by[(axiom.rhs, individual)] = index
                step += 1
                changed = True


def materialize(ontology: Ontology, facts: FactStore, tally: Optional[CoverageTally] = None) -> FactStore:
    """
    Least fixpoint of the TBox over ``facts``.

    The result contains every input fact plus ``(rhs, x)`` for every axiom
    whose left-hand side holds for ``x``. Idempotent and monotone. Missing
    data values met while evaluating thresholds are recorded in ``tally``;
    a bare threshold is only checked on individuals carrying some data fact.
    """
    _check_vocabulary(ontology, facts)
    state = _Saturation(ontology, facts, tally)
    state.run(ontology.tbox)
    concept_facts = frozenset(
        (concept, individual) for concept, members in state.members.items() for individual in members
    )
    return FactStore(
        individuals=facts.individuals,
        concept_facts=concept_facts,
        role_facts=facts.role_facts,
        data_facts=facts.data_facts,
    )


def extension(concept: str, ontology: Ontology, facts: FactStore) -> Tuple[str, ...]:
    """Individuals entailed to belong to ``concept``, in canonical order. Expects materialized facts."""
    if concept not in ontology.concepts:
        raise OntologyError(f"unknown concept '{concept}'")
    return tuple(sorted(x for c, x in facts.concept_facts if c == concept))


class DerivationStep(NamedTuple):
    """One axiom firing that derived ``rhs(individual)``."""
    axiom: Axiom
    individual: str


def explain(ontology: Ontology, facts: FactStore, concept: str, individual: str) -> List[DerivationStep]:
    """
    One derivation of ``concept(individual)`` as axiom firings in order.

    Returns an empty list when the fact is asserted. ``facts`` may be raw or
    already materialized; asserted facts of a materialized store count as given.

    Raises:
        OntologyError: the fact is not entailed.
    """
    _check_vocabulary(ontology, facts)
    state = _Saturation(ontology, facts, None)
    state.run(ontology.tbox)
    if individual not in state.members.get(concept, set()):
        raise OntologyError(f"{concept}({individual}) is not entailed")

    steps: Dict[Tuple[str, str], int] = {}

    def visit(c: str, x: str) -> None:
        seq = state.sequence[(c, x)]
        if seq < 0 or (c, x) in steps:
            return
        axiom = ontology.tbox[state.fired_by[(c, x)]]
        for premise in _premises(axiom.lhs, x, seq):
            visit(*premise)
        steps[(c, x)] = seq

    def _premises(expr: ConceptExpr, x: str, before: int) -> List[Tuple[str, str]]:
        parts = expr.conjuncts if isinstance(expr, Conjunction) else (expr,)
        found: List[Tuple[str, str]] = []
        for part in parts:
            if isinstance(part, Atomic):
                found.append((part.concept, x))
            elif isinstance(part, ExistsConcept):
                for obj in facts.objects(part.role, x):
                    seq = state.sequence.get((part.concept, obj))
                    if seq is not None and seq < before:
                        found.append((part.concept, obj))
                        break
        return found

    visit(concept, individual)
    ordered = sorted(steps.items(), key=lambda item: (item[1], item[0]))
    return [DerivationStep(ontology.tbox[state.fired_by[fact]], fact[1]) for fact, _ in ordered]
