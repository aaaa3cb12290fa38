"""
Dataset ingestion, mask matrix and atom partition of the bias sigma-algebra.

The mask matrix has one row per dataset row and one column per sensitive
concept (lexicographic). Its distinct rows are the atoms: every event of the
generated sigma-algebra is a union of atoms, so a finite algebra with ``G``
atoms has ``2**G`` events.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union as TypingUnion

import numpy as np
import pandas as pd

from .errors import BindingError, DatasetError, EventExpressionError, OntologyError, TrivialSigmaAlgebraError
from .ontology import FactStore, FactStoreBuilder, Ontology, extension, parse_decimal


# ---------------------------------------------------------------------------
# Binding configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoleBinding:
    """Cell value ``v`` in ``column`` asserts ``role(row, object_prefix + v)``."""
    column: str
    role: str
    object_prefix: str = ""


@dataclass(frozen=True)
class DataBinding:
    """Numeric cell asserts ``prop(target) = value``; target is the row or a role object of it."""
    column: str
    prop: str
    target: str = "row"

    @property
    def target_role(self) -> Optional[str]:
        """Role named by ``role_object:<role>``, or None for the row individual."""
        if self.target == "row":
            return None
        return self.target.split(":", 1)[1]


@dataclass(frozen=True)
class ConceptBinding:
    """Cell equal to ``equals`` asserts ``concept(target)``."""
    column: str
    concept: str
    equals: str
    target: str = "row"

    @property
    def target_role(self) -> Optional[str]:
        if self.target == "row":
            return None
        return self.target.split(":", 1)[1]


_TARGET_RE = re.compile(r"^(row|role_object:[A-Za-z_][A-Za-z0-9_]*)$")


@dataclass(frozen=True)
class BindingConfig:
    """How CSV columns map onto ontology individuals, roles and data properties."""
    individual_column: Optional[str] = None
    role_bindings: Tuple[RoleBinding, ...] = ()
    data_bindings: Tuple[DataBinding, ...] = ()
    concept_bindings: Tuple[ConceptBinding, ...] = ()
    feature_columns: Tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "BindingConfig":
        """
        Build from a parsed binding document.

        Raises:
            BindingError: missing fields or an invalid ``target``.
        """
        if not isinstance(doc, Mapping):
            raise BindingError("binding document must be a JSON object")
        try:
            individual_column = doc.get("individual_column") or None
            roles = tuple(
                RoleBinding(str(b["column"]), str(b["role"]), str(b.get("object_prefix", "")))
                for b in doc.get("role_bindings", [])
            )
            data = tuple(
                DataBinding(str(b["column"]), str(b["property"]), str(b.get("target", "row")))
                for b in doc.get("data_bindings", [])
            )
            concepts = tuple(
                ConceptBinding(str(b["column"]), str(b["concept"]), str(b["equals"]), str(b.get("target", "row")))
                for b in doc.get("concept_bindings", [])
            )
            features = tuple(str(c) for c in doc.get("feature_columns", []))
        except (KeyError, TypeError, AttributeError) as exc:
            raise BindingError(f"malformed binding document: missing or invalid field {exc}") from None
        for binding in data + concepts:
            if not _TARGET_RE.match(binding.target):
                raise BindingError(f"invalid target '{binding.target}' for column '{binding.column}'")
        return cls(individual_column, roles, data, concepts, features)

    @classmethod
    def from_json(cls, text: TypingUnion[str, bytes]) -> "BindingConfig":
        """Parse binding JSON text."""
        try:
            doc = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BindingError(f"binding is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: TypingUnion[str, Path]) -> "BindingConfig":
        """Load a binding file from disk."""
        try:
            return cls.from_json(Path(path).read_bytes())
        except OSError as exc:
            raise BindingError(f"cannot read binding file {path}: {exc}") from None

    def bound_columns(self) -> List[str]:
        """Every column the binding reads, in binding order (may repeat)."""
        cols = [self.individual_column] if self.individual_column else []
        cols += [b.column for b in self.role_bindings]
        cols += [b.column for b in self.data_bindings]
        cols += [b.column for b in self.concept_bindings]
        cols += list(self.feature_columns)
        return cols

    def validate(self, columns: Sequence[str], ontology: Ontology) -> None:
        """Check every bound column exists and every role/property/concept is declared."""
        known = set(columns)
        for column in self.bound_columns():
            if column not in known:
                raise BindingError(f"unknown column '{column}'")
        bound_roles = set()
        for b in self.role_bindings:
            if b.role not in ontology.roles:
                raise BindingError(f"column '{b.column}' is bound to undeclared role '{b.role}'")
            bound_roles.add(b.role)
        for b in self.data_bindings:
            if b.prop not in ontology.data_properties:
                raise BindingError(f"column '{b.column}' is bound to undeclared data property '{b.prop}'")
        for b in self.concept_bindings:
            if b.concept not in ontology.concepts:
                raise BindingError(f"column '{b.column}' is bound to undeclared concept '{b.concept}'")
        for b in self.data_bindings + self.concept_bindings:
            if b.target_role is not None and b.target_role not in bound_roles:
                raise BindingError(
                    f"column '{b.column}' targets objects of role '{b.target_role}', "
                    "which no role binding populates"
                )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """
    Tabular sample space: one individual per row.

    ``columns`` keeps the raw cell text; ``column_types`` is ``"numeric"``
    when every non-empty cell parses as a decimal, else ``"categorical"``.
    """
    row_ids: Tuple[str, ...]
    columns: Mapping[str, Tuple[str, ...]]
    column_types: Mapping[str, str]
    feature_columns: Tuple[str, ...]
    missing_cells: int = 0

    @property
    def n_rows(self) -> int:
        """Number of rows (individuals)."""
        return len(self.row_ids)

    def numeric(self, column: str) -> np.ndarray:
        """Column as float64; empty cells become NaN."""
        if self.column_types.get(column) != "numeric":
            raise DatasetError(f"column '{column}' is not numeric")
        return np.array(
            [float(parse_decimal(v)) if v != "" else np.nan for v in self.columns[column]],
            dtype=np.float64,
        )


def _column_type(values: Sequence[str]) -> str:
    """``"numeric"`` when every non-empty cell parses as a decimal."""
    for v in values:
        if v == "":
            continue
        try:
            parse_decimal(v)
        except ValueError:
            return "categorical"
    return "numeric"


def read_csv(path: TypingUnion[str, Path]) -> pd.DataFrame:
    """RFC-4180 CSV with a header row, every cell kept as text."""
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            na_filter=True,
            keep_default_na=False,
            na_values=[],
            encoding="utf-8",
        )
    except FileNotFoundError:
        raise DatasetError(f"dataset file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetError(f"malformed CSV {path}: {exc}") from None
    if len(frame) == 0:
        raise DatasetError(f"dataset {path} has no rows")
    # only fields missing from a short row become NaN; empty cells stay ""
    ragged = frame.isna().any(axis=1).to_numpy()
    if ragged.any():
        raise DatasetError(
            f"malformed CSV {path}: row {int(ragged.argmax()) + 1} has fewer fields than the header"
        )
    return frame


def ingest(
    dataset_file: TypingUnion[str, Path],
    binding: BindingConfig,
    ontology: Ontology,
) -> Tuple[Dataset, FactStore]:
    """
    Read a CSV and assert its ABox facts according to ``binding``.

    The FactStore is seeded with the ontology's own assertions. Empty bound
    cells emit no fact and increment ``Dataset.missing_cells``.

    Raises:
        DatasetError: malformed CSV, type mismatch, duplicate row id,
            conflicting data values.
        BindingError: unknown column, role, property or concept.
    """
    frame = read_csv(dataset_file)
    binding.validate(list(frame.columns), ontology)
    n = len(frame)
    columns = {name: tuple(frame[name].tolist()) for name in frame.columns}
    column_types = {name: _column_type(values) for name, values in columns.items()}

    if binding.individual_column:
        row_ids = columns[binding.individual_column]
        if any(v == "" for v in row_ids):
            raise DatasetError(f"empty individual id in column '{binding.individual_column}'")
    else:
        row_ids = tuple(f"row{i + 1}" for i in range(n))
    seen = set()
    for row_id in row_ids:
        if row_id in seen:
            raise DatasetError(f"duplicate row id '{row_id}'")
        seen.add(row_id)

    for name in list(binding.feature_columns) + [b.column for b in binding.data_bindings]:
        if column_types[name] != "numeric":
            bad = next(v for v in columns[name] if v != "" and _column_type([v]) != "numeric")
            raise DatasetError(f"type mismatch: non-numeric value '{bad}' in numeric column '{name}'")
    for name in binding.feature_columns:
        if any(v == "" for v in columns[name]):
            raise DatasetError(f"feature column '{name}' has empty cells")

    builder = FactStoreBuilder()
    builder.add_assertions(ontology.abox)
    missing = 0
    try:
        for i, row_id in enumerate(row_ids):
            builder.add_individual(row_id)
            role_objects: Dict[str, str] = {}
            for b in binding.role_bindings:
                value = columns[b.column][i]
                if value == "":
                    missing += 1
                    continue
                obj = f"{b.object_prefix}{value}"
                builder.add_role(b.role, row_id, obj)
                role_objects[b.role] = obj
            for b in binding.data_bindings:
                value = columns[b.column][i]
                target = row_id if b.target_role is None else role_objects.get(b.target_role)
                if value == "" or target is None:
                    missing += 1
                    continue
                builder.add_data(b.prop, target, parse_decimal(value))
            for b in binding.concept_bindings:
                value = columns[b.column][i]
                target = row_id if b.target_role is None else role_objects.get(b.target_role)
                if value == "" or target is None:
                    missing += 1
                    continue
                if value == b.equals:
                    builder.add_concept(b.concept, target)
    except OntologyError as exc:
        raise DatasetError(str(exc)) from None

    dataset = Dataset(
        row_ids=tuple(row_ids),
        columns=columns,
        column_types=column_types,
        feature_columns=tuple(binding.feature_columns),
        missing_cells=missing,
    )
    return dataset, builder.build()


# ---------------------------------------------------------------------------
# Mask matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskMatrix:
    """N x k membership bits; column j is the extension of ``concepts[j]``."""
    concepts: Tuple[str, ...]
    bits: np.ndarray
    row_ids: Tuple[str, ...]

    def to_text(self) -> str:
        """Canonical serialization: header of concept names, then one 0/1 line per row, LF endings."""
        lines = [",".join(self.concepts)]
        lines += ["".join("1" if b else "0" for b in row) for row in self.bits]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        """Hex digest of ``to_text()``."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @property
    def shape(self) -> Tuple[int, int]:
        """``(N, k)``"""
        return self.bits.shape


def build_mask(
    ontology: Ontology,
    facts: FactStore,
    dataset: Dataset,
    allow_trivial: bool = False,
) -> MaskMatrix:
    """
    Mask over the sensitive concepts for the dataset rows.

    ``facts`` must already be materialized; each entry is then a set lookup.

    Raises:
        TrivialSigmaAlgebraError: no sensitive concepts and ``allow_trivial`` is False.
    """
    concepts = ontology.sensitive_concepts
    if not concepts and not allow_trivial:
        raise TrivialSigmaAlgebraError(
            "ontology declares no sensitive concepts; the bias sigma-algebra would be trivial "
            "(pass --allow-trivial to proceed anyway)"
        )
    bits = np.zeros((dataset.n_rows, len(concepts)), dtype=np.uint8)
    for j, concept in enumerate(concepts):
        members = set(extension(concept, ontology, facts))
        bits[:, j] = [row_id in members for row_id in dataset.row_ids]
    return MaskMatrix(concepts=concepts, bits=bits, row_ids=dataset.row_ids)


# ---------------------------------------------------------------------------
# Atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomPartition:
    """
    Rows grouped by identical mask signature.

    Atom ids follow the lexicographic order of signatures, so the partition
    does not depend on row order.
    """
    atom_of: np.ndarray
    atom_signatures: Tuple[Tuple[int, ...], ...]
    atom_sizes: np.ndarray = field(repr=False)

    @property
    def n_atoms(self) -> int:
        """Number of non-empty atoms."""
        return len(self.atom_signatures)

    @property
    def n_rows(self) -> int:
        return int(self.atom_of.shape[0])

    @property
    def algebra_size(self) -> int:
        """Number of events in the generated sigma-algebra."""
        return 2 ** self.n_atoms

    def members(self, atom: int) -> np.ndarray:
        """Row indices belonging to ``atom``, ascending."""
        return np.flatnonzero(self.atom_of == atom)

    def to_dict(self, concepts: Sequence[str], row_ids: Sequence[str]) -> dict:
        """Atom listing written to ``atoms.json``."""
        return {
            "concepts": list(concepts),
            "n_atoms": self.n_atoms,
            "atoms": [
                {
                    "id": g,
                    "signature": "".join(str(b) for b in signature),
                    "concepts": [c for c, b in zip(concepts, signature) if b],
                    "size": int(self.atom_sizes[g]),
                    "rows": [row_ids[i] for i in self.members(g)],
                }
                for g, signature in enumerate(self.atom_signatures)
            ],
        }

    def __repr__(self) -> str:
        """Signature and row count per atom."""
        lines = [f"AtomPartition ({self.n_rows} rows, {self.n_atoms} atoms)"]
        for g, signature in enumerate(self.atom_signatures):
            sig = "".join(str(b) for b in signature) or "(empty)"
            lines.append(f"   atom {g}: {sig} ({int(self.atom_sizes[g]):,} rows)")
        return "\n".join(lines)


def atoms(mask: MaskMatrix) -> AtomPartition:
    """Partition rows by unique mask row."""
    n, k = mask.bits.shape
    if n == 0:
        raise DatasetError("mask has no rows")
    if k == 0:
        return AtomPartition(
            atom_of=np.zeros(n, dtype=np.int64),
            atom_signatures=((),),
            atom_sizes=np.array([n], dtype=np.int64),
        )
    unique, inverse, counts = np.unique(mask.bits, axis=0, return_inverse=True, return_counts=True)
    return AtomPartition(
        atom_of=np.asarray(inverse, dtype=np.int64).reshape(-1),
        atom_signatures=tuple(tuple(int(b) for b in row) for row in unique),
        atom_sizes=np.asarray(counts, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Generator:
    """The event ``[[C_index]]``."""
    index: int


@dataclass(frozen=True)
class Complement:
    """Set complement within the sample space."""
    operand: "EventExpr"


@dataclass(frozen=True)
class Intersection:
    """``left & right``"""
    left: "EventExpr"
    right: "EventExpr"


@dataclass(frozen=True)
class Union:
    """``left | right``"""
    left: "EventExpr"
    right: "EventExpr"


EventExpr = TypingUnion[Generator, Complement, Intersection, Union]

_EVENT_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|([~!&|()]))")


def parse_event(text: str, concepts: Sequence[str] = ()) -> EventExpr:
    """
    Parse ``~``, ``&``, ``|`` and parentheses over generator indices or concept names.

    ``~`` binds tighter than ``&``, which binds tighter than ``|``.
    """
    tokens: List[str] = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = _EVENT_TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            raise EventExpressionError(f"unexpected character at position {pos} in {text!r}")
        tokens.append(match.group(match.lastindex))
        pos = match.end()
    if not tokens:
        raise EventExpressionError("empty event expression")
    position = 0

    def peek() -> Optional[str]:
        return tokens[position] if position < len(tokens) else None

    def take() -> str:
        nonlocal position
        tok = tokens[position]
        position += 1
        return tok

    def union() -> EventExpr:
        node = intersection()
        while peek() == "|":
            take()
            node = Union(node, intersection())
        return node

    def intersection() -> EventExpr:
        node = unary()
        while peek() == "&":
            take()
            node = Intersection(node, unary())
        return node

    def unary() -> EventExpr:
        tok = peek()
        if tok is None:
            raise EventExpressionError(f"unexpected end of expression {text!r}")
        if tok in ("~", "!"):
            take()
            return Complement(unary())
        if tok == "(":
            take()
            node = union()
            if peek() != ")":
                raise EventExpressionError(f"missing ')' in {text!r}")
            take()
            return node
        take()
        if tok.isdigit():
            return Generator(int(tok))
        if tok in concepts:
            return Generator(list(concepts).index(tok))
        raise EventExpressionError(f"unknown generator {tok!r}")

    node = union()
    if peek() is not None:
        raise EventExpressionError(f"unexpected token {peek()!r} in {text!r}")
    return node


def _evaluate_on_atoms(expr: EventExpr, signatures: np.ndarray, k: int) -> np.ndarray:
    """Boolean vector over atoms for ``expr``."""
    if isinstance(expr, Generator):
        if not 0 <= expr.index < k:
            raise EventExpressionError(f"generator index {expr.index} out of range for k={k}")
        return signatures[:, expr.index].astype(bool)
    if isinstance(expr, Complement):
        return ~_evaluate_on_atoms(expr.operand, signatures, k)
    if isinstance(expr, Intersection):
        return _evaluate_on_atoms(expr.left, signatures, k) & _evaluate_on_atoms(expr.right, signatures, k)
    if isinstance(expr, Union):
        return _evaluate_on_atoms(expr.left, signatures, k) | _evaluate_on_atoms(expr.right, signatures, k)
    raise EventExpressionError(f"malformed event expression {expr!r}")


def event_membership(
    expr: TypingUnion[EventExpr, str],
    partition: AtomPartition,
    mask: MaskMatrix,
) -> Tuple[int, ...]:
    """
    Rows (0-based) of the event described by ``expr``.

    The expression is evaluated once per atom and expanded to rows, so the
    result is always a union of atoms.
    """
    if isinstance(expr, str):
        expr = parse_event(expr, mask.concepts)
    k = len(mask.concepts)
    signatures = np.array(partition.atom_signatures, dtype=np.uint8).reshape(partition.n_atoms, k)
    selected = _evaluate_on_atoms(expr, signatures, k)
    return tuple(int(i) for i in np.flatnonzero(selected[partition.atom_of]))
