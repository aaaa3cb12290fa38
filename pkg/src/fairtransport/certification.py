"""
Tamper-evident certificates.

A certificate binds the SHA-256 digests of the raw ontology, binding and
dataset bytes, the digest of the canonical mask serialization, the projection
method and the audit results. It is serialized as canonical JSON: sorted keys,
no insignificant whitespace, floats in shortest round-trip form.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from . import config
from .audit import AuditReport, audit
from .errors import CertificateSchemaError, FairTransportError
from .sigma import MaskMatrix
from .transport import FairProjection

PathLike = Union[str, Path]

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")
DIGEST_FIELDS = ("ontology_sha256", "binding_sha256", "dataset_sha256", "mask_sha256")
REL_TOL = 1e-9


def canonical_json(doc: Any) -> str:
    """Sorted keys, no insignificant whitespace, UTF-8, NaN rejected."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    """Hex SHA-256 of ``data``."""
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    """Digest of the exact file bytes."""
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                digest.update(chunk)
    except OSError as exc:
        raise FairTransportError(f"cannot read {path}: {exc}") from None
    return digest.hexdigest()


def utc_now() -> str:
    """Current UTC time as ``YYYY-MM-DDTHH:MM:SSZ``."""
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Certificate:
    """
    Reproducibility record for one certify run.

    Digests pin the three input files and the mask; ``method``, ``epsilon``,
    ``features`` and the HSIC seed and permutation count are what a verifier
    needs to re-run exactly. Serialized with ``canonical_json``.
    """
    schema_version: str
    ontology_sha256: str
    binding_sha256: str
    dataset_sha256: str
    mask_sha256: str
    method: str
    epsilon: Optional[float]
    reconstruction_error: float
    hsic: Mapping[str, Any]
    gaps: Mapping[str, Any]
    missing_data_warnings: int
    created_utc: str
    context: str = config.CERTIFICATE_CONTEXT
    features: Sequence[str] = ()
    allow_trivial: bool = False
    p_threshold: float = 0.05

    def to_dict(self) -> dict:
        """Certificate document; ``hsic`` and ``gaps`` are copied."""
        return {
            "schema_version": self.schema_version,
            "ontology_sha256": self.ontology_sha256,
            "binding_sha256": self.binding_sha256,
            "dataset_sha256": self.dataset_sha256,
            "mask_sha256": self.mask_sha256,
            "method": self.method,
            "epsilon": self.epsilon,
            "reconstruction_error": self.reconstruction_error,
            "hsic": dict(self.hsic),
            "gaps": dict(self.gaps),
            "missing_data_warnings": self.missing_data_warnings,
            "created_utc": self.created_utc,
            "context": self.context,
            "features": list(self.features),
            "allow_trivial": self.allow_trivial,
            "p_threshold": self.p_threshold,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def seed(self) -> int:
        return self.hsic["seed"]

    @property
    def permutations(self) -> int:
        """Permutation count of the recorded HSIC test."""
        return self.hsic["permutations"]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Certificate":
        """
        Validate then build.

        Raises:
            CertificateSchemaError: the document does not match the schema.
        """
        validate_certificate(doc)
        return cls(
            schema_version=doc["schema_version"],
            ontology_sha256=doc["ontology_sha256"],
            binding_sha256=doc["binding_sha256"],
            dataset_sha256=doc["dataset_sha256"],
            mask_sha256=doc["mask_sha256"],
            method=doc["method"],
            epsilon=doc["epsilon"],
            reconstruction_error=doc["reconstruction_error"],
            hsic=dict(doc["hsic"]),
            gaps=dict(doc["gaps"]),
            missing_data_warnings=doc["missing_data_warnings"],
            created_utc=doc["created_utc"],
            context=doc["context"],
            features=tuple(doc.get("features", ())),
            allow_trivial=doc.get("allow_trivial", False),
            p_threshold=doc.get("p_threshold", 0.05),
        )

    @classmethod
    def from_json(cls, text: Union[str, bytes]) -> "Certificate":
        """Parse certificate JSON text."""
        try:
            doc = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CertificateSchemaError(f"certificate is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: PathLike) -> "Certificate":
        """Read and validate a certificate file."""
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise FairTransportError(f"cannot read certificate {path}: {exc}") from None
        return cls.from_json(data)


def _is_number(value: Any) -> bool:
    """Finite int or float, bools excluded."""
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_count(value: Any) -> bool:
    """Non-negative int, bools excluded."""
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def validate_certificate(doc: Any) -> None:
    """
    Raises:
        CertificateSchemaError: on the first field that does not match the schema.
    """
    if not isinstance(doc, Mapping):
        raise CertificateSchemaError("certificate must be a JSON object")

    def require(name: str, check, what: str, container: Mapping = doc, prefix: str = "") -> None:
        if name not in container:
            raise CertificateSchemaError(f"missing field '{prefix}{name}'")
        if not check(container[name]):
            raise CertificateSchemaError(f"field '{prefix}{name}' must be {what}, got {container[name]!r}")

    require("schema_version", lambda v: v == config.SCHEMA_VERSION, f"'{config.SCHEMA_VERSION}'")
    for name in DIGEST_FIELDS:
        require(name, lambda v: isinstance(v, str) and bool(_DIGEST_RE.match(v)), "64 lowercase hex characters")
    require("method", lambda v: v in config.METHODS, f"one of {config.METHODS}")
    require("epsilon", lambda v: v is None or (_is_number(v) and v > 0), "null or a positive number")
    require("reconstruction_error", lambda v: _is_number(v) and v >= 0, "a non-negative number")
    require("missing_data_warnings", _is_count, "a non-negative integer")
    require("created_utc", _is_timestamp, "an RFC-3339 UTC timestamp")
    require("context", lambda v: isinstance(v, str) and v != "", "a non-empty string")
    require("hsic", lambda v: isinstance(v, Mapping), "an object")
    require("gaps", lambda v: isinstance(v, Mapping), "an object")

    hsic = doc["hsic"]
    require("statistic", lambda v: _is_number(v) and v >= 0, "a non-negative number", hsic, "hsic.")
    require("p_value", lambda v: _is_number(v) and 0 < v <= 1, "a number in (0, 1]", hsic, "hsic.")
    require("permutations", _is_count, "a non-negative integer", hsic, "hsic.")
    require("seed", lambda v: _is_count(v) and v < 2 ** 64, "a 64-bit non-negative integer", hsic, "hsic.")
    require("bandwidth", lambda v: _is_number(v) and v > 0, "a positive number", hsic, "hsic.")
    gaps = doc["gaps"]
    for name in ("max_mean_gap", "max_w2_gap_1d"):
        require(name, lambda v: _is_number(v) and v >= 0, "a non-negative number", gaps, "gaps.")

    if "features" in doc and not (isinstance(doc["features"], list) and all(isinstance(c, str) for c in doc["features"])):
        raise CertificateSchemaError("field 'features' must be a list of column names")
    if "allow_trivial" in doc and not isinstance(doc["allow_trivial"], bool):
        raise CertificateSchemaError("field 'allow_trivial' must be a boolean")
    if "p_threshold" in doc and not (_is_number(doc["p_threshold"]) and 0 < doc["p_threshold"] <= 1):
        raise CertificateSchemaError("field 'p_threshold' must be a number in (0, 1]")


def _is_timestamp(value: Any) -> bool:
    """ISO-8601 with an explicit offset or ``Z``."""
    if not isinstance(value, str):
        return False
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        return False
    return parsed.tzinfo is not None


def build_certificate(
    ontology_path: PathLike,
    binding_path: PathLike,
    dataset_path: PathLike,
    mask: MaskMatrix,
    projection: FairProjection,
    report: AuditReport,
    missing_data_warnings: int,
    features: Sequence[str] = (),
    allow_trivial: bool = False,
    p_threshold: Optional[float] = None,
    created_utc: Optional[str] = None,
) -> Certificate:
    """
    Assemble a certificate from the input files and the computed results.

    ``created_utc`` defaults to the current time; pass a fixed value for
    byte-identical output.
    """
    if projection.Y.shape[0] != mask.bits.shape[0]:
        raise FairTransportError(
            f"projection has {projection.Y.shape[0]} rows but mask has {mask.bits.shape[0]}"
        )
    return Certificate(
        schema_version=config.SCHEMA_VERSION,
        ontology_sha256=sha256_file(ontology_path),
        binding_sha256=sha256_file(binding_path),
        dataset_sha256=sha256_file(dataset_path),
        mask_sha256=mask.sha256(),
        method=projection.method,
        epsilon=projection.epsilon,
        reconstruction_error=projection.reconstruction_error,
        hsic=report.hsic.to_dict(),
        gaps=report.gaps.to_dict(),
        missing_data_warnings=missing_data_warnings,
        created_utc=created_utc or utc_now(),
        features=tuple(features),
        allow_trivial=allow_trivial,
        p_threshold=config.DEFAULT_P_THRESHOLD if p_threshold is None else p_threshold,
    )


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

MATCH, MISMATCH, ERROR, INFO = "MATCH", "MISMATCH", "ERROR", "INFO"


@dataclass(frozen=True)
class FieldCheck:
    """Outcome for one certificate field."""
    name: str
    expected: Any
    recomputed: Any
    status: str

    def to_dict(self) -> dict:
        """Row of the ``--json`` report."""
        return {"field": self.name, "expected": self.expected, "recomputed": self.recomputed, "status": self.status}


@dataclass(frozen=True)
class VerificationReport:
    """Per-field outcome of re-running the pipeline against a certificate."""
    checks: List[FieldCheck]
    error: Optional[str] = None
    passed: bool = field(init=False)

    def __post_init__(self):
        ok = self.error is None and all(c.status in (MATCH, INFO) for c in self.checks)
        object.__setattr__(self, "passed", ok)

    @property
    def status(self) -> str:
        """``PASS`` or ``MISMATCH``."""
        return "PASS" if self.passed else "MISMATCH"

    def check(self, name: str) -> FieldCheck:
        """Check named ``name``; raises StopIteration when absent."""
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        """Status, error and one entry per check."""
        return {"status": self.status, "error": self.error, "fields": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def __repr__(self) -> str:
        """Aligned field / status / recomputed table."""
        width = max(len(c.name) for c in self.checks) if self.checks else 10
        lines = [f"Certificate verification: {self.status}", "=" * 60]
        for c in self.checks:
            lines.append(f"{c.name:<{width}}  {c.status:<8}  {_short(c.recomputed)}")
        if self.error:
            lines.append(f"\nRe-run failed: {self.error}")
        return "\n".join(lines)

    def _repr_html_(self) -> str:
        colors = {MATCH: "#2e7d32", MISMATCH: "#c62828", ERROR: "#c62828", INFO: "#888"}
        rows = "".join(
            f"<tr><td style='padding: 2px 8px;'>{c.name}</td>"
            f"<td style='padding: 2px 8px; color: {colors[c.status]};'><strong>{c.status}</strong></td>"
            f"<td style='padding: 2px 8px;'><code>{_short(c.recomputed)}</code></td></tr>"
            for c in self.checks
        )
        error = f"<p style='color: #c62828;'>Re-run failed: {self.error}</p>" if self.error else ""
        return (
            "<div style='font-family: -apple-system, BlinkMacSystemFont, sans-serif; padding: 10px;'>"
            f"<h3>Certificate verification: {self.status}</h3>{error}<table>{rows}</table></div>"
        )


def _short(value: Any) -> str:
    """Digests truncated for display."""
    if isinstance(value, str) and _DIGEST_RE.match(value):
        return value[:16] + "..."
    return "-" if value is None else repr(value)


def _close(expected: float, recomputed: float) -> bool:
    """Relative agreement within ``REL_TOL``."""
    return math.isclose(expected, recomputed, rel_tol=REL_TOL, abs_tol=1e-15)


def verify_certificate(
    cert: Certificate,
    ontology_path: PathLike,
    binding_path: PathLike,
    dataset_path: PathLike,
) -> VerificationReport:
    """
    Recompute input digests, re-run compile, projection and audit with the
    certificate's method, epsilon, seed and permutation count, and compare.

    PASS requires every digest to match, the bound feature columns to equal
    the certificate's ``features`` in order, and the reconstruction error and
    HSIC statistic to agree within 1e-9 relative. The p-value and missing-data
    count are reported but do not affect the outcome; the timestamp is
    ignored. A re-run that fails marks the derived fields as ERROR.

    Raises:
        FairTransportError: an input file is missing or unreadable.
    """
    from .pipeline import compile_inputs, project

    checks: List[FieldCheck] = []
    for name, path in (
        ("ontology_sha256", ontology_path),
        ("binding_sha256", binding_path),
        ("dataset_sha256", dataset_path),
    ):
        recomputed = sha256_file(path)
        expected = getattr(cert, name)
        checks.append(FieldCheck(name, expected, recomputed, MATCH if recomputed == expected else MISMATCH))

    derived = ("features", "mask_sha256", "reconstruction_error", "hsic.statistic", "hsic.p_value", "missing_data_warnings")
    expected_values: Dict[str, Any] = {
        "features": list(cert.features),
        "mask_sha256": cert.mask_sha256,
        "reconstruction_error": cert.reconstruction_error,
        "hsic.statistic": cert.hsic["statistic"],
        "hsic.p_value": cert.hsic["p_value"],
        "missing_data_warnings": cert.missing_data_warnings,
    }
    try:
        compiled = compile_inputs(ontology_path, binding_path, dataset_path, cert.allow_trivial)
        projection = project(compiled, cert.method, cert.epsilon)
        report = audit(projection.Y, compiled.partition, cert.permutations, cert.seed)
    except FairTransportError as exc:
        for name in derived:
            checks.append(FieldCheck(name, expected_values[name], None, ERROR))
        return VerificationReport(checks, error=str(exc))

    columns = list(compiled.dataset.feature_columns)
    # certificates without a feature list only report the columns
    if cert.features:
        checks.append(FieldCheck("features", list(cert.features), columns,
                                 MATCH if columns == list(cert.features) else MISMATCH))
    else:
        checks.append(FieldCheck("features", [], columns, INFO))
    mask_digest = compiled.mask.sha256()
    checks.append(FieldCheck("mask_sha256", cert.mask_sha256, mask_digest,
                             MATCH if mask_digest == cert.mask_sha256 else MISMATCH))
    checks.append(FieldCheck(
        "reconstruction_error", cert.reconstruction_error, projection.reconstruction_error,
        MATCH if _close(cert.reconstruction_error, projection.reconstruction_error) else MISMATCH,
    ))
    checks.append(FieldCheck(
        "hsic.statistic", cert.hsic["statistic"], report.hsic.statistic,
        MATCH if _close(cert.hsic["statistic"], report.hsic.statistic) else MISMATCH,
    ))
    checks.append(FieldCheck("hsic.p_value", cert.hsic["p_value"], report.hsic.p_value, INFO))
    checks.append(FieldCheck("missing_data_warnings", cert.missing_data_warnings,
                             compiled.missing_data_warnings, INFO))
    return VerificationReport(checks)
