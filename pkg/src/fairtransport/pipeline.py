"""
Pipeline stages: compile, project, audit, certify and verify.

Every stage recomputes its upstream results in memory from the input files,
so each persisted output is a pure function of the input bytes and the
RunConfig. ``run.json`` is written next to the outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import FrozenSet, Optional, Tuple, Union

import numpy as np

from . import config
from .audit import AuditReport, audit
from .certification import Certificate, VerificationReport, build_certificate, verify_certificate
from .errors import FairTransportError
from .ontology import CoverageTally, FactStore, Ontology, materialize, parse_ontology
from .sigma import AtomPartition, BindingConfig, Dataset, MaskMatrix, atoms, build_mask, ingest
from .transport import FairProjection, FeatureMatrix, project_algorithm1, project_quantile_1d

PathLike = Union[str, Path]


def resolve_seed(seed: Optional[int] = None) -> int:
    """Explicit seed, else ``FAIRTRANSPORT_SEED``, else fresh OS entropy."""
    if seed is not None:
        return int(seed)
    env_seed = config.seed_from_env()
    if env_seed is not None:
        return env_seed
    return int(np.random.SeedSequence().entropy % 2 ** 63)


@dataclass
class RunConfig:
    """Everything a stage needs to reproduce its outputs."""
    ontology: str
    binding: str
    dataset: str
    out_dir: str
    seed: int
    method: str = "algorithm1"
    epsilon: Optional[float] = None
    permutations: int = 999
    p_threshold: float = 0.05
    allow_trivial: bool = False

    @classmethod
    def create(
        cls,
        ontology: PathLike,
        binding: PathLike,
        dataset: PathLike,
        out_dir: PathLike,
        method: Optional[str] = None,
        epsilon: Optional[float] = None,
        permutations: Optional[int] = None,
        seed: Optional[int] = None,
        p_threshold: Optional[float] = None,
        allow_trivial: bool = False,
    ) -> "RunConfig":
        """Fill unset values from ``fairtransport.config`` and resolve the seed."""
        method = method or config.DEFAULT_METHOD
        if method not in config.METHODS:
            raise FairTransportError(f"unknown method '{method}', expected one of {config.METHODS}")
        if epsilon is not None and not epsilon > 0:
            raise FairTransportError(f"epsilon must be positive, got {epsilon}")
        return cls(
            ontology=str(ontology),
            binding=str(binding),
            dataset=str(dataset),
            out_dir=str(out_dir),
            seed=resolve_seed(seed),
            method=method,
            epsilon=epsilon,
            permutations=config.DEFAULT_PERMUTATIONS if permutations is None else permutations,
            p_threshold=config.DEFAULT_P_THRESHOLD if p_threshold is None else p_threshold,
            allow_trivial=allow_trivial,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self) -> Path:
        """Write ``run.json`` into the output directory."""
        path = _out_dir(self) / "run.json"
        _write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, path: PathLike) -> "RunConfig":
        """Read a ``run.json`` written by ``save``."""
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Compiled:
    """Output of the compile stage, kept in memory for downstream stages."""
    ontology: Ontology
    facts: FactStore
    dataset: Dataset
    mask: MaskMatrix
    partition: AtomPartition
    missing_values: FrozenSet[Tuple[str, str]] = frozenset()

    @property
    def missing_data_warnings(self) -> int:
        """Empty bound cells plus (property, individual) values a threshold needed but did not find."""
        return self.dataset.missing_cells + len(self.missing_values)

    def features(self) -> FeatureMatrix:
        """Bound feature columns as a FeatureMatrix."""
        return FeatureMatrix.from_dataset(self.dataset)


def _out_dir(cfg: RunConfig) -> Path:
    """Create the output directory if needed."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    """Sorted, indented JSON with a trailing newline; NaN is rejected."""
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _read_ontology(path: PathLike) -> Ontology:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FairTransportError(f"cannot read ontology file {path}: {exc}") from None
    return parse_ontology(data)


# ---------------------------------------------------------------------------
# In-memory stages
# ---------------------------------------------------------------------------

def compile_inputs(
    ontology_path: PathLike,
    binding_path: PathLike,
    dataset_path: PathLike,
    allow_trivial: bool = False,
) -> Compiled:
    """Parse, ingest, materialize, build the mask and its atoms."""
    ontology = _read_ontology(ontology_path)
    binding = BindingConfig.load(binding_path)
    dataset, facts = ingest(dataset_path, binding, ontology)
    tally: CoverageTally = set()
    facts = materialize(ontology, facts, tally)
    mask = build_mask(ontology, facts, dataset, allow_trivial=allow_trivial)
    return Compiled(ontology, facts, dataset, mask, atoms(mask), frozenset(tally))


def project(compiled: Compiled, method: str, epsilon: Optional[float] = None) -> FairProjection:
    """
    Run the named projection on the compiled features.

    Raises:
        FairTransportError: unknown method.
        TransportError: ``quantile1d`` on more than one column.
    """
    X = compiled.features()
    if method == "quantile1d":
        return project_quantile_1d(X, compiled.partition)
    if method == "algorithm1":
        return project_algorithm1(X, compiled.partition, epsilon)
    raise FairTransportError(f"unknown method '{method}', expected one of {config.METHODS}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_compile(cfg: RunConfig) -> Compiled:
    """Write ``mask.fmm`` and ``atoms.json``."""
    compiled = compile_inputs(cfg.ontology, cfg.binding, cfg.dataset, cfg.allow_trivial)
    out = _out_dir(cfg)
    (out / "mask.fmm").write_bytes(compiled.mask.to_text().encode("utf-8"))
    _write_json(out / "atoms.json", compiled.partition.to_dict(compiled.mask.concepts, compiled.mask.row_ids))
    cfg.save()
    print(
        f"Compiled mask: k={len(compiled.mask.concepts)}, atoms={compiled.partition.n_atoms}, "
        f"missing-data warnings={compiled.missing_data_warnings}"
    )
    return compiled


def cmd_project(cfg: RunConfig, compiled: Optional[Compiled] = None) -> FairProjection:
    """Write ``fair.csv`` and ``diagnostics.json``."""
    compiled = compiled or cmd_compile(cfg)
    projection = project(compiled, cfg.method, cfg.epsilon)
    out = _out_dir(cfg)
    projection.to_csv(out / "fair.csv")
    _write_json(out / "diagnostics.json", projection.diagnostics())
    if projection.plan is not None and not projection.plan.converged:
        print(
            f"Warning: Sinkhorn stopped after {projection.plan.iterations} iterations "
            f"(marginal residual {projection.plan.marginal_residual:.3e})."
        )
    if projection.grid_capped:
        print(f"Warning: quantile grid capped at {projection.grid_levels} levels; "
              f"independence slack {projection.independence_slack:.3e}.")
    print(f"Projected with {projection.method}: reconstruction error {projection.reconstruction_error:.6g}")
    return projection


def cmd_audit(
    cfg: RunConfig,
    raw: bool = False,
    compiled: Optional[Compiled] = None,
    projection: Optional[FairProjection] = None,
    show_progress: bool = False,
) -> AuditReport:
    """
    Write ``audit.json`` for the fair representation, or ``audit_raw.json``
    for the original features when ``raw`` is set.
    """
    compiled = compiled or compile_inputs(cfg.ontology, cfg.binding, cfg.dataset, cfg.allow_trivial)
    if raw:
        values = compiled.features().values
    else:
        projection = projection or cmd_project(cfg, compiled)
        values = projection.Y
    report = audit(values, compiled.partition, cfg.permutations, cfg.seed, raw=raw, show_progress=show_progress)
    _write_json(_out_dir(cfg) / ("audit_raw.json" if raw else "audit.json"), report.to_dict())
    cfg.save()
    if report.vacuous:
        print("Warning: single atom, the HSIC test is vacuous.")
    print(f"Audit: HSIC={report.hsic.statistic:.6g}, p={report.hsic.p_value:.4f} "
          f"({report.hsic.permutations} permutations, seed {report.hsic.seed})")
    return report


def cmd_certify(
    cfg: RunConfig,
    created_utc: Optional[str] = None,
    show_progress: bool = False,
) -> Certificate:
    """Run the whole chain and write every intermediate plus ``cert.json``."""
    compiled = cmd_compile(cfg)
    projection = cmd_project(cfg, compiled)
    report = cmd_audit(cfg, compiled=compiled, projection=projection, show_progress=show_progress)
    cert = build_certificate(
        ontology_path=cfg.ontology,
        binding_path=cfg.binding,
        dataset_path=cfg.dataset,
        mask=compiled.mask,
        projection=projection,
        report=report,
        missing_data_warnings=compiled.missing_data_warnings,
        features=compiled.dataset.feature_columns,
        allow_trivial=cfg.allow_trivial,
        p_threshold=cfg.p_threshold,
        created_utc=created_utc,
    )
    path = _out_dir(cfg) / "cert.json"
    path.write_bytes(cert.to_json().encode("utf-8"))
    print(f"Certificate written to {path}")
    return cert


def cmd_verify(
    cert_path: PathLike,
    ontology_path: PathLike,
    binding_path: PathLike,
    dataset_path: PathLike,
) -> VerificationReport:
    """Load a certificate and re-run it against the given input files."""
    cert = Certificate.load(cert_path)
    return verify_certificate(cert, ontology_path, binding_path, dataset_path)
