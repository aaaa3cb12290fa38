from .ontology import parse_ontology, print_ontology, materialize, extension, satisfies, explain
from .sigma import BindingConfig, ingest, build_mask, atoms, event_membership, parse_event
from .transport import (
    FeatureMatrix,
    conditional_means,
    sinkhorn,
    project_algorithm1,
    project_quantile_1d,
    reconstruction_error,
    collapse_cost,
    plot_conditional_quantiles,
)
from .audit import hsic_statistic, permutation_pvalue, conditional_gaps, audit
from .certification import Certificate, build_certificate, verify_certificate
from .pipeline import RunConfig
from .config import configure
from .errors import FairTransportError

# Example data
from . import datasets
