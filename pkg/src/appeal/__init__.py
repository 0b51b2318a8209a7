"""Content-appeal dataset building, assessment, and enhancement pipeline."""

__version__ = "0.1.0"

from .domain import DomainConfig, SearchQuery, generate_queries, load_domain_config
from .fields import ScalarField
from .metrics import MetricReport, correlations

__all__ = [
    "DomainConfig",
    "SearchQuery",
    "generate_queries",
    "load_domain_config",
    "ScalarField",
    "MetricReport",
    "correlations",
    "__version__",
]
