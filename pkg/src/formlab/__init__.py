"""Exterior algebra, positivity cones and Monge-Ampere type equations for (m,m)-forms on flat tori."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .exterior import Form, FormError, HermitianMetric, conjugate, simple_positive_form, wedge  # noqa: E402
from .hodge import hodge_star, lambda_contraction, lefschetz_L, primitive_decompose  # noqa: E402
from .positivity import PositivityVerdict, holder_gap, m_positivity, strong_verdict, weak_verdict  # noqa: E402
from .torus import FormField, MetricField, TorusGrid  # noqa: E402
