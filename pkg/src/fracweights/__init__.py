"""Exact and numerical checks for power-weighted strong fractional integrals."""

from .params import (
                     CaseTag,
                     Instance,
                     ProductSpace,
                     Status,
                     Verdict,
                     make_instance,
                     validate_instance,
                     verdict,
)

__version__ = "0.1.0"

__all__ = ["CaseTag", "Instance", "ProductSpace", "Status", "Verdict", "make_instance",
           "validate_instance", "verdict", "__version__"]
