"""Bayesian brain mapping (BBM).

Population-derived priors on network topography and functional
connectivity, and single-subject Bayesian fitting that uses them.
"""

__version__ = "0.1.0"
