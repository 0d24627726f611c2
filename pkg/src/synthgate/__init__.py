"""Two-phase Bayesian synthesis of zero-inflated income, with utility and risk audits."""

__version__ = "0.1.0"
