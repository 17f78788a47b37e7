"""Model-based-tree Shapley attributions with dependent features."""

__version__ = "0.1.0"
