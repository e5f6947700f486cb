"""Differentiable architecture search by learning a Dirichlet distribution
over operation mixing weights, at desk scale."""

__version__ = "0.1.0"
