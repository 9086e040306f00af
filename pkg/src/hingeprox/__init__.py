"""Hinge-proximal stochastic methods for constrained convex optimization."""
