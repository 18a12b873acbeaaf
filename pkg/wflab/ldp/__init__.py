"""Numerical library: simplex geometry, equilibrium laws, simulation, path actions and partitions."""
