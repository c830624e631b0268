"""Unit test package for merge_lattice_planner."""
