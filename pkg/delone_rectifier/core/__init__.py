"""
Core functionality for the Delone Rectifier.
Contains exact coordinates, substitution rules, hierarchical patches and utilities.
"""
