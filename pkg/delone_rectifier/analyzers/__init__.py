"""
Analyzers for substitution matrices, grid regions, point counts and hierarchies.
"""
