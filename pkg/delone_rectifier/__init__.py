"""
Delone Rectifier
Substitution tilings, Delone-set discrepancy analysis and explicit rectification maps.
"""

__version__ = "0.3.0"
