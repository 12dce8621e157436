"""
Command-line interface for the Delone Rectifier.
"""
