"""
Reporting modules for the Delone Rectifier.
Exporters, report summaries and SVG visualizations.
"""
