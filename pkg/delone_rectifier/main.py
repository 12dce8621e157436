#!/usr/bin/env python3
"""
Delone Rectifier - Main Entry Point

This is the main entry point for the Delone Rectifier.
It dispatches to the click command group.
"""

from .cli.commands import cli


def main():
    """Main entry point for the application."""
    cli(prog_name='delone-rectifier')


if __name__ == "__main__":
    main()
