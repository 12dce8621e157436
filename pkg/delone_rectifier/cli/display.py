"""
Display formatting utilities for the Delone Rectifier CLI.
Provides consistent status lines, headers and tables on a rich console.
"""

from typing import Any, List, Optional, Sequence

from rich.console import Console
from rich.table import Table

from .. import __version__

console = Console(highlight=False)
error_console = Console(stderr=True, highlight=False)


def print_banner() -> None:
    """Print the application banner."""
    console.print(f"[bold]delone-rectifier[/bold] v{__version__}")
    console.print("Substitution tilings, Delone-set discrepancy and lattice rectification")


def print_section_header(title: str) -> None:
    """
    Print a section header.

    Args:
        title: Section title
    """
    console.rule(f"[bold]{title}[/bold]")


def print_error(message: str) -> None:
    error_console.print(f"[bold red]ERROR:[/bold red] {message}")


def print_warning(message: str) -> None:
    console.print(f"[yellow]WARNING:[/yellow] {message}")


def print_success(message: str) -> None:
    console.print(f"[green]OK:[/green] {message}")


def print_info(message: str) -> None:
    console.print(f"[cyan]INFO:[/cyan] {message}")


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_table(headers: Sequence[str], rows: List[Sequence[Any]], title: Optional[str] = None) -> None:
    """
    Print a formatted table.

    Args:
        headers: Table headers
        rows: Table rows (list of lists)
        title: Optional table title
    """
    if not headers or not rows:
        return

    table = Table(title=title, show_lines=False)
    for header in headers:
        table.add_column(str(header))
    for row in rows:
        table.add_row(*[_format_cell(cell) for cell in row])
    console.print(table)
