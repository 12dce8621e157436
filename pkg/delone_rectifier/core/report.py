"""
Check report data models for the Delone Rectifier.
Stores pass/fail entries produced by validators and bound verifiers.
"""

from typing import Any, Dict, List, Optional


class CheckReport:
    """Ordered collection of named checks with pass/fail status and details."""

    def __init__(self, subject: str):
        """
        Initialize an empty report.

        Args:
            subject: What the report is about (rule name, region id, ...)
        """
        self.subject = subject
        self.checks: List[Dict[str, Any]] = []
        self.values: Dict[str, Any] = {}
        self.notes: List[str] = []

    def add_check(self, name: str, passed: bool, scope: Optional[str] = None,
                  details: Optional[Dict[str, Any]] = None) -> None:
        """Add a check result."""
        entry = {
            'name': name,
            'scope': scope or '',
            'passed': bool(passed)
        }
        if details:
            entry.update(details)
        self.checks.append(entry)

    def add_value(self, key: str, value: Any) -> None:
        """Record a measured quantity that is reported but not checked."""
        self.values[key] = value

    def add_note(self, note: str) -> None:
        self.notes.append(note)

    def merge(self, other: 'CheckReport', scope_prefix: str = '') -> None:
        """Append another report's checks, prefixing their scope."""
        for entry in other.checks:
            entry = dict(entry)
            entry['scope'] = f"{scope_prefix}{entry['scope']}"
            self.checks.append(entry)
        self.notes.extend(other.notes)

    @property
    def violations(self) -> List[Dict[str, Any]]:
        return [c for c in self.checks if not c['passed']]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to a dictionary for serialization."""
        return {
            'subject': self.subject,
            'passed': self.passed,
            'violation_count': len(self.violations),
            'checks': self.checks,
            'values': self.values,
            'notes': self.notes
        }


class ValidationReport(CheckReport):
    """Per-prototile validation of a substitution rule."""

    @property
    def valid(self) -> bool:
        return self.passed


class BoundReport(CheckReport):
    """Inequality checks from a hierarchy or discrepancy verification."""
    pass
