"""Failure types raised by the exporter."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class TemplateError(ExportError):
    """Prompt template does not carry the class placeholder exactly once."""


class LayoutError(ExportError):
    """Image tree or class list unusable (empty, duplicated, misplaced)."""
