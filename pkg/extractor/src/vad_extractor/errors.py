class ExtractError(Exception):
    """Base class for extraction failures."""


class LayoutError(ExtractError):
    """Dataset directory does not match the expected layout."""
