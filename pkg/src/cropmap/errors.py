"""Exception hierarchy shared by every module.

The CLI maps these to exit codes: configuration problems exit 2,
data/format/contract problems exit 3.
"""

from __future__ import annotations


class CropmapError(Exception):
    exit_code = 3


class ConfigError(CropmapError):
    exit_code = 2


class FormatError(CropmapError):
    """Unreadable or inconsistent on-disk manifest."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{message} (field: {field})" if field else message)
        self.field = field


class SizeError(FormatError):
    def __init__(self, path, expected: int, found: int):
        super().__init__(f"{path}: expected {expected} bytes, found {found}")
        self.expected = expected
        self.found = found


class GeometryError(CropmapError):
    pass


class DataError(CropmapError):
    pass


class ContractError(CropmapError):
    pass
