"""Exception types shared across the translation engine."""


class RepoTransError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RepoTransError):
    """Bad or missing configuration (paths, templates, toolchain commands)."""


class EmptyIndexError(RepoTransError):
    """A repository produced no parseable source files."""


class MappingParseError(RepoTransError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class InfrastructureError(RepoTransError):
    """Workspace or toolchain failure that says nothing about the candidate code."""


class TransportError(RepoTransError):
    """The chat backend could not deliver a response."""


class ScriptUnderrunError(TransportError):
    """A scripted or replayed backend ran out of responses."""


class ToolCallParseError(RepoTransError):
    """An agent reply did not contain a valid JSON tool call."""


class JSONExtractionError(RepoTransError):
    """No balanced, parseable JSON object was found in a reply."""
