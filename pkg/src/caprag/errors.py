"""Exception hierarchy shared across the engine.

Every error carries a stable machine-readable ``code`` so the HTTP service
and the CLI can map failures without string matching.
"""

from __future__ import annotations


class CapragError(Exception):
    """Base class for all engine errors."""

    code = "internal_error"


# --- corpus ---------------------------------------------------------------

class EmptyDocument(CapragError):
    code = "empty_document"


class DuplicateId(CapragError):
    code = "duplicate_id"


class DanglingReference(CapragError):
    code = "dangling_reference"


# --- tables ---------------------------------------------------------------

class RaggedTable(CapragError):
    code = "ragged_table"


class NoHeaders(CapragError):
    code = "no_headers"


class ParserUnavailable(CapragError):
    code = "parser_unavailable"


# --- decision trees -------------------------------------------------------

class MalformedTree(CapragError):
    code = "malformed_tree"


class UnknownAttribute(CapragError):
    code = "unknown_attribute"


class UnknownValue(CapragError):
    code = "unknown_value"


class ContradictoryEvidence(CapragError):
    code = "contradictory_evidence"


class PathTooDeep(CapragError):
    code = "path_too_deep"


# --- retrieval ------------------------------------------------------------

class EmptyCorpus(CapragError):
    code = "empty_corpus"


class EmptyQuery(CapragError):
    code = "empty_query"


class DimensionMismatch(CapragError):
    code = "dimension_mismatch"


class IndexFormatError(CapragError):
    code = "index_format_error"


# --- external providers ---------------------------------------------------

class ProviderUnavailable(CapragError):
    code = "provider_unavailable"


class QuotaExceeded(CapragError):
    code = "quota_exceeded"


class BackendUnavailable(CapragError):
    code = "backend_unavailable"


class BackendTimeout(CapragError):
    code = "backend_timeout"


# --- generation -----------------------------------------------------------

class OversizePrompt(CapragError):
    code = "oversize_prompt"


class EmptyChunk(CapragError):
    code = "empty_chunk"


class TemplateError(CapragError):
    code = "template_error"


# --- evaluation -----------------------------------------------------------

class EmptySequence(CapragError):
    code = "empty_sequence"


class LabelOnCorrect(CapragError):
    code = "label_on_correct"


class MissingComponent(CapragError):
    code = "missing_component"


# --- service --------------------------------------------------------------

class UnknownSession(CapragError):
    code = "unknown_session"


class SessionClosed(CapragError):
    code = "session_closed"


class IndexUnavailable(CapragError):
    code = "index_unavailable"


class ConfigError(CapragError):
    code = "config_error"
