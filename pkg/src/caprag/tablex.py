"""Table-to-text conversion: rule-engine validation, row statements, and a
verifiable semantic-preservation check.

The conversion is two-stage: a rule engine validates the grid and extracts
(header, cell) pairs, then a semantic parser turns each row into a natural
language statement. The default parser is a deterministic template whose
output provably satisfies the preservation check; an LLM-backed parser is
available for production prose.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol

from .corpus import Domain
from .errors import BackendTimeout, BackendUnavailable, NoHeaders, ParserUnavailable, RaggedTable
from .llm import ChatClient, GenerationSettings
from .textutil import contains_normalized


@dataclass(frozen=True)
class Table:
    """A rectangular grid with one header per column."""

    id: str
    headers: tuple[str, ...]
    cells: tuple[tuple[str, ...], ...]
    caption: str | None = None
    domain: Domain = Domain.NUTRITION

    @property
    def m(self) -> int:
        return len(self.cells)

    @property
    def n(self) -> int:
        return len(self.headers)


class ValidatedCell(NamedTuple):
    header: str
    value: str
    row: int  # 1-based
    col: int  # 1-based


@dataclass(frozen=True)
class ValidatedTable:
    """Cells that passed validation, in row-major order."""

    source: str
    row_count: int
    pairs: tuple[ValidatedCell, ...]


@dataclass(frozen=True)
class TableNarrative:
    source: str
    row_statements: tuple[str, ...]
    unified_text: str


@dataclass(frozen=True)
class PreservationReport:
    """Which validated cells are represented in a narrative.

    ``covered`` and ``missing`` partition the validated (row, col)
    coordinates; ``passed`` iff nothing is missing.
    """

    source: str
    covered: tuple[tuple[int, int], ...]
    missing: tuple[tuple[int, int], ...]
    passed: bool


def validate_table(table: Table) -> ValidatedTable:
    """Apply the integrity rules: rectangular grid, non-blank headers and
    cells. Blank cells are excluded from the pairs without failing the table.

    Raises:
        RaggedTable: some row has a different cell count than the header row.
        NoHeaders: every header is blank.
    """
    n = table.n
    if n < 1:
        raise NoHeaders(f"table {table.id!r} has no columns")
    for i, row in enumerate(table.cells, start=1):
        if len(row) != n:
            raise RaggedTable(
                f"table {table.id!r} row {i} has {len(row)} cells, expected {n}"
            )
    if all(not h.strip() for h in table.headers):
        raise NoHeaders(f"table {table.id!r} has only blank headers")
    pairs = []
    for i, row in enumerate(table.cells, start=1):
        for j, (header, value) in enumerate(zip(table.headers, row), start=1):
            if header.strip() and value.strip():
                pairs.append(ValidatedCell(header.strip(), value.strip(), i, j))
    return ValidatedTable(source=table.id, row_count=table.m, pairs=tuple(pairs))


class SemanticParser(Protocol):
    """Turns the validated cells of each row into one statement per row."""

    def row_statements(self, vt: ValidatedTable) -> list[str]: ...


class TemplateRowParser:
    """Deterministic row renderer.

    A row whose first column validated reads "For <first value>, <h2> is
    <c2>; ...". A row with a single validated cell reads "<header> is
    <value>." Rows with no validated cells yield an empty statement so the
    one-statement-per-row contract holds.
    """

    def row_statements(self, vt: ValidatedTable) -> list[str]:
        by_row: dict[int, list[ValidatedCell]] = {}
        for cell in vt.pairs:
            by_row.setdefault(cell.row, []).append(cell)
        statements = []
        for i in range(1, vt.row_count + 1):
            cells = by_row.get(i, [])
            statements.append(self._render(cells))
        return statements

    @staticmethod
    def _render(cells: list[ValidatedCell]) -> str:
        if not cells:
            return ""
        anchor = cells[0] if cells[0].col == 1 else None
        rest = cells[1:] if anchor else cells
        if anchor and not rest:
            return f"{anchor.header} is {anchor.value}."
        clauses = "; ".join(f"{c.header} is {c.value}" for c in rest)
        if anchor:
            return f"For {anchor.value}, {clauses}."
        return f"{clauses}."


class LLMRowParser:
    """LLM-backed row renderer producing free-form prose.

    Output is subject to the same preservation check as the template
    parser; failures there surface in the report, not here.
    """

    _SYSTEM = (
        "You convert one table row into a single fluent sentence. Keep every "
        "header name and cell value verbatim. Reply with the sentence only."
    )

    def __init__(self, client: ChatClient, settings: GenerationSettings | None = None) -> None:
        self.client = client
        self.settings = settings or GenerationSettings()

    def row_statements(self, vt: ValidatedTable) -> list[str]:
        by_row: dict[int, list[ValidatedCell]] = {}
        for cell in vt.pairs:
            by_row.setdefault(cell.row, []).append(cell)
        statements = []
        for i in range(1, vt.row_count + 1):
            cells = by_row.get(i, [])
            if not cells:
                statements.append("")
                continue
            listing = "\n".join(f"{c.header}: {c.value}" for c in cells)
            try:
                response = self.client.complete(self._SYSTEM, listing, self.settings)
            except (BackendUnavailable, BackendTimeout) as exc:
                raise ParserUnavailable(f"semantic parser backend failed: {exc}") from exc
            statements.append(response.text.strip())
        return statements


def rowify(vt: ValidatedTable, parser: SemanticParser | None = None) -> list[str]:
    """One statement per source row, in row order."""
    if not vt.pairs:
        raise ValueError(f"table {vt.source!r} has no validated cells")
    parser = parser or TemplateRowParser()
    statements = parser.row_statements(vt)
    if len(statements) != vt.row_count:
        raise ValueError(
            f"parser produced {len(statements)} statements for {vt.row_count} rows"
        )
    return statements


_WHITESPACE_RE = re.compile(r"[ \t]+")


def _unify(statements: list[str]) -> str:
    """Post-processing: whitespace normalization plus exact-duplicate
    statement removal. Nothing richer, so preservation stays checkable."""
    seen = set()
    kept = []
    for statement in statements:
        cleaned = _WHITESPACE_RE.sub(" ", statement.strip())
        if not cleaned or cleaned in seen:
            continue
        seen.add(cleaned)
        kept.append(cleaned)
    return " ".join(kept)


def textualize_table(table: Table, parser: SemanticParser | None = None) -> TableNarrative:
    """Full conversion: validate, render rows, unify into one narrative."""
    vt = validate_table(table)
    statements = rowify(vt, parser)
    return TableNarrative(
        source=table.id,
        row_statements=tuple(statements),
        unified_text=_unify(statements),
    )


def check_semantic_preservation(table: Table, narrative: str) -> PreservationReport:
    """Lexical-containment proxy for semantic preservation.

    A validated cell (i, j) is covered when a normalized form of its value
    occurs in the narrative and, for non-anchor columns, the header does
    too (normalization: casefold, trim, numeric canonicalization). The
    anchor (first) column is represented structurally as the row subject,
    so only its value is required.
    """
    vt = validate_table(table)
    covered = []
    missing = []
    for cell in vt.pairs:
        value_present = contains_normalized(narrative, cell.value)
        header_needed = cell.col != 1
        header_present = contains_normalized(narrative, cell.header) if header_needed else True
        if value_present and header_present:
            covered.append((cell.row, cell.col))
        else:
            missing.append((cell.row, cell.col))
    return PreservationReport(
        source=table.id,
        covered=tuple(covered),
        missing=tuple(missing),
        passed=not missing,
    )


# --- file interfaces --------------------------------------------------------

def load_table_dsv(
    path: str | Path,
    *,
    table_id: str | None = None,
    caption: str | None = None,
    domain: Domain = Domain.NUTRITION,
    delimiter: str = ",",
) -> Table:
    """Load a delimiter-separated table. The first record is the headers and
    its field count fixes the column count; caption and domain come from the
    companion manifest entry."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records = [tuple(row) for row in csv.reader(io.StringIO(text), delimiter=delimiter) if row]
    if not records:
        raise NoHeaders(f"{path}: no header record")
    return Table(
        id=table_id or f"table-{path.stem}",
        headers=records[0],
        cells=tuple(records[1:]),
        caption=caption,
        domain=domain,
    )


def load_tables_dir(directory: str | Path, *, default_domain: Domain = Domain.NUTRITION) -> list[Table]:
    """Load every ``*.csv``/``*.tsv`` in a directory, reading caption/domain
    from ``manifest.json`` entries keyed by filename when present."""
    import json

    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    tables = []
    for path in sorted(directory.glob("*")):
        if path.suffix.lower() not in (".csv", ".tsv"):
            continue
        entry = manifest.get(path.name, {})
        domain = Domain.parse(entry["domain"]) if "domain" in entry else default_domain
        tables.append(
            load_table_dsv(
                path,
                table_id=entry.get("id"),
                caption=entry.get("caption"),
                domain=domain,
                delimiter="\t" if path.suffix.lower() == ".tsv" else ",",
            )
        )
    return tables
