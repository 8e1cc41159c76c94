"""Corpus ingestion: documents, subheading segmentation, dataset assembly.

Documents are ingested from plain-text files (one document per file, with a
front-matter header block for metadata) and segmented into chunks at
capitalized subheadings. Generated and curated Q&A pairs are collected per
corpus and assembled into train/validation/test splits with per-domain,
per-kind tallies.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import DanglingReference, DuplicateId, EmptyDocument
from .textutil import tokenize

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("article", "table", "tree")

# Chunks beyond this term count are a corpus-quality smell, surfaced as a
# warning rather than re-chunked.
OVERLONG_CHUNK_TERMS = 1000

MAX_HEADING_LENGTH = 80
_SENTENCE_PUNCTUATION = (".", "!", "?", "…")


class Domain(str, Enum):
    """The five knowledge domains every document and Q&A pair belongs to."""

    DISEASE_PREVENTION = "disease_prevention"
    NUTRITION = "nutrition"
    REARING = "rearing"
    GOAT_MILK = "goat_milk"
    BASIC_FARMING = "basic_farming"

    @property
    def label(self) -> str:
        return _DOMAIN_LABELS[self]

    @classmethod
    def parse(cls, value: str) -> "Domain":
        """Parse a domain from its enum value or display label."""
        key = value.strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return cls(key)
        except ValueError:
            pass
        for domain, label in _DOMAIN_LABELS.items():
            if key == label.lower().replace(" ", "_"):
                return domain
        raise ValueError(f"unknown domain: {value!r}")


_DOMAIN_LABELS = {
    Domain.DISEASE_PREVENTION: "Disease Prevention and Treatment",
    Domain.NUTRITION: "Nutrition Management",
    Domain.REARING: "Rearing Management",
    Domain.GOAT_MILK: "Goat Milk Management",
    Domain.BASIC_FARMING: "Basic Farming Knowledge",
}

DOMAINS = tuple(Domain)


@dataclass(frozen=True)
class Document:
    """A source document with normalized body text."""

    id: str
    title: str
    domain: Domain
    body: str
    source_kind: str = "article"
    provenance: str = ""


@dataclass(frozen=True)
class Chunk:
    """A retrievable text unit.

    The text includes its subheading line (when present), so concatenating
    chunk texts of a document in ordinal order, joined by newlines,
    reconstructs the normalized body exactly. ``heading`` is a convenience
    copy of the subheading line.
    """

    id: str
    doc_id: str
    heading: str | None
    text: str
    term_count: int
    ordinal: int


@dataclass(frozen=True)
class QAPair:
    """A question/answer unit tagged by the source format it came from."""

    id: str
    kind: str  # text | table | tree
    domain: Domain
    question: str
    answer: str
    source_refs: tuple[str, ...] = ()


def normalize_body(raw: str) -> str:
    """Convert CRLF/CR line endings to LF and drop trailing newlines."""
    return raw.replace("\r\n", "\n").replace("\r", "\n").rstrip("\n")


def content_id(*parts: str, prefix: str = "", length: int = 16) -> str:
    """Stable content-hash identifier, reproducible across runs."""
    digest = hashlib.sha256("\x1e".join(parts).encode("utf-8")).hexdigest()
    return f"{prefix}{digest[:length]}"


def ingest_document(
    raw: str,
    *,
    title: str,
    domain: Domain,
    source_kind: str = "article",
    provenance: str = "",
    doc_id: str | None = None,
) -> Document:
    """Build a Document from raw text with a normalized body.

    Raises:
        EmptyDocument: raw is blank after whitespace trim.
        ValueError: unknown source kind.
    """
    if not raw.strip():
        raise EmptyDocument(f"document {title!r} has no content")
    if source_kind not in SOURCE_KINDS:
        raise ValueError(f"source_kind must be one of {SOURCE_KINDS}, got {source_kind!r}")
    body = normalize_body(raw)
    if doc_id is None:
        doc_id = content_id(title, domain.value, source_kind, body, prefix="doc-")
    return Document(
        id=doc_id,
        title=title,
        domain=domain,
        body=body,
        source_kind=source_kind,
        provenance=provenance,
    )


def is_subheading(line: str) -> bool:
    """Subheading rule: has letters, all of them uppercase, short, and not
    ending in sentence punctuation.

    This rejects shouted prose sentences while accepting section headers
    like "FEEDING" or "WATER SUPPLY".
    """
    stripped = line.strip()
    if not stripped or len(stripped) > MAX_HEADING_LENGTH:
        return False
    if stripped.endswith(_SENTENCE_PUNCTUATION):
        return False
    letters = [c for c in stripped if c.isalpha()]
    return bool(letters) and all(c.isupper() for c in letters)


def segment_by_subheadings(doc: Document) -> list[Chunk]:
    """Segment an article into one chunk per subheading-delimited section.

    Text preceding the first subheading becomes a preamble chunk with no
    heading. Documents without subheadings yield a single chunk.
    """
    if doc.source_kind != "article":
        raise ValueError(f"segmentation applies to articles, got {doc.source_kind!r}")
    sections: list[tuple[str | None, list[str]]] = []
    current: tuple[str | None, list[str]] | None = None
    for line in doc.body.split("\n"):
        if is_subheading(line):
            current = (line.strip(), [line])
            sections.append(current)
        else:
            if current is None:
                current = (None, [])
                sections.append(current)
            current[1].append(line)
    chunks = []
    for ordinal, (heading, lines) in enumerate(sections):
        text = "\n".join(lines)
        term_count = len(tokenize(text))
        if term_count > OVERLONG_CHUNK_TERMS:
            logger.warning(
                "chunk %s#%d (%r) has %d terms; consider splitting the source section",
                doc.id, ordinal, heading, term_count,
            )
        chunks.append(
            Chunk(
                id=f"{doc.id}#{ordinal}",
                doc_id=doc.id,
                heading=heading,
                text=text,
                term_count=term_count,
                ordinal=ordinal,
            )
        )
    return chunks


class Corpus:
    """Accumulates documents, chunks, and Q&A pairs; single-writer.

    ``qa_pairs`` holds generated pairs destined for the validation split;
    ``test_pairs`` holds expert-curated questions for the test split. Any id
    registered here (documents, chunks, tables, trees) is a valid Q&A
    source reference.
    """

    def __init__(self) -> None:
        self.documents: dict[str, Document] = {}
        self.chunks: dict[str, list[Chunk]] = {}
        self.qa_pairs: list[QAPair] = []
        self.test_pairs: list[QAPair] = []
        self._known_ids: set[str] = set()
        self._qa_ids: set[str] = set()

    def add_document(self, doc: Document, *, segment: bool = True) -> list[Chunk]:
        """Register a document, segmenting articles into chunks.

        Non-article documents (converted tables/trees) become a single
        chunk so their narratives are retrievable as-is.
        """
        if doc.id in self._known_ids:
            raise DuplicateId(f"document id {doc.id!r} already registered")
        self.documents[doc.id] = doc
        self._known_ids.add(doc.id)
        if segment and doc.source_kind == "article":
            chunks = segment_by_subheadings(doc)
        else:
            chunks = [
                Chunk(
                    id=f"{doc.id}#0",
                    doc_id=doc.id,
                    heading=doc.title or None,
                    text=doc.body,
                    term_count=len(tokenize(doc.body)),
                    ordinal=0,
                )
            ]
        self.chunks[doc.id] = chunks
        self._known_ids.update(c.id for c in chunks)
        return chunks

    def ingest(
        self,
        raw: str,
        *,
        title: str,
        domain: Domain,
        source_kind: str = "article",
        provenance: str = "",
        doc_id: str | None = None,
    ) -> Document:
        doc = ingest_document(
            raw,
            title=title,
            domain=domain,
            source_kind=source_kind,
            provenance=provenance,
            doc_id=doc_id,
        )
        self.add_document(doc)
        return doc

    def register_source(self, source_id: str) -> None:
        """Register an external source id (table, tree) as referenceable."""
        if source_id in self._known_ids:
            raise DuplicateId(f"source id {source_id!r} already registered")
        self._known_ids.add(source_id)

    def add_qa(self, pair: QAPair, *, split: str = "validation") -> None:
        if pair.id in self._qa_ids:
            raise DuplicateId(f"qa pair id {pair.id!r} already registered")
        self._qa_ids.add(pair.id)
        if split == "validation":
            self.qa_pairs.append(pair)
        elif split == "test":
            self.test_pairs.append(pair)
        else:
            raise ValueError(f"split must be 'validation' or 'test', got {split!r}")

    def all_chunks(self) -> list[Chunk]:
        """Chunks of all documents, in document-id order then ordinal."""
        out: list[Chunk] = []
        for doc_id in sorted(self.chunks):
            out.extend(self.chunks[doc_id])
        return out

    def knows(self, source_id: str) -> bool:
        return source_id in self._known_ids


_TRAIN_KIND_BY_SOURCE = {"article": "text", "table": "table", "tree": "tree"}
QA_KINDS = ("text", "table", "tree")


@dataclass
class DatasetSplit:
    """Train/validation/test composition with per-domain, per-kind tallies."""

    train: dict[str, list[Document]]
    validation: dict[str, list[QAPair]]
    test: list[QAPair]
    counts: dict = field(default_factory=dict)

    def total_validation(self) -> int:
        return sum(len(v) for v in self.validation.values())


def assemble_dataset(corpus: Corpus) -> DatasetSplit:
    """Assemble splits: train = documents by kind, validation = generated
    Q&A pairs by kind, test = curated pairs.

    Raises:
        DanglingReference: a validation pair cites an unknown source id.
    """
    for pair in corpus.qa_pairs:
        for ref in pair.source_refs:
            if not corpus.knows(ref):
                raise DanglingReference(
                    f"qa pair {pair.id!r} references unknown source {ref!r}"
                )
    train: dict[str, list[Document]] = {k: [] for k in QA_KINDS}
    for doc_id in sorted(corpus.documents):
        doc = corpus.documents[doc_id]
        train[_TRAIN_KIND_BY_SOURCE[doc.source_kind]].append(doc)
    validation: dict[str, list[QAPair]] = {k: [] for k in QA_KINDS}
    for pair in corpus.qa_pairs:
        validation[pair.kind].append(pair)
    split = DatasetSplit(train=train, validation=validation, test=list(corpus.test_pairs))
    split.counts = _tally(split)
    return split


def _tally(split: DatasetSplit) -> dict:
    def count_block(items_by_kind: dict[str, list]) -> dict:
        block: dict = {}
        for kind, items in items_by_kind.items():
            row = {d.value: 0 for d in DOMAINS}
            for item in items:
                row[item.domain.value] += 1
            row["total"] = len(items)
            block[kind] = row
        total_row = {d.value: sum(block[k][d.value] for k in items_by_kind) for d in DOMAINS}
        total_row["total"] = sum(block[k]["total"] for k in items_by_kind)
        block["total"] = total_row
        return block

    counts = {
        "train": count_block(split.train),
        "validation": count_block(split.validation),
        "test": count_block({"test": split.test}),
    }
    return counts


_COUNT_ROWS = (
    ("Train", "train", (("Text", "text"), ("Tables", "table"), ("Trees", "tree"), ("Total", "total"))),
    ("Val", "validation", (("Text Q&A", "text"), ("Table Q&A", "table"), ("Tree Q&A", "tree"), ("Total", "total"))),
    ("Test", "test", (("Test Q&A", "test"),)),
)


def render_counts_table(split: DatasetSplit) -> str:
    """Render tallies as a text table: rows by split/kind, columns by domain."""
    headers = ["", ""] + [d.label for d in DOMAINS] + ["Total"]
    rows: list[list[str]] = []
    for split_label, split_key, kind_rows in _COUNT_ROWS:
        for i, (kind_label, kind_key) in enumerate(kind_rows):
            row_counts = split.counts[split_key][kind_key]
            rows.append(
                [split_label if i == 0 else "", kind_label]
                + [str(row_counts[d.value]) for d in DOMAINS]
                + [str(row_counts["total"])]
            )
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [headers] + rows]
    return "\n".join(lines)


# --- file interfaces --------------------------------------------------------

MANIFEST_FORMAT = "caprag-corpus-manifest/1"


def corpus_manifest(corpus: Corpus) -> dict:
    """Machine-readable listing of document ids, domains, kinds, provenance."""
    return {
        "format": MANIFEST_FORMAT,
        "documents": [
            {
                "id": doc.id,
                "title": doc.title,
                "domain": doc.domain.value,
                "kind": doc.source_kind,
                "provenance": doc.provenance,
            }
            for doc_id, doc in sorted(corpus.documents.items())
        ],
    }


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(corpus_manifest(corpus), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def parse_article_file(text: str) -> tuple[dict[str, str], str]:
    """Split an article file into its front-matter header and body.

    The header is a leading block delimited by ``---`` lines holding
    ``key: value`` pairs (documented keys: title, domain, kind). Files
    without a header yield an empty metadata dict.
    """
    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        return {}, text
    meta: dict[str, str] = {}
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            return meta, "\n".join(lines[i + 1:])
        if ":" in line:
            key, _, value = line.partition(":")
            meta[key.strip().lower()] = value.strip()
    return meta, text  # unterminated header: treat whole file as body


CORPUS_FORMAT = "caprag-corpus/1"


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist the full corpus snapshot (documents, chunks, Q&A pairs)."""
    payload = {
        "format": CORPUS_FORMAT,
        "documents": [
            {
                "id": d.id,
                "title": d.title,
                "domain": d.domain.value,
                "body": d.body,
                "source_kind": d.source_kind,
                "provenance": d.provenance,
            }
            for _, d in sorted(corpus.documents.items())
        ],
        "chunks": {
            doc_id: [
                {
                    "id": c.id,
                    "heading": c.heading,
                    "text": c.text,
                    "term_count": c.term_count,
                    "ordinal": c.ordinal,
                }
                for c in chunks
            ]
            for doc_id, chunks in sorted(corpus.chunks.items())
        },
        "extra_sources": sorted(
            corpus._known_ids
            - set(corpus.documents)
            - {c.id for chunks in corpus.chunks.values() for c in chunks}
        ),
        "qa_pairs": [_qa_to_dict(p) for p in corpus.qa_pairs],
        "test_pairs": [_qa_to_dict(p) for p in corpus.test_pairs],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_corpus(path: str | Path) -> Corpus:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{path}: unsupported corpus format {payload.get('format')!r}")
    corpus = Corpus()
    for entry in payload["documents"]:
        doc = Document(
            id=entry["id"],
            title=entry["title"],
            domain=Domain(entry["domain"]),
            body=entry["body"],
            source_kind=entry["source_kind"],
            provenance=entry["provenance"],
        )
        corpus.documents[doc.id] = doc
        corpus._known_ids.add(doc.id)
        chunks = [
            Chunk(
                id=c["id"],
                doc_id=doc.id,
                heading=c["heading"],
                text=c["text"],
                term_count=c["term_count"],
                ordinal=c["ordinal"],
            )
            for c in payload["chunks"].get(doc.id, [])
        ]
        corpus.chunks[doc.id] = chunks
        corpus._known_ids.update(c.id for c in chunks)
    for source_id in payload.get("extra_sources", []):
        corpus._known_ids.add(source_id)
    for entry in payload.get("qa_pairs", []):
        corpus.add_qa(_qa_from_dict(entry), split="validation")
    for entry in payload.get("test_pairs", []):
        corpus.add_qa(_qa_from_dict(entry), split="test")
    return corpus


def _qa_to_dict(pair: QAPair) -> dict:
    return {
        "id": pair.id,
        "kind": pair.kind,
        "domain": pair.domain.value,
        "question": pair.question,
        "answer": pair.answer,
        "source_refs": list(pair.source_refs),
    }


def _qa_from_dict(entry: dict) -> QAPair:
    return QAPair(
        id=entry["id"],
        kind=entry["kind"],
        domain=Domain(entry["domain"]),
        question=entry["question"],
        answer=entry["answer"],
        source_refs=tuple(entry.get("source_refs", ())),
    )


def load_articles_dir(
    corpus: Corpus,
    directory: str | Path,
    *,
    default_domain: Domain | None = None,
) -> list[Document]:
    """Ingest every ``*.txt``/``*.md`` file in a directory as an article.

    Metadata comes from each file's front-matter header; ``domain`` is
    required unless a default is given.
    """
    directory = Path(directory)
    docs = []
    for path in sorted(directory.glob("*")):
        if path.suffix.lower() not in (".txt", ".md") or not path.is_file():
            continue
        meta, body = parse_article_file(path.read_text(encoding="utf-8"))
        domain_value = meta.get("domain")
        if domain_value:
            domain = Domain.parse(domain_value)
        elif default_domain is not None:
            domain = default_domain
        else:
            raise ValueError(f"{path}: no domain in header and no default given")
        docs.append(
            corpus.ingest(
                body,
                title=meta.get("title", path.stem),
                domain=domain,
                source_kind=meta.get("kind", "article"),
                provenance=str(path),
            )
        )
    return docs
