"""Data model and file tooling for the multilingual caption corpus.

A corpus is an ordered set of image regions. Each record carries the region's
bounding box, an English caption, and captions in four Indic target languages
(missing captions are kept as empty strings so downstream stages see a uniform
shape). Per-language split files are tab-separated, one region per line; this
module merges them into one unified record per region, computes word-count
statistics, and exports translation fine-tuning data.
"""

from __future__ import annotations

import io
import logging
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, NamedTuple, Sequence

logger = logging.getLogger(__name__)

SOURCE_FLORES_CODE = "eng_Latn"


class Language(str, Enum):
    """Target languages, in unified-file column order."""

    HINDI = "hindi"
    BENGALI = "bengali"
    MALAYALAM = "malayalam"
    ODIA = "odia"

    @property
    def display(self) -> str:
        return self.value.capitalize()

    @property
    def flores_code(self) -> str:
        return _FLORES_CODES[self]

    @classmethod
    def from_name(cls, name: str) -> "Language":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown language {name!r}") from None

    @classmethod
    def from_flores(cls, code: str) -> "Language":
        for lang, flores in _FLORES_CODES.items():
            if flores == code:
                return lang
        raise ValueError(f"unknown FLORES code {code!r}")


_FLORES_CODES = {
    Language.HINDI: "hin_Deva",
    Language.BENGALI: "ben_Beng",
    Language.MALAYALAM: "mal_Mlym",
    Language.ODIA: "ory_Orya",
}

ALL_LANGUAGES: tuple[Language, ...] = tuple(Language)


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    EVAL = "eval"
    CHALLENGE = "challenge"

    @property
    def table_label(self) -> str:
        # The evaluation split is conventionally labelled "Test" in stats tables.
        return "Test" if self is Split.EVAL else self.value.capitalize()


class CorpusError(Exception):
    """Base class for corpus ingestion and export errors."""


class EncodingError(CorpusError):
    pass


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, message: str, path: str | None = None):
        self.line_no = line_no
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")


class DuplicateImageId(CorpusError):
    pass


class InvalidBoundingBox(CorpusError):
    pass


class InvalidRecord(CorpusError):
    pass


class MissingCorrectedCaption(CorpusError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Rectangular region in pixel coordinates, anchored at the top-left."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise InvalidBoundingBox(f"negative origin: ({self.x}, {self.y})")
        if self.width <= 0 or self.height <= 0:
            raise InvalidBoundingBox(
                f"non-positive extent: {self.width}x{self.height}"
            )


@dataclass
class CaptionRecord:
    """One image region with its English caption and target-language captions.

    ``targets`` has an entry for every configured language; a missing caption
    is the empty string, never an absent key.
    """

    image_id: str
    bbox: BoundingBox
    english: str
    targets: dict[Language, str]

    def __post_init__(self) -> None:
        if not self.english.strip():
            raise InvalidRecord(f"record {self.image_id}: empty English caption")


@dataclass
class Corpus:
    split: Split
    records: list[CaptionRecord]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.image_id in seen:
                raise DuplicateImageId(
                    f"{self.split.value}: duplicate image_id {rec.image_id!r}"
                )
            seen.add(rec.image_id)

    def __len__(self) -> int:
        return len(self.records)


SCHEMA_ROLES = ("image_id", "x", "y", "width", "height", "english", "target")


@dataclass(frozen=True)
class ColumnSchema:
    """Column order of a per-language split file.

    The default matches the upstream release layout: image_id, x, y, width,
    height, english, target.
    """

    columns: tuple[str, ...] = SCHEMA_ROLES

    def __post_init__(self) -> None:
        if sorted(self.columns) != sorted(SCHEMA_ROLES):
            raise ValueError(
                f"schema must name each of {SCHEMA_ROLES} exactly once, "
                f"got {self.columns}"
            )

    def index(self, role: str) -> int:
        return self.columns.index(role)


class ParsedRow(NamedTuple):
    image_id: str
    bbox: BoundingBox
    english: str
    target: str


def _normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


def parse_split(
    raw: bytes | BinaryIO,
    schema: ColumnSchema | None = None,
    *,
    path: str | None = None,
) -> list[ParsedRow]:
    """Parse one per-language split file into rows, preserving line order.

    Blank lines are skipped. Text fields are NFC-normalized and trimmed.
    Raises MalformedLine (with the 1-based line number) on a wrong column
    count or a non-integer bounding box field, and EncodingError on invalid
    UTF-8.
    """
    schema = schema or ColumnSchema()
    data = raw if isinstance(raw, bytes) else raw.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path or 'input'}: not valid UTF-8: {exc}") from exc

    idx = {role: schema.index(role) for role in SCHEMA_ROLES}
    rows: list[ParsedRow] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(schema.columns):
            raise MalformedLine(
                line_no,
                f"expected {len(schema.columns)} columns, got {len(parts)}",
                path,
            )
        try:
            bbox = BoundingBox(
                x=int(parts[idx["x"]]),
                y=int(parts[idx["y"]]),
                width=int(parts[idx["width"]]),
                height=int(parts[idx["height"]]),
            )
        except ValueError as exc:
            raise MalformedLine(line_no, f"bad bounding box field: {exc}", path)
        except InvalidBoundingBox as exc:
            raise MalformedLine(line_no, str(exc), path)
        rows.append(
            ParsedRow(
                image_id=_normalize(parts[idx["image_id"]]),
                bbox=bbox,
                english=_normalize(parts[idx["english"]]),
                target=_normalize(parts[idx["target"]]),
            )
        )
    return rows


def parse_split_file(path: str | Path, schema: ColumnSchema | None = None) -> list[ParsedRow]:
    with open(path, "rb") as fh:
        return parse_split(fh, schema, path=str(path))


def serialize_split(rows: Iterable[ParsedRow], schema: ColumnSchema | None = None) -> bytes:
    """Inverse of parse_split for already-normalized rows."""
    schema = schema or ColumnSchema()
    out = io.StringIO()
    for row in rows:
        fields = {
            "image_id": row.image_id,
            "x": str(row.bbox.x),
            "y": str(row.bbox.y),
            "width": str(row.bbox.width),
            "height": str(row.bbox.height),
            "english": row.english,
            "target": row.target,
        }
        out.write("\t".join(fields[c] for c in schema.columns))
        out.write("\n")
    return out.getvalue().encode("utf-8")


def merge_languages(
    per_language: Mapping[Language, Sequence[ParsedRow]],
    *,
    split: Split,
    reference: Language = Language.HINDI,
) -> Corpus:
    """Merge per-language row lists into one record per image region.

    The reference language defines the record set and order. Bounding box and
    English caption are taken from the reference; a disagreement in another
    language is logged, not fatal. Regions absent from a language get an empty
    target caption (also logged).
    """
    if reference not in per_language:
        raise ValueError(f"reference language {reference.display} not in input")
    languages = [lang for lang in Language if lang in per_language]

    indexed: dict[Language, dict[str, ParsedRow]] = {}
    for lang, rows in per_language.items():
        by_id: dict[str, ParsedRow] = {}
        for row in rows:
            if row.image_id in by_id:
                raise DuplicateImageId(
                    f"{lang.display} list: duplicate image_id {row.image_id!r}"
                )
            by_id[row.image_id] = row
        indexed[lang] = by_id

    records: list[CaptionRecord] = []
    for ref_row in per_language[reference]:
        targets: dict[Language, str] = {}
        for lang in languages:
            row = indexed[lang].get(ref_row.image_id)
            if row is None:
                targets[lang] = ""
                logger.warning(
                    "image %s: no %s caption, storing empty",
                    ref_row.image_id,
                    lang.display,
                )
                continue
            targets[lang] = row.target
            if lang is not reference and (
                row.bbox != ref_row.bbox or row.english != ref_row.english
            ):
                logger.warning(
                    "image %s: %s file disagrees with %s on bbox or English text",
                    ref_row.image_id,
                    lang.display,
                    reference.display,
                )
        records.append(
            CaptionRecord(
                image_id=ref_row.image_id,
                bbox=ref_row.bbox,
                english=ref_row.english,
                targets=targets,
            )
        )

    ref_ids = set(indexed[reference])
    for lang in languages:
        extra = [i for i in indexed[lang] if i not in ref_ids]
        if extra:
            logger.warning(
                "%s list has %d image ids missing from the %s reference; dropped",
                lang.display,
                len(extra),
                reference.display,
            )
    return Corpus(split=split, records=records)


# Unified corpus files: image_id, x, y, width, height, english, then one
# column per language in fixed order (Hindi, Bengali, Malayalam, Odia).

UNIFIED_COLUMN_COUNT = 6 + len(ALL_LANGUAGES)


def _tsv_safe(text: str) -> str:
    return " ".join(text.split()) if ("\t" in text or "\n" in text or "\r" in text) else text


def serialize_unified(corpus: Corpus) -> str:
    lines = []
    for rec in corpus.records:
        fields = [
            rec.image_id,
            str(rec.bbox.x),
            str(rec.bbox.y),
            str(rec.bbox.width),
            str(rec.bbox.height),
            _tsv_safe(rec.english),
        ]
        fields.extend(_tsv_safe(rec.targets.get(lang, "")) for lang in ALL_LANGUAGES)
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines)


def write_unified(corpus: Corpus, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(serialize_unified(corpus), encoding="utf-8")


def read_unified(
    raw: bytes | BinaryIO,
    split: Split,
    *,
    path: str | None = None,
) -> Corpus:
    data = raw if isinstance(raw, bytes) else raw.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path or 'input'}: not valid UTF-8: {exc}") from exc

    records: list[CaptionRecord] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != UNIFIED_COLUMN_COUNT:
            raise MalformedLine(
                line_no,
                f"expected {UNIFIED_COLUMN_COUNT} columns, got {len(parts)}",
                path,
            )
        try:
            bbox = BoundingBox(int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
        except ValueError as exc:
            raise MalformedLine(line_no, f"bad bounding box field: {exc}", path)
        except InvalidBoundingBox as exc:
            raise MalformedLine(line_no, str(exc), path)
        targets = {
            lang: _normalize(parts[6 + i]) for i, lang in enumerate(ALL_LANGUAGES)
        }
        records.append(
            CaptionRecord(
                image_id=_normalize(parts[0]),
                bbox=bbox,
                english=_normalize(parts[5]),
                targets=targets,
            )
        )
    return Corpus(split=split, records=records)


def read_unified_file(path: str | Path, split: Split) -> Corpus:
    with open(path, "rb") as fh:
        return read_unified(fh, split, path=str(path))


# Word-count statistics (whitespace tokens), per split and per language.


@dataclass
class SplitCounts:
    sentences: int = 0
    english_words: int = 0
    target_words: dict[Language, int] = field(
        default_factory=lambda: {lang: 0 for lang in ALL_LANGUAGES}
    )


@dataclass
class CorpusStats:
    splits: dict[Split, SplitCounts]

    def totals(self) -> SplitCounts:
        total = SplitCounts()
        for counts in self.splits.values():
            total.sentences += counts.sentences
            total.english_words += counts.english_words
            for lang in ALL_LANGUAGES:
                total.target_words[lang] += counts.target_words[lang]
        return total


def word_count_stats(corpora: Sequence[Corpus]) -> CorpusStats:
    """Count sentences and whitespace-delimited words per split and language."""
    splits: dict[Split, SplitCounts] = {}
    for corpus in corpora:
        counts = splits.setdefault(corpus.split, SplitCounts())
        for rec in corpus.records:
            counts.sentences += 1
            counts.english_words += len(rec.english.split())
            for lang in ALL_LANGUAGES:
                counts.target_words[lang] += len(rec.targets.get(lang, "").split())
    return CorpusStats(splits=splits)


_SPLIT_ROW_ORDER = (Split.TRAIN, Split.DEV, Split.EVAL, Split.CHALLENGE)


def render_stats_table(stats: CorpusStats) -> str:
    header = ["Set", "Sentences", "English"] + [lang.display for lang in ALL_LANGUAGES]
    rows = [header]
    for split in _SPLIT_ROW_ORDER:
        if split not in stats.splits:
            continue
        c = stats.splits[split]
        rows.append(
            [split.table_label, f"{c.sentences:,}", f"{c.english_words:,}"]
            + [f"{c.target_words[lang]:,}" for lang in ALL_LANGUAGES]
        )
    t = stats.totals()
    rows.append(
        ["Total", f"{t.sentences:,}", f"{t.english_words:,}"]
        + [f"{t.target_words[lang]:,}" for lang in ALL_LANGUAGES]
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append(
            "  ".join(
                cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                for i, cell in enumerate(r)
            ).rstrip()
        )
    return "\n".join(lines) + "\n"


def stats_to_json(stats: CorpusStats) -> dict:
    def counts_dict(c: SplitCounts) -> dict:
        return {
            "sentences": c.sentences,
            "words": {
                "english": c.english_words,
                **{lang.value: c.target_words[lang] for lang in ALL_LANGUAGES},
            },
        }

    return {
        "splits": {
            split.value: counts_dict(stats.splits[split])
            for split in _SPLIT_ROW_ORDER
            if split in stats.splits
        },
        "total": counts_dict(stats.totals()),
    }


# Fine-tuning export: one line per record per language with a nonempty
# caption, in corpus order then language order.


class CaptionSource(str, Enum):
    ORIGINAL = "original"
    CORRECTED = "corrected"


class FinetuneExample(NamedTuple):
    source_code: str
    target_code: str
    source_text: str
    target_text: str

    def line(self) -> str:
        return "\t".join(self)


def export_finetune(
    corpus: Corpus,
    caption_source: CaptionSource = CaptionSource.ORIGINAL,
    corrected: Mapping[tuple[str, Language], str] | None = None,
    languages: Sequence[Language] | None = None,
) -> list[FinetuneExample]:
    """Flatten a corpus into fine-tuning examples.

    With caption_source=CORRECTED the corrected map must cover every
    (image_id, language) pair; records whose caption is empty (originally or
    after correction) are excluded.
    """
    langs = tuple(languages) if languages is not None else ALL_LANGUAGES
    if caption_source is CaptionSource.CORRECTED and corrected is None:
        raise MissingCorrectedCaption("corrected captions requested but no map given")

    examples: list[FinetuneExample] = []
    for rec in corpus.records:
        for lang in langs:
            if caption_source is CaptionSource.CORRECTED:
                assert corrected is not None
                try:
                    caption = corrected[(rec.image_id, lang)]
                except KeyError:
                    raise MissingCorrectedCaption(
                        f"no corrected caption for ({rec.image_id}, {lang.display})"
                    ) from None
            else:
                caption = rec.targets.get(lang, "")
            if not caption.strip():
                continue
            examples.append(
                FinetuneExample(
                    source_code=SOURCE_FLORES_CODE,
                    target_code=lang.flores_code,
                    source_text=rec.english,
                    target_text=caption,
                )
            )
    return examples


def write_finetune(examples: Iterable[FinetuneExample], path: str | Path) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.line())
            fh.write("\n")
            n += 1
    return n
