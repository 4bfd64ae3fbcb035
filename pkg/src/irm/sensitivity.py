"""Sensitive-content classification: regex patterns plus context keywords.

Pattern hits are validated (Luhn for card numbers, grouping rules for SSNs)
and scored 0.6 base, +0.3 when a context keyword lands within the configured
window, capped at 1.0. Filename/path keywords label at 0.5.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional


class Category(str, Enum):
    PII = "PII"
    PHI = "PHI"
    PFI = "PFI"


class Regulation(str, Enum):
    GDPR = "GDPR"
    HIPAA = "HIPAA"
    PCI_DSS = "PCI_DSS"


REGULATION_MAP = {
    Category.PII: frozenset({Regulation.GDPR}),
    Category.PHI: frozenset({Regulation.HIPAA}),
    Category.PFI: frozenset({Regulation.PCI_DSS}),
}


@dataclass(frozen=True)
class EvidenceSpan:
    pattern_name: str
    start: int
    end: int


@dataclass(eq=False)
class SensitivityLabel:
    category: Category
    confidence: float
    evidence: list[EvidenceSpan] = field(default_factory=list)

    @property
    def regulation_tags(self) -> frozenset[Regulation]:
        return REGULATION_MAP[self.category]

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "regulation_tags": sorted(r.value for r in self.regulation_tags),
            "confidence": self.confidence,
            "evidence": [[e.pattern_name, e.start, e.end] for e in self.evidence],
        }


@dataclass
class FileMeta:
    file_id: str
    name: str
    path: str = ""
    size_bytes: int = 0
    labels: dict[Category, SensitivityLabel] = field(default_factory=dict)
    classified_at: Optional[datetime] = None

    def label_categories(self) -> set[Category]:
        return set(self.labels)


def luhn_ok(digits: str) -> bool:
    """Luhn checksum over a digit string; doubles every second digit from the right."""
    if not digits.isdigit() or len(digits) < 12:
        return False
    total = 0
    for i, ch in enumerate(reversed(digits)):
        n = int(ch)
        if i % 2 == 1:
            n *= 2
            if n > 9:
                n -= 9
        total += n
    return total % 10 == 0


def _validate_card(match: re.Match) -> bool:
    digits = re.sub(r"[\s-]", "", match.group(0))
    return luhn_ok(digits)


def _validate_ssn(match: re.Match) -> bool:
    # 3-2-4 grouping, no all-zero group
    area, group, serial = match.group(0).split("-")
    return area != "000" and group != "00" and serial != "0000"


VALIDATORS: dict[str, Callable[[re.Match], bool]] = {
    "luhn": _validate_card,
    "ssn": _validate_ssn,
}


@dataclass
class PatternRule:
    name: str
    regex: str
    category: Category
    context_keywords: list[str] = field(default_factory=list)
    validator: str | None = None

    def compiled(self) -> re.Pattern:
        return re.compile(self.regex)


DEFAULT_PATTERNS: list[PatternRule] = [
    PatternRule(
        name="us_ssn",
        regex=r"\b\d{3}-\d{2}-\d{4}\b",
        category=Category.PII,
        context_keywords=["ssn", "social security"],
        validator="ssn",
    ),
    PatternRule(
        name="email_address",
        regex=r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b",
        category=Category.PII,
        context_keywords=["email", "contact"],
    ),
    PatternRule(
        name="passport_number",
        regex=r"\b(?:[Pp]assport[:\s#]*)[A-Z]\d{8}\b",
        category=Category.PII,
        context_keywords=["passport"],
    ),
    PatternRule(
        name="credit_card",
        regex=r"\b(?:\d[ -]?){13,18}\d\b",
        category=Category.PFI,
        context_keywords=["card number", "credit card", "visa", "mastercard", "cvv"],
        validator="luhn",
    ),
    PatternRule(
        name="iban",
        regex=r"\b[A-Z]{2}\d{2}[A-Z0-9]{11,30}\b",
        category=Category.PFI,
        context_keywords=["iban", "bank account"],
    ),
    PatternRule(
        name="medical_record_number",
        regex=r"\b(?:MRN|mrn)[:\s#]*\d{6,10}\b",
        category=Category.PHI,
        context_keywords=["medical record", "patient"],
    ),
    PatternRule(
        name="icd10_code",
        regex=r"\b[A-TV-Z]\d{2}\.\d{1,4}\b",
        category=Category.PHI,
        context_keywords=["diagnosis", "icd", "condition"],
    ),
]

# filename/path keyword -> category, matched case-insensitively
DEFAULT_NAME_KEYWORDS: dict[str, Category] = {
    "payroll": Category.PII,
    "salaries": Category.PII,
    "salary": Category.PII,
    "passport": Category.PII,
    "employees": Category.PII,
    "ssn": Category.PII,
    "patient": Category.PHI,
    "patients": Category.PHI,
    "medical": Category.PHI,
    "diagnosis": Category.PHI,
    "cardholder": Category.PFI,
    "creditcard": Category.PFI,
    "billing": Category.PFI,
    "invoice": Category.PFI,
}


@dataclass
class SensitivityConfig:
    patterns: list[PatternRule] = field(default_factory=lambda: list(DEFAULT_PATTERNS))
    name_keywords: dict[str, Category] = field(default_factory=lambda: dict(DEFAULT_NAME_KEYWORDS))
    context_window: int = 50
    base_confidence: float = 0.6
    context_bonus: float = 0.3
    metadata_confidence: float = 0.5

    @classmethod
    def from_json(cls, path: str | Path) -> "SensitivityConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls()
        if "patterns" in doc:
            cfg.patterns = [
                PatternRule(
                    name=p["name"],
                    regex=p["regex"],
                    category=Category(p["category"]),
                    context_keywords=p.get("context_keywords", []),
                    validator=p.get("validator"),
                )
                for p in doc["patterns"]
            ]
        if "name_keywords" in doc:
            cfg.name_keywords = {k: Category(v) for k, v in doc["name_keywords"].items()}
        for key in ("context_window", "base_confidence", "context_bonus", "metadata_confidence"):
            if key in doc:
                setattr(cfg, key, doc[key])
        return cfg


def _merge(into: dict[Category, SensitivityLabel], label: SensitivityLabel) -> None:
    existing = into.get(label.category)
    if existing is None:
        into[label.category] = label
        return
    existing.evidence.extend(label.evidence)
    if label.confidence > existing.confidence:
        existing.confidence = label.confidence


def classify_text(content: str, cfg: SensitivityConfig | None = None) -> set[SensitivityLabel]:
    """Scan text for sensitive patterns. Empty or non-matching content -> empty set."""
    if not content:
        return set()
    cfg = cfg or SensitivityConfig()
    lower = content.lower()
    found: dict[Category, SensitivityLabel] = {}

    for rule in cfg.patterns:
        validator = VALIDATORS.get(rule.validator) if rule.validator else None
        for match in rule.compiled().finditer(content):
            if validator is not None and not validator(match):
                continue
            confidence = cfg.base_confidence
            window_start = max(0, match.start() - cfg.context_window)
            window_end = min(len(content), match.end() + cfg.context_window)
            window = lower[window_start:window_end]
            if any(kw in window for kw in rule.context_keywords):
                confidence = min(1.0, confidence + cfg.context_bonus)
            _merge(
                found,
                SensitivityLabel(
                    category=rule.category,
                    confidence=confidence,
                    evidence=[EvidenceSpan(rule.name, match.start(), match.end())],
                ),
            )
    return set(found.values())


def classify_metadata(name: str, path: str = "", cfg: SensitivityConfig | None = None) -> set[SensitivityLabel]:
    """Label files from filename/path keywords at the metadata confidence."""
    cfg = cfg or SensitivityConfig()
    haystack = f"{path}/{name}".lower()
    found: dict[Category, SensitivityLabel] = {}
    for keyword, category in cfg.name_keywords.items():
        idx = haystack.find(keyword)
        if idx < 0:
            continue
        _merge(
            found,
            SensitivityLabel(
                category=category,
                confidence=cfg.metadata_confidence,
                evidence=[EvidenceSpan(f"name:{keyword}", idx, idx + len(keyword))],
            ),
        )
    return set(found.values())


def decode_lossy(data: bytes | str) -> str:
    """Binary inputs are decoded lossily, never rejected."""
    if isinstance(data, str):
        return data
    return data.decode("utf-8", errors="replace")


def classify_file(
    meta: FileMeta,
    content: bytes | str | None = None,
    cfg: SensitivityConfig | None = None,
    now: datetime | None = None,
) -> FileMeta:
    """Union of text and metadata labels, per-category max confidence."""
    cfg = cfg or SensitivityConfig()
    merged: dict[Category, SensitivityLabel] = {}
    for label in classify_metadata(meta.name, meta.path, cfg):
        _merge(merged, label)
    if content is not None:
        for label in classify_text(decode_lossy(content), cfg):
            _merge(merged, label)
    meta.labels = merged
    meta.classified_at = now or datetime.now(timezone.utc)
    return meta
