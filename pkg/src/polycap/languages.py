"""Language code allowlist and validation.

All codes are ISO 639-3.  The corpus covers English plus twenty African
target languages; nothing outside this set is ever written to a manifest.
"""
from __future__ import annotations

from .errors import LanguageError

SOURCE_LANGUAGE = "eng"

# ISO 639-3 -> display name for the twenty supported target languages.
TARGET_LANGUAGE_NAMES: dict[str, str] = {
    "afr": "Afrikaans",
    "amh": "Amharic",
    "hau": "Hausa",
    "ibo": "Igbo",
    "lug": "Luganda",
    "lin": "Lingala",
    "kin": "Kinyarwanda",
    "yor": "Yoruba",
    "cjk": "Chokwe",
    "dyu": "Dyula",
    "dik": "Dinka",
    "ewe": "Ewe",
    "fuv": "Fulfulde",
    "kam": "Kamba",
    "kab": "Kabyle",
    "kmb": "Kimbundu",
    "kik": "Kikuyu",
    "kon": "Kongo",
    "lua": "Luba-Kasai",
    "bem": "Bemba",
}

TARGET_LANGUAGES: frozenset[str] = frozenset(TARGET_LANGUAGE_NAMES)
ALLOWED_LANGUAGES: frozenset[str] = TARGET_LANGUAGES | {SOURCE_LANGUAGE}


def validate_language(code: str) -> str:
    """Normalize ``code`` to the lowercase allowlisted form.

    Raises LanguageError for anything outside the 21-code allowlist; the
    message carries the full allowlist so callers can surface it.
    """
    normalized = code.strip().lower()
    if normalized not in ALLOWED_LANGUAGES:
        allowed = ", ".join(sorted(ALLOWED_LANGUAGES))
        raise LanguageError(
            f"unknown language code {code!r}; allowed codes: {allowed}"
        )
    return normalized


def validate_target_language(code: str) -> str:
    """Like validate_language but rejects the English source code."""
    normalized = validate_language(code)
    if normalized == SOURCE_LANGUAGE:
        raise LanguageError(
            f"{SOURCE_LANGUAGE!r} is the source language, not a translation target"
        )
    return normalized
