"""
Rule-based verifiable reward: pull the answer out of the last balanced \\boxed{...},
normalize it, compare it with the reference and emit a binary reward.
"""

import re
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

from src.utils.errors import ConfigError

BOXED_MARKER = "\\boxed{"

_WHITESPACE = re.compile(r"\s+")
_DECIMAL = re.compile(r"^([+-]?)([0-9]*)(?:\.([0-9]*))?$")


@dataclass(frozen=True)
class RewardVerdict:
    extracted: Optional[str]
    normalized: Optional[str]
    matched: bool
    reward: float

    def to_dict(self) -> dict:
        return {
            "extracted": self.extracted,
            "normalized": self.normalized,
            "matched": self.matched,
            "reward": self.reward,
        }


def _balanced_span(text: str, open_idx: int) -> Optional[Tuple[int, int]]:
    """Content span of the brace opened at text[open_idx], or None if it never closes."""
    depth = 0
    for i in range(open_idx, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return open_idx + 1, i
    return None


def _marker_positions(text: str) -> Iterator[int]:
    start = text.find(BOXED_MARKER)
    while start != -1:
        yield start
        start = text.find(BOXED_MARKER, start + 1)


def extract_boxed(text: str) -> Optional[str]:
    """
    Contents of the last balanced \\boxed{...} in `text`.

    Occurrences are tried from the last one backwards; the first whose braces
    balance wins. Nested braces are kept verbatim. Returns None when no
    occurrence balances.
    """
    for start in reversed(list(_marker_positions(text))):
        span = _balanced_span(text, start + len(BOXED_MARKER) - 1)
        if span is not None:
            return text[span[0]:span[1]]
    return None


def _canonical_decimal(s: str) -> Optional[str]:
    m = _DECIMAL.match(s)
    if m is None:
        return None
    sign, whole, frac = m.group(1), m.group(2), m.group(3)
    if not whole and not frac:
        return None
    whole = whole.lstrip("0") or "0"
    frac = (frac or "").rstrip("0")
    body = f"{whole}.{frac}" if frac else whole
    if body == "0" or sign != "-":
        return body
    return "-" + body


def _trim_once(s: str) -> str:
    s = _WHITESPACE.sub(" ", s).strip()
    if s.startswith("+"):
        s = s[1:].strip()
    while s.endswith("."):
        s = s[:-1].rstrip()
    return s


def normalize_answer(raw: str) -> str:
    """
    Canonical answer string.

    Whitespace runs collapse to one space and the ends are trimmed; a leading
    "+" and trailing "." are removed (repeatedly, so the result is a fixed
    point); pure decimal numerals lose leading zeros, trailing fractional
    zeros, and the sign of zero. U+2212 is read as "-".
    """
    s = raw.replace("−", "-")
    while True:
        trimmed = _trim_once(s)
        if trimmed == s:
            break
        s = trimmed
    numeral = _canonical_decimal(s)
    return numeral if numeral is not None else s


def grade(response: str, reference: str) -> RewardVerdict:
    """Binary reward: 1.0 iff the last boxed answer normalizes to the normalized reference."""
    if reference is None or not reference.strip():
        raise ConfigError("grading reference must be a non-empty string")

    extracted = extract_boxed(response)
    if extracted is None:
        return RewardVerdict(extracted=None, normalized=None, matched=False, reward=0.0)

    normalized = normalize_answer(extracted)
    matched = normalized == normalize_answer(reference)
    return RewardVerdict(
        extracted=extracted,
        normalized=normalized,
        matched=matched,
        reward=1.0 if matched else 0.0,
    )
