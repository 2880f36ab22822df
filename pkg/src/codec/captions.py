from typing import Iterable

from src.errors import UsageError

DIGITS = ("zero", "one", "two", "three", "four", "five", "six", "seven")
WORDS = ("pad", "constant", "horizontal", "vertical", "checker", "ramp", "base", "delta", *DIGITS)
WORD_IDS = {word: i for i, word in enumerate(WORDS)}
CAPTION_LEN = 8


def octal_words(value: int) -> list[str]:
    """Two base-8 digit words, high first."""
    return [DIGITS[(value // 8) % 8], DIGITS[value % 8]]


def tokenize_caption(text: str | Iterable[str]) -> tuple[int, ...]:
    words = text.split() if isinstance(text, str) else list(text)
    unknown = [w for w in words if w not in WORD_IDS]
    if unknown:
        raise UsageError(f"unknown caption words {unknown}; vocabulary is {list(WORDS)}")
    if len(words) > CAPTION_LEN:
        raise UsageError(f"caption has {len(words)} words, at most {CAPTION_LEN} allowed")
    return tuple(WORD_IDS[w] for w in words)


def detokenize(ids: Iterable[int]) -> str:
    return " ".join(WORDS[i] for i in ids if i != WORD_IDS["pad"])
