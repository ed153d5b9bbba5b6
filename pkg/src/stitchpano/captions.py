"""Caption preparation for panorama fine-tuning datasets.

Auto-generated captions tend to carry junk tags (the canonical offender is
"3 6 0 picture") that interfere with trigger-word control, so preparation
strips an exact-substring blocklist, normalizes whitespace and comma
debris, and prepends the trigger phrase that activates panorama behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

DEFAULT_TRIGGER = "360-degree panoramic image"
DEFAULT_BLOCKLIST = ("3 6 0 picture",)
DEFAULT_SEPARATOR = ", "


@dataclass(frozen=True)
class CaptionRule:
    """Blocklist of exact substrings to drop, plus the trigger word to prepend."""

    blocklist: tuple[str, ...] = DEFAULT_BLOCKLIST
    trigger: str = DEFAULT_TRIGGER
    separator: str = DEFAULT_SEPARATOR

    def __post_init__(self) -> None:
        if not self.trigger:
            raise ConfigError("trigger word must be non-empty")
        if any(not entry for entry in self.blocklist):
            raise ConfigError("blocklist entries must be non-empty")


def _normalize(text: str, rule: CaptionRule) -> str:
    for entry in rule.blocklist:
        text = text.replace(entry, " ")
    text = " ".join(text.split())
    segments = [segment.strip() for segment in text.split(",")]
    return ", ".join(segment for segment in segments if segment)


def prepare_caption(raw: str, rule: CaptionRule = CaptionRule()) -> str:
    """Clean a caption and prepend the trigger word.

    Idempotent: a caption that already starts with the trigger is returned
    cleaned but without a second trigger.
    """
    text = _normalize(raw, rule)
    if text == rule.trigger or text.startswith(rule.trigger + ","):
        return text
    if not text:
        return rule.trigger
    return rule.trigger + rule.separator + text
