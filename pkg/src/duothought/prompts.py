"""Versioned prompt/template assets and the rendering helpers shared across stages."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

TEMPLATE_VERSION = "v1"

_SLOTS = ("think_start", "think_end", "answer_start", "answer_end", "rethink")


@lru_cache(maxsize=None)
def _asset(name: str) -> str:
    path = resources.files("duothought.assets").joinpath(f"{name}_{TEMPLATE_VERSION}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


def chunking_prompt(problem: str, numbered_cot: str) -> str:
    """Fill the chunking template; slot substitution is literal (the template body contains JSON braces)."""
    text = _asset("chunking")
    return text.replace("{Problem}", problem).replace("{Long CoT}", numbered_cot)


def completion_prompt(problem: str, partial_solution: str, missing_thoughts: str) -> str:
    text = _asset("completion")
    text = text.replace("{Problem}", problem)
    text = text.replace("{Incompleted solution process}", partial_solution)
    return text.replace("{Incompleted thought}", missing_thoughts)


def continuation_cue() -> str:
    return _asset("continuation_cue")


def role_template(role: str, tags) -> str:
    """Instruction template for the long or short role, with tag placeholders resolved."""
    if role not in ("long", "short"):
        raise ValueError(f"unknown role: {role!r}")
    text = _asset(f"{role}_role")
    for slot in _SLOTS:
        text = text.replace("{" + slot + "}", getattr(tags, slot))
    return text


def compose_prompt(template: str, question: str, history: str = "") -> str:
    """Build a role prompt as template, question, and rendered history joined by blank lines.

    History is omitted entirely when empty so a first-turn prompt is exactly
    template + question.
    """
    parts = [template, question]
    if history:
        parts.append(history)
    return "\n\n".join(parts)
