"""Shared fixtures: the 146-step modular-inverse chunking corpus and dialogue replay scripts."""

from __future__ import annotations

import json

import pytest

from duothought.chunking import ChunkedTrace, StepList, split_steps, validate_blocks

INVERSE_QUESTION = (
    "Given that $47^{-1} \\equiv 51 \\pmod{97}$, find $28^{-1} \\pmod{97}$, as a residue "
    "modulo 97. (Give a number between 0 and 96, inclusive.)"
)

_OPENING_STEPS = [
    "So I have this problem here: given that $47^{-1} \\equiv 51 \\pmod{97}$, I need to find "
    "$28^{-1} \\pmod{97}$, and it should be a number between 0 and 96, inclusive. Alright, "
    "let's see how to approach this.",
    "First off, $47^{-1} \\pmod{97}$ means the multiplicative inverse of 47 modulo 97, which "
    "is a number that, when multiplied by 47, gives a result that's congruent to 1 modulo 97. "
    "They've already told me that $47^{-1} \\equiv 51 \\pmod{97}$, so that's a starting point.",
    "Now, I need to find the inverse of 28 modulo 97. That is, find a number $x$ such that "
    "$28x \\equiv 1 \\pmod{97}$. I wonder if there's a way to relate this to the inverse of 47 "
    "that's already given.",
    "One thing I remember is that in modular arithmetic, if you have inverses of certain "
    "numbers, you might be able to combine them in useful ways. Maybe I can express 28 in "
    "terms of 47 or something related.",
    "Let me think about the relationship between 28 and 47 modulo 97. If I can find some "
    "expression that relates them, I might be able to use the known inverse of 47 to find the "
    "inverse of 28.",
    "Hmm, perhaps I can find a multiple of 47 that is congruent to 28 modulo 97. That is, "
    "find some integer $k$ such that $47k \\equiv 28 \\pmod{97}$. If I can find such a $k$, "
    "then maybe I can manipulate that equation to find the inverse of 28.",
    "Let's try to solve $47k \\equiv 28 \\pmod{97}$. Since I know that $47^{-1} \\equiv 51 "
    "\\pmod{97}$, I can multiply both sides of the equation by 51 to solve for $k$:",
    "$k \\equiv 28 \\times 51 \\pmod{97}$",
    "Let me calculate $28 \\times 51$:",
    "$28 \\times 50 = 1400$",
    "$28 \\times 1 = 28$",
    "So, $1400 + 28 = 1428$",
    "Now, compute $1428 \\pmod{97}$. To find this, I'll divide 1428 by 97 and find the "
    "remainder.",
    "First, $97 \\times 10 = 970$, and $97 \\times 4 = 388$, so total $970 + 388 = 1358$.",
    "Subtracting: $1428 - 1358 = 70$",
    "So, $1428 \\equiv 70 \\pmod{97}$, which means $k \\equiv 70 \\pmod{97}$.",
]

_CLOSING_STEPS = [
    "So, my final answer is that $28^{-1} \\equiv 52 \\pmod{97}$.",
    "Final answer: $\\boxed{52}$",
]

INVERSE_BLOCKS = [
    (0, 5, "Question understanding"),
    (6, 15, "Preliminary attempt"),
    (16, 25, "Verify preliminary attempt"),
    (26, 49, "Solve using extended Euclidean algorithm"),
    (50, 69, "Try to solve using known inverse"),
    (70, 81, "Verify answer"),
    (82, 142, "Further attempts and verification"),
    (143, 145, "Final conclusion"),
]


def _proposal_payload() -> dict:
    return {
        f"block {k}": {"start": start, "end": end, "block type": block_type}
        for k, (start, end, block_type) in enumerate(INVERSE_BLOCKS, start=1)
    }


@pytest.fixture(scope="session")
def inverse_steps() -> list[str]:
    steps = list(_OPENING_STEPS)
    for k in range(len(steps), 144):
        steps.append(
            f"Continuing from the previous congruence, attempt {k} rewrites the relation and "
            "checks the candidate inverse against the modulus."
        )
    steps.extend(_CLOSING_STEPS)
    assert len(steps) == 146
    return steps


@pytest.fixture(scope="session")
def inverse_cot(inverse_steps: list[str]) -> str:
    return "\n\n".join(inverse_steps)


@pytest.fixture(scope="session")
def inverse_proposal_json() -> str:
    return json.dumps(_proposal_payload(), ensure_ascii=False)


@pytest.fixture()
def inverse_steplist(inverse_cot: str) -> StepList:
    return split_steps(INVERSE_QUESTION, inverse_cot)


@pytest.fixture()
def inverse_trace(inverse_steplist: StepList) -> ChunkedTrace:
    trace = validate_blocks(INVERSE_BLOCKS, inverse_steplist)
    trace.trace_id = "inverse-97"
    return trace


MEAN_QUESTION = (
    "Given that the arithmetic mean of two positive numbers $a$ and $b$ is 4, then the "
    "maximum value of the geometric mean of $a$ and $b$ is ?"
)

MEAN_THINK_1 = " Ok. So I have a question about the arithmetic mean of two positive numbers. "
MEAN_RETHINK = (
    " Let's compute the geometric mean from the constraint. Therefore, current approach need "
    "to be reconsidered. "
)
MEAN_THINK_2 = (
    " Wait, wait, hold on. maybe i'm overthinking this. perhaps there's a simpler way. "
)
MEAN_FINAL = " Therefore, the answer should be 4. "


def table2_scripts(tags) -> tuple[list, list]:
    """Scripted long/short behaviors replaying the two-pair dialogue shape.

    Matchers key on body phrases rather than tag tokens: the role templates
    themselves spell out the tag strings, so tags appear in every prompt.
    """
    long_script = [
        (
            (lambda p: "current approach need to be reconsidered" in p),
            f"{tags.think_start}{MEAN_THINK_2}{tags.think_end}",
        ),
        ((lambda p: True), f"{tags.think_start}{MEAN_THINK_1}{tags.think_end}"),
    ]
    short_script = [
        (
            (lambda p: "overthinking" in p),
            f"{tags.answer_start}{MEAN_FINAL}{tags.answer_end}",
        ),
        ((lambda p: True), f"{tags.answer_start}{MEAN_RETHINK}{tags.rethink}"),
    ]
    return long_script, short_script
