"""Render student histories as text prompts and parse them back.

A history becomes a sequence of ``(exercise representation, correctness
word)`` pairs joined by an arrow connector, followed by a target segment and
an answer cue; the label becomes a one-word answer ("yes"/"no"). Exercises
are represented either by their KC description or by an atomic ``<kc_id>``
token. All delimiters live on :class:`PromptTemplate` so experiments can vary
them without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .data import Exercise, InteractionDataset, StudentHistory
from .errors import FormattingError, ParseError, TemplateError


class RepresentationMode(str, Enum):
    DESCRIPTION = "description"
    ID = "id"


DEFAULT_INSTRUCTION = (
    "Given the student's past answers, decide if the student will answer the next exercise correctly."
)


@dataclass(frozen=True)
class PromptTemplate:
    instruction_text: str = DEFAULT_INSTRUCTION
    pair_open: str = "("
    pair_close: str = ")"
    pair_separator: str = ", "
    step_connector: str = " -> "
    target_marker: str = " Target: "
    answer_cue: str = " Answer:"
    correctness_words: tuple[str, str] = ("incorrect", "correct")  # indexed by correctness
    answer_words: tuple[str, str] = ("no", "yes")  # indexed by label

    def __post_init__(self):
        delims = (
            self.pair_open,
            self.pair_close,
            self.pair_separator,
            self.step_connector,
            self.target_marker,
            self.answer_cue,
        )
        if any(not d for d in delims):
            raise TemplateError("template delimiters must be non-empty")
        if len(set(delims)) != len(delims):
            raise TemplateError("template delimiters must be pairwise distinct")
        if self.answer_words[0] == self.answer_words[1]:
            raise TemplateError("answer words must be distinct")
        if self.correctness_words[0] == self.correctness_words[1]:
            raise TemplateError("correctness words must be distinct")

    def delimiters(self) -> tuple[str, ...]:
        return (
            self.step_connector,
            self.target_marker,
            self.answer_cue,
            self.pair_separator,
            self.pair_open,
            self.pair_close,
        )

    def sanitize(self, name: str) -> str:
        """Replace delimiter occurrences (and id brackets) inside a KC name.

        Raises TemplateError if a delimiter survives sanitization, which can
        only happen for degenerate delimiter choices (e.g. a single space).
        """
        out = name
        for d in self.delimiters():
            out = out.replace(d, " ")
        out = out.replace("<", " ").replace(">", " ")
        out = " ".join(out.split())
        for d in self.delimiters():
            if d in out:
                raise TemplateError(
                    f"delimiter {d!r} collides with KC name {name!r} after sanitization"
                )
        return out


@dataclass(frozen=True)
class KtlpExample:
    """One formatted prediction task: text in, answer word out."""

    input_text: str
    output_text: str
    student_id: str
    step: int


def _exercise_repr(ex: Exercise, mode: RepresentationMode, template: PromptTemplate) -> str:
    if mode == RepresentationMode.ID:
        return f"<{ex.kc_id}>"
    name = ex.kc_name
    if not name or not name.strip():
        raise FormattingError(
            f"description mode requires a non-empty kc_name (exercise {ex.exercise_id!r})"
        )
    return template.sanitize(name)


def format_example(
    history: StudentHistory,
    target: Exercise,
    mode: RepresentationMode = RepresentationMode.DESCRIPTION,
    template: PromptTemplate = PromptTemplate(),
    label: int | None = None,
) -> KtlpExample:
    """Render a history prefix plus target exercise into a text task.

    The input text is the instruction, the (representation, correctness word)
    pair sequence joined by the step connector, the target marker with the
    target's representation, and the answer cue. ``label`` fills in the
    output answer word; pass None for inference-time examples.
    """
    mode = RepresentationMode(mode)
    pairs = []
    for it in history.interactions:
        rep = _exercise_repr(it.exercise(), mode, template)
        word = template.correctness_words[it.correct]
        pairs.append(f"{template.pair_open}{rep}{template.pair_separator}{word}{template.pair_close}")
    body = template.step_connector.join(pairs)
    target_rep = _exercise_repr(target, mode, template)
    text = template.instruction_text
    if body:
        text += " " + body
    text += f"{template.target_marker}{target_rep}{template.answer_cue}"
    output = format_label(label, template) if label is not None else ""
    step = len(history.interactions)
    return KtlpExample(input_text=text, output_text=output, student_id=history.student_id, step=step)


def format_label(y: int, template: PromptTemplate = PromptTemplate()) -> str:
    if y not in (0, 1):
        raise FormattingError(f"label must be 0 or 1, got {y!r}")
    return template.answer_words[y]


def parse_label(word: str, template: PromptTemplate = PromptTemplate()) -> int:
    try:
        return template.answer_words.index(word)
    except ValueError:
        raise ParseError(f"unknown answer word {word!r}") from None


def parse_example(text: str, template: PromptTemplate = PromptTemplate()):
    """Invert :func:`format_example`: recover (pairs, target representation).

    Pairs come back as (representation, correctness) with correctness as
    0/1. Only texts produced by ``format_example`` with the same template are
    guaranteed to parse; anything else raises ParseError with a character
    offset.
    """
    if not text.startswith(template.instruction_text):
        raise ParseError("text does not start with the template instruction", offset=0)
    pos = len(template.instruction_text)
    marker_at = text.rfind(template.target_marker)
    if marker_at < pos:
        raise ParseError("target marker not found", offset=pos)
    if not text.endswith(template.answer_cue):
        raise ParseError("text does not end with the answer cue", offset=len(text))
    target_rep = text[marker_at + len(template.target_marker) : len(text) - len(template.answer_cue)]

    region = text[pos:marker_at]
    pairs: list[tuple[str, int]] = []
    if region:
        if not region.startswith(" "):
            raise ParseError("expected a space before the pair sequence", offset=pos)
        region = region[1:]
        offset = pos + 1
        for chunk in region.split(template.step_connector):
            if not (chunk.startswith(template.pair_open) and chunk.endswith(template.pair_close)):
                raise ParseError("malformed pair", offset=offset)
            inner = chunk[len(template.pair_open) : len(chunk) - len(template.pair_close)]
            rep, sep, word = inner.rpartition(template.pair_separator)
            if not sep:
                raise ParseError("pair separator not found", offset=offset)
            try:
                correctness = template.correctness_words.index(word)
            except ValueError:
                raise ParseError(f"unknown correctness word {word!r}", offset=offset) from None
            pairs.append((rep, correctness))
            offset += len(chunk) + len(template.step_connector)
    return pairs, target_rep


def format_dataset(
    ds: InteractionDataset,
    mode: RepresentationMode = RepresentationMode.DESCRIPTION,
    template: PromptTemplate = PromptTemplate(),
    min_step: int = 1,
) -> list[KtlpExample]:
    """Format every next-step prediction target with step >= ``min_step``.

    A student with n interactions yields n - min_step examples: each prefix
    predicts the following interaction.
    """
    out: list[KtlpExample] = []
    for sid in ds.student_ids():
        hist = ds.histories[sid]
        for t in range(min_step, len(hist)):
            tgt = hist.interactions[t]
            out.append(
                format_example(hist.prefix(t), tgt.exercise(), mode, template, label=tgt.correct)
            )
    return out


def write_jsonl(examples: Sequence[KtlpExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "input": ex.input_text,
                        "output": ex.output_text,
                        "student_id": ex.student_id,
                        "step": ex.step,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_jsonl(path) -> list[KtlpExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", row=lineno) from None
            out.append(
                KtlpExample(
                    input_text=obj["input"],
                    output_text=obj["output"],
                    student_id=obj.get("student_id", ""),
                    step=int(obj.get("step", 0)),
                )
            )
    return out
