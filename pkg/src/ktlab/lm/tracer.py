"""TracerContract wrapper around the tiny LM: format, encode, score yes/no."""

from __future__ import annotations

from ..data import Exercise, StudentHistory
from ..ktlp import PromptTemplate, RepresentationMode, format_example
from ..vocab import TokenizerVocab
from .model import LmParams, predict_correctness, predict_correctness_batch


class LmTracer:
    def __init__(
        self,
        params: LmParams,
        vocab: TokenizerVocab,
        template: PromptTemplate = PromptTemplate(),
        mode: RepresentationMode = RepresentationMode.DESCRIPTION,
    ):
        self.params = params
        self.vocab = vocab
        self.template = template
        self.mode = RepresentationMode(mode)

    def _text(self, history: StudentHistory, target: Exercise) -> str:
        return format_example(history, target, self.mode, self.template).input_text

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        return predict_correctness(
            self.params, self._text(history, target), self.vocab, self.template
        )

    def predict_batch(self, pairs) -> list[float]:
        texts = [self._text(h, t) for h, t in pairs]
        return list(
            predict_correctness_batch(self.params, texts, self.vocab, self.template)
        )
