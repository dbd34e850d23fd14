"""Errores de la identificación de topología, etiquetados con la etapa que falló."""

from __future__ import annotations

from typing import Sequence, Tuple

STAGES = ("input", "coarse", "prune", "fine")


class TopologyLearningError(RuntimeError):
    """Base error; ``stage`` names the pipeline step (input, coarse, prune, fine)."""

    def __init__(self, message: str, stage: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SingularGramError(TopologyLearningError):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="coarse")


class DisconnectedTopologyError(TopologyLearningError):
    def __init__(self, message: str, stage: str = "prune") -> None:
        super().__init__(message, stage=stage)


class FineIdentificationDivergence(TopologyLearningError):
    """Carries the (iteration, mismatch) history of the failed refinement."""

    def __init__(self, message: str, history: Sequence[Tuple[int, float]]) -> None:
        super().__init__(message, stage="fine")
        self.history = tuple(history)
