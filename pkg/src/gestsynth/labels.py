"""The eight emotion classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

EMOTIONS = (
    "neutral", "happiness", "sadness", "anger",
    "fear", "disgust", "surprise", "contempt",
)
N_EMOTIONS = len(EMOTIONS)


@dataclass(frozen=True)
class EmotionLabel:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_EMOTIONS:
            raise ConfigError(f"emotion index {self.index} outside [0, {N_EMOTIONS})")

    @property
    def name(self) -> str:
        return EMOTIONS[self.index]

    def one_hot(self) -> np.ndarray:
        v = np.zeros(N_EMOTIONS, dtype=np.float64)
        v[self.index] = 1.0
        return v

    @classmethod
    def from_name(cls, name: str) -> "EmotionLabel":
        try:
            return cls(EMOTIONS.index(name.lower()))
        except ValueError:
            raise ConfigError(
                f"unknown emotion {name!r}; choose from {', '.join(EMOTIONS)}"
            ) from None
