"""Model configurations for the ablation grid.

Each configuration toggles three information channels independently:
peripheral vision, gaze position maps, and past states.  Six of the
eight combinations are constructible; with both the periphery and the
gaze maps removed the remaining input no longer depends on where the
player looked, so those two combinations are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidConfig


@dataclass(frozen=True)
class ModelConfig:
    """One cell of the ablation grid."""

    id: str
    periphery: bool
    gaze: bool
    past: bool

    def __post_init__(self):
        if not self.periphery and not self.gaze:
            raise InvalidConfig(
                f"configuration {self.id!r} disables both the periphery and the "
                "gaze maps; the input would carry no gaze information",
                config_id=self.id)

    @property
    def channels(self) -> tuple[bool, bool, bool]:
        return (self.periphery, self.gaze, self.past)


CONFIGS: dict[str, ModelConfig] = {
    "A": ModelConfig("A", periphery=True, gaze=True, past=True),
    "B": ModelConfig("B", periphery=True, gaze=True, past=False),
    "C": ModelConfig("C", periphery=True, gaze=False, past=True),
    "D": ModelConfig("D", periphery=True, gaze=False, past=False),
    "E": ModelConfig("E", periphery=False, gaze=True, past=True),
    "F": ModelConfig("F", periphery=False, gaze=True, past=False),
}

CONFIG_IDS = tuple(CONFIGS)  # ("A", ..., "F") in canonical order


def get_config(config_id: str) -> ModelConfig:
    """Look up a configuration by its one-letter id."""
    try:
        return CONFIGS[config_id.upper()]
    except KeyError:
        raise InvalidConfig(f"unknown configuration id {config_id!r}",
                            config_id=config_id) from None
