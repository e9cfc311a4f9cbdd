"""Bundled experiment presets.

The synthetic presets pin the two data regimes; the benchmark training
recipe keeps the published batch-size/epoch shape but raises the learning
rate to a value suited to the small analytic encoders, so the full pipeline
converges in seconds on a CPU.
"""

from __future__ import annotations

from .synthdata import SynthConfig
from .trainer import TrainConfig

HIDDEN_DIMS = (64,)
EMBEDDING_DIM = 32

SYNTH_PRESETS = ("text_rich", "visual_rich")


def synth_preset(regime: str = "text_rich", seed: int = 0) -> SynthConfig:
    return SynthConfig.preset(regime, seed=seed)


def bench_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Training recipe used by the bundled benchmark and the acceptance rig."""
    base = dict(
        batch_size=16,
        epochs=8,
        learning_rate=3e-3,
        optimizer="adam",
        tau_soft=1.0,
        tau_weight=1.0,
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)
