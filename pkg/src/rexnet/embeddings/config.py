from __future__ import annotations

from dataclasses import asdict, dataclass

METHODS = ("sgns", "glove")
DEFAULT_LEARNING_RATE = {"sgns": 0.025, "glove": 0.05}


@dataclass(frozen=True)
class EmbeddingConfig:
    """Hyperparameters for both embedding trainers.

    ``learning_rate=None`` picks the method default (0.025 for SGNS with
    linear decay, 0.05 for GloVe's AdaGrad). ``reshuffle`` re-permutes every
    sentence at the start of each SGNS epoch after the first; GloVe instead
    reshuffles its entry visiting order. ``glove_export`` selects ``sum``
    (input + context vectors) or ``input``.
    """

    dim: int = 100
    window: int = 25
    method: str = "glove"
    epochs: int = 15
    learning_rate: float | None = None
    negatives: int = 5
    noise_power: float = 0.75
    x_max: float = 100.0
    alpha: float = 0.75
    seed: int = 0
    reshuffle: bool = True
    glove_export: str = "sum"
    min_lr_fraction: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("dim", "window", "epochs", "negatives", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.x_max > 0:
            raise ValueError("x_max must be > 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.glove_export not in ("sum", "input"):
            raise ValueError("glove_export must be 'sum' or 'input'")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATE[self.method]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rate"] = self.lr
        return d
