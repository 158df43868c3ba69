from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters shared by every model family.

    Defaults follow the published protocol (20-frame sequences, batch size 4,
    50 epochs, 128-dim embedding) with frames shrunk to 32x32 for desk-scale runs.
    """

    sequence_length: int = 20
    image_height: int = 32
    image_width: int = 32
    projection_dim: int = 128
    dense_dim: int = 256
    activation: str = "relu"
    num_heads: int = 8
    patch_size: int = 8
    lstm_layers: int = 1
    lstm_units: int = 128
    transformer_layers: int = 1
    categories: int = 4
    batch_size: int = 4
    epochs: int = 50
    learning_rate: float = 1e-3

    def __post_init__(self):
        for name in (
            "sequence_length", "image_height", "image_width", "projection_dim", "dense_dim",
            "num_heads", "patch_size", "lstm_layers", "lstm_units", "transformer_layers",
            "categories", "batch_size",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if self.projection_dim % self.num_heads:
            raise ValueError(f"projection_dim {self.projection_dim} is not divisible by num_heads {self.num_heads}")
        if self.projection_dim % 2:
            raise ValueError(f"projection_dim must be even for the positional encoding, got {self.projection_dim}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def with_updates(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**data)


HYPERPARAMETERS = tuple(f.name for f in fields(ModelConfig))
