"""Encoder and guidance configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_len: int = 64
    tie_embeddings: bool = True
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def d_hidden(self):
        return self.d_model

    def to_dict(self):
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "tie_embeddings": self.tie_embeddings,
            "layer_norm_eps": self.layer_norm_eps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class GuidanceSpec:
    """Which attention heads are pulled toward the adjacency target.

    ``n_layers`` counts supervised layers from the top of the stack down;
    ``head_indices`` picks heads within each supervised layer; ``alpha``
    weights the guidance term in the total loss.
    """

    n_layers: int
    head_indices: tuple[int, ...]
    alpha: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "head_indices", tuple(self.head_indices))
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if len(set(self.head_indices)) != len(self.head_indices):
            raise ValueError("duplicate head indices")
        if any(h < 0 for h in self.head_indices):
            raise ValueError("head indices must be >= 0")

    def check_against(self, config: ModelConfig):
        if self.n_layers > config.n_layers:
            raise ValueError(
                f"cannot supervise {self.n_layers} layers of a "
                f"{config.n_layers}-layer model"
            )
        for h in self.head_indices:
            if h >= config.n_heads:
                raise ValueError(f"head index {h} out of range")

    def supervised_layers(self, config: ModelConfig):
        """Indices of supervised layers: the topmost ``n_layers`` of the stack."""
        self.check_against(config)
        return tuple(range(config.n_layers - self.n_layers, config.n_layers))

    def to_dict(self):
        return {
            "n_layers": self.n_layers,
            "head_indices": list(self.head_indices),
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_layers=d["n_layers"],
            head_indices=tuple(d["head_indices"]),
            alpha=d.get("alpha", 0.1),
        )
