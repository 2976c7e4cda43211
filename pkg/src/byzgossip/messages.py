from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RoundMessages:
    """Vectors sent in one round, keyed by directed edge ``(sender, receiver)``."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, edge):
        return self.values[edge]

    def __setitem__(self, edge, vec):
        self.values[edge] = np.asarray(vec, dtype=float)

    def __contains__(self, edge):
        return edge in self.values

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def for_receiver(self, i: int) -> dict:
        return {s: v for (s, r), v in self.values.items() if r == i}

    def update(self, other: "RoundMessages"):
        self.values.update(other.values)
