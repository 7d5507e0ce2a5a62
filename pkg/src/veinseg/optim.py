"""Adam updates and seeded mini-batch scheduling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import DOMAIN_SCHEDULE, Rng


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on params and state."""
    if lr <= 0:
        raise ValueError(f"adam_step: lr must be > 0, got {lr}")
    if set(params) != set(grads):
        raise ValueError("adam_step: params and grads name sets differ")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class BatchSchedule:
    seed: int
    n_samples: int
    batch_size: int
    permutations: list[list[int]] = field(repr=False)

    @property
    def batches_per_epoch(self) -> int:
        return self.n_samples // self.batch_size

    def epoch_batches(self, epoch: int) -> list[list[int]]:
        """Index batches for one epoch; the trailing partial batch is dropped."""
        perm = self.permutations[epoch]
        bs = self.batch_size
        return [perm[i * bs:(i + 1) * bs] for i in range(self.batches_per_epoch)]


def epoch_permutation(seed: int, epoch: int, n_samples: int) -> list[int]:
    """The shuffle for one epoch, addressable without replaying earlier epochs."""
    return Rng(seed, stream=DOMAIN_SCHEDULE + epoch).permutation(n_samples)


def make_schedule(seed: int, n_samples: int, batch_size: int, n_epochs: int) -> BatchSchedule:
    if batch_size < 1:
        raise ValueError(f"make_schedule: batch_size must be >= 1, got {batch_size}")
    if batch_size > n_samples:
        raise ValueError(f"make_schedule: batch_size {batch_size} exceeds n_samples {n_samples}")
    perms = [epoch_permutation(seed, e, n_samples) for e in range(n_epochs)]
    return BatchSchedule(seed=seed, n_samples=n_samples, batch_size=batch_size, permutations=perms)
