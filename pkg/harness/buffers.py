"""
Per-task replay and context buffers.
"""

import logging
from collections import deque
from typing import Deque, Iterable, List, Optional

import numpy as np

from channel.environment import Transition
from learner.encoder import ContextBatch
from learner.sac import TransitionBatch

from .exceptions import HarnessUsageError


logger = logging.getLogger(__name__)

DEFAULT_REPLAY_CAPACITY = 1000
DEFAULT_CONTEXT_SIZE = 150


class ReplayBuffer:
    """FIFO store of one task's transitions; the oldest entry is evicted first."""

    def __init__(self, capacity: int = DEFAULT_REPLAY_CAPACITY):
        if capacity < 1:
            raise HarnessUsageError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: Deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def append(self, transition: Transition) -> None:
        self._items.append(transition)

    def extend(self, transitions: Iterable[Transition]) -> None:
        self._items.extend(transitions)

    def clear(self) -> None:
        self._items.clear()

    def latest(self, count: int) -> List[Transition]:
        """The ``count`` most recent transitions, oldest first."""
        if count <= 0:
            return []
        return list(self._items)[-count:]

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        """
        Uniform draw without replacement. A buffer holding fewer than
        ``batch_size`` transitions returns all of them in random order.
        """
        if batch_size < 0:
            raise HarnessUsageError(f"Batch size must be non-negative, got {batch_size}")
        size = min(batch_size, len(self._items))
        indices = rng.choice(len(self._items), size=size, replace=False) if size else []
        return [self._items[i] for i in indices]

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        return TransitionBatch.from_transitions(self.sample(batch_size, rng))


class ContextBuffer:
    """The most recent ``size`` transitions of the current task, oldest first."""

    def __init__(self, size: int = DEFAULT_CONTEXT_SIZE, width: Optional[int] = None):
        if size < 1:
            raise HarnessUsageError(f"Context size must be positive, got {size}")
        self.size = size
        self.width = width
        self._items: Deque[Transition] = deque(maxlen=size)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def clear(self) -> None:
        self._items.clear()

    @property
    def transitions(self) -> List[Transition]:
        return list(self._items)

    def batch(self) -> ContextBatch:
        return ContextBatch.from_transitions(self.transitions, width=self.width)
