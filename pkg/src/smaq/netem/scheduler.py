import hashlib
import heapq
import itertools
import random
from typing import Any, Callable, List, Optional, Tuple

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms(value: float) -> int:
    return int(round(value * NS_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * NS_PER_S))


def derive_seed(seed: int, name: str) -> int:
    # Stable across processes, unlike hash().
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class EventScheduler:
    """Discrete-event loop over integer nanoseconds.

    Ties are broken by insertion order, or by a seeded RNG when
    ``shuffle_ties`` is set (used to exercise adversarial interleavings).
    """

    def __init__(self, seed: int = 0, shuffle_ties: bool = False) -> None:
        self.seed = seed
        self.now = 0
        self.events_run = 0
        self._queue: List[Tuple[int, Any, Callable, tuple]] = []
        self._seq = itertools.count()
        self._tie_rng = random.Random(derive_seed(seed, "interleave")) if shuffle_ties else None
        self._stopped = False

    def rng(self, name: str) -> random.Random:
        return random.Random(derive_seed(self.seed, name))

    def call_at(self, when: int, callback: Callable, *args) -> None:
        if when < self.now:
            when = self.now
        if self._tie_rng is None:
            tie = next(self._seq)
        else:
            tie = (self._tie_rng.random(), next(self._seq))
        heapq.heappush(self._queue, (when, tie, callback, args))

    def call_later(self, delay: int, callback: Callable, *args) -> None:
        self.call_at(self.now + delay, callback, *args)

    def stop(self) -> None:
        self._stopped = True

    @property
    def pending(self) -> int:
        return len(self._queue)

    def run(self, until: Optional[int] = None) -> None:
        queue = self._queue
        pop = heapq.heappop
        self._stopped = False
        while queue and not self._stopped:
            if until is not None and queue[0][0] > until:
                break
            when, _, callback, args = pop(queue)
            self.now = when
            self.events_run += 1
            callback(*args)
        if until is not None and not self._stopped and self.now < until:
            self.now = until
