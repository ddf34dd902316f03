"""FIFO key dictionary with iteration-age metadata, age-based sampling
strategies, and the EMA parameter update.

Keys live in a preallocated ring; entries carry the training iteration
that produced them, since key age is measured in encoder updates, not
wall clock. Stored keys are plain numbers: nothing ever backpropagates
into a dictionary.
"""

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

__all__ = ["QueueDictionary", "MomentumConfig", "momentum_update", "SAMPLING_STRATEGIES"]

SAMPLING_STRATEGIES = ("earliest", "random", "newest")

_HEADER = struct.Struct("<4q")  # capacity, length, dim, last iteration


class QueueDictionary:
    """Fixed-capacity FIFO queue of d-dimensional keys.

    Pushing past capacity evicts the oldest entries; iteration tags must
    be non-decreasing across pushes.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError(f"capacity and dim must be positive, got {capacity}, {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._keys = np.zeros((self.capacity, self.dim))
        self._tags = np.zeros(self.capacity, dtype=np.int64)
        self._start = 0
        self._length = 0
        self.last_iteration = 0

    def __len__(self) -> int:
        return self._length

    @property
    def is_full(self) -> bool:
        return self._length == self.capacity

    def _order(self) -> np.ndarray:
        """Physical indices oldest to newest."""
        return (self._start + np.arange(self._length)) % self.capacity

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """(keys, tags) copies in insertion order, oldest first."""
        order = self._order()
        return self._keys[order].copy(), self._tags[order].copy()

    def push(self, keys: np.ndarray, iteration: int) -> None:
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if keys.shape[1] != self.dim:
            raise ValueError(f"key dimension {keys.shape[1]} does not match dictionary dim {self.dim}")
        if not np.all(np.isfinite(keys)):
            raise ValueError("keys must be finite")
        iteration = int(iteration)
        if self._length and iteration < self.last_iteration:
            raise ValueError(
                f"iteration tags must be non-decreasing: {iteration} < {self.last_iteration}"
            )
        if keys.shape[0] > self.capacity:
            # oversized batch: only its newest `capacity` keys survive anyway
            keys = keys[-self.capacity :]
        n = keys.shape[0]
        write = (self._start + self._length + np.arange(n)) % self.capacity
        self._keys[write] = keys
        self._tags[write] = iteration
        overflow = self._length + n - self.capacity
        if overflow > 0:
            self._start = (self._start + overflow) % self.capacity
            self._length = self.capacity
        else:
            self._length += n
        self.last_iteration = iteration

    def sample(self, strategy: str, count: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw `count` keys by age: the oldest, a uniform subset without
        replacement, or the most recent. Never mutates the queue."""
        if strategy not in SAMPLING_STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}, expected one of {SAMPLING_STRATEGIES}")
        if not 0 <= count <= self._length:
            raise ValueError(f"cannot sample {count} keys from a dictionary of length {self._length}")
        order = self._order()
        if strategy == "earliest":
            chosen = order[:count]
        elif strategy == "newest":
            chosen = order[self._length - count :]
        else:
            if rng is None:
                raise ValueError("random sampling needs an rng")
            chosen = order[rng.choice(self._length, size=count, replace=False)]
        return self._keys[chosen].copy()

    def to_bytes(self) -> bytes:
        keys, tags = self.snapshot()
        header = _HEADER.pack(self.capacity, self._length, self.dim, self.last_iteration)
        return header + keys.astype("<f8").tobytes() + tags.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "QueueDictionary":
        if len(data) < _HEADER.size:
            raise ValueError("buffer shorter than header")
        capacity, length, dim, last_iteration = _HEADER.unpack_from(data)
        expected = _HEADER.size + length * dim * 8 + length * 8
        if not (0 <= length <= capacity) or len(data) != expected:
            raise ValueError(f"malformed buffer: expected {expected} bytes, got {len(data)}")
        out = cls(capacity, dim)
        offset = _HEADER.size
        keys = np.frombuffer(data, dtype="<f8", count=length * dim, offset=offset).reshape(length, dim)
        offset += length * dim * 8
        tags = np.frombuffer(data, dtype="<i8", count=length, offset=offset)
        out._keys[:length] = keys
        out._tags[:length] = tags
        out._length = int(length)
        out.last_iteration = int(last_iteration)
        return out


@dataclass(frozen=True)
class MomentumConfig:
    """EMA coefficient m: target <- m * target + (1 - m) * online."""

    coefficient: float

    def __post_init__(self):
        if not 0.0 <= self.coefficient <= 1.0:
            raise ValueError(f"momentum coefficient must lie in [0, 1], got {self.coefficient}")


def momentum_update(online_params, target_params, m):
    """EMA-blend a parameter tree: target <- m * target + (1 - m) * online.

    Walks arrays, scalars, lists, tuples, dicts, and dataclasses; returns
    a new tree of the target's structure. m may be a float or a
    MomentumConfig.
    """
    coeff = m.coefficient if isinstance(m, MomentumConfig) else float(m)
    if not 0.0 <= coeff <= 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1], got {coeff}")
    return _blend(online_params, target_params, coeff)


def _blend(online, target, m: float):
    if isinstance(target, np.ndarray):
        online = np.asarray(online, dtype=np.float64)
        if online.shape != target.shape:
            raise ValueError(f"parameter shape mismatch: {online.shape} vs {target.shape}")
        return m * target + (1.0 - m) * online
    if isinstance(target, (float, int)) and not isinstance(target, bool):
        return m * float(target) + (1.0 - m) * float(online)
    if dataclasses.is_dataclass(target) and not isinstance(target, type):
        if type(online) is not type(target):
            raise ValueError(f"parameter tree mismatch: {type(online)} vs {type(target)}")
        fields = {
            f.name: _blend(getattr(online, f.name), getattr(target, f.name), m)
            for f in dataclasses.fields(target)
            if f.init
        }
        return dataclasses.replace(target, **fields)
    if isinstance(target, dict):
        if set(online) != set(target):
            raise ValueError("parameter tree keys differ")
        return {k: _blend(online[k], target[k], m) for k in target}
    if isinstance(target, (list, tuple)):
        if len(online) != len(target):
            raise ValueError(f"parameter tree lengths differ: {len(online)} vs {len(target)}")
        blended = [_blend(a, b, m) for a, b in zip(online, target)]
        return type(target)(blended) if isinstance(target, tuple) else blended
    raise TypeError(f"unsupported parameter leaf type {type(target)}")
