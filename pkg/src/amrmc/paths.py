"""Reproducible Brownian and geometric Brownian paths at exercise dates.

Every random stream is keyed by ``(base_seed, labels)``. The key is obtained
by hashing those integers with :class:`numpy.random.SeedSequence` and feeding
the result to the counter-based Philox4x64-10 generator. Path row ``i`` of a
batch over ``m`` dates consumes positions ``[i*m, (i+1)*m)`` of that keyed
stream, so any row (or block of rows) can be regenerated on its own and the
batch is identical however it is split into chunks.

Uniforms are formed from the top 53 bits of each 64-bit output, shifted by
half a unit so they lie strictly inside (0, 1); normals are obtained from them
by the inverse normal CDF (:func:`scipy.special.ndtri`).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

GENERATOR_METHOD = "philox4x64-10/seedsequence-key/ndtri"

_MASK64 = (1 << 64) - 1
_BLOCK = 4  # 64-bit outputs per Philox counter increment


class ProcessKind(str, enum.Enum):
    BROWNIAN = "brownian"
    GEOMETRIC = "geometric"

    @classmethod
    def parse(cls, value: "str | ProcessKind") -> "ProcessKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "brownian": cls.BROWNIAN,
            "standard_brownian": cls.BROWNIAN,
            "normal": cls.BROWNIAN,
            "geometric": cls.GEOMETRIC,
            "drift_adjusted_geometric_brownian": cls.GEOMETRIC,
            "lognormal": cls.GEOMETRIC,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown process kind {value!r}") from None

    @property
    def origin(self) -> float:
        """S(0): 0 for Brownian motion, 1 for exp(W(t) - t/2)."""
        return 0.0 if self is ProcessKind.BROWNIAN else 1.0


@dataclass(frozen=True)
class ExerciseGrid:
    """Exercise dates t_1 < ... < t_m (t_0 = 0 is implicit) and S(0).

    ``t0_state`` defaults to the process origin; a grid carrying a different
    value is rejected by :func:`sample_paths`.
    """

    times: tuple[float, ...]
    t0_state: float | None = None

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if len(times) < 1:
            raise ValueError("an exercise grid needs at least one date")
        if not all(math.isfinite(t) for t in times):
            raise ValueError("exercise dates must be finite")
        if times[0] <= 0.0:
            raise ValueError("exercise dates must be strictly positive")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("exercise dates must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.times)

    def initial_state(self, process: ProcessKind) -> float:
        if self.t0_state is None:
            return process.origin
        if float(self.t0_state) != process.origin:
            raise ValueError(
                f"{process.value} paths start at S(0) = {process.origin}, "
                f"grid specifies {self.t0_state}"
            )
        return float(self.t0_state)

    def prefix(self, n: int) -> "ExerciseGrid":
        """The grid truncated to its first ``n`` dates."""
        return ExerciseGrid(self.times[:n], self.t0_state)

    def max_ratio(self) -> float:
        """max t_{n+1}/t_n over consecutive dates (1 for a single date)."""
        t = self.times
        return max((b / a for a, b in zip(t, t[1:])), default=1.0)


@dataclass(frozen=True)
class SeedCoordinates:
    base_seed: int
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        base = int(self.base_seed)
        if not 0 <= base <= _MASK64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        labels = tuple(int(x) for x in self.labels)
        if any(x < 0 for x in labels):
            raise ValueError("seed labels must be nonnegative integers")
        object.__setattr__(self, "base_seed", base)
        object.__setattr__(self, "labels", labels)

    def child(self, *labels: int) -> "SeedCoordinates":
        return SeedCoordinates(self.base_seed, self.labels + tuple(labels))

    def to_dict(self) -> dict:
        return {"base_seed": self.base_seed, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedCoordinates":
        return cls(int(d["base_seed"]), tuple(d.get("labels", ())))


class Stream:
    """A keyed, random-access pseudo-random stream.

    Output at position ``p`` depends only on the key and ``p``.
    """

    def __init__(self, key: np.ndarray):
        self.key = np.asarray(key, dtype=np.uint64)

    def raw(self, start: int, count: int) -> np.ndarray:
        if start < 0 or count < 0:
            raise ValueError("stream positions must be nonnegative")
        if count == 0:
            return np.empty(0, dtype=np.uint64)
        block, skip = divmod(start, _BLOCK)
        gen = np.random.Philox(key=self.key, counter=block)
        return gen.random_raw(skip + count)[skip:]

    def uniforms(self, start: int, count: int) -> np.ndarray:
        bits = self.raw(start, count) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, start: int, count: int) -> np.ndarray:
        return ndtri(self.uniforms(start, count))


def derive_stream(base_seed: int, labels: Sequence[int] = ()) -> Stream:
    """Stream keyed by a hash of ``(base_seed, labels)``."""
    coords = SeedCoordinates(base_seed, tuple(labels))
    seq = np.random.SeedSequence(coords.base_seed, spawn_key=coords.labels)
    return Stream(seq.generate_state(2, dtype=np.uint64))


@dataclass(frozen=True, eq=False)
class PathBatch:
    process: ProcessKind
    grid: ExerciseGrid
    states: np.ndarray
    seed: SeedCoordinates
    method: str = field(default=GENERATOR_METHOD)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def metadata(self) -> dict:
        return {
            "process": self.process.value,
            "times": list(self.grid.times),
            "n_paths": self.n_paths,
            "seed": self.seed.to_dict(),
            "generator": self.method,
        }


def _rows(process, times, s0, stream, lo, hi):
    m = len(times)
    z = stream.normals(lo * m, (hi - lo) * m).reshape(hi - lo, m)
    dt = np.diff(np.concatenate(([0.0], times)))
    w = np.cumsum(z * np.sqrt(dt), axis=1)
    if process is ProcessKind.BROWNIAN:
        return w + s0
    return np.exp(w - 0.5 * np.asarray(times))


def sample_paths(
    process: "ProcessKind | str",
    grid: ExerciseGrid,
    n_paths: int,
    seed: SeedCoordinates,
    *,
    chunks: int = 1,
    workers: int | None = None,
) -> PathBatch:
    """Simulate ``n_paths`` independent rows of S(t_1), ..., S(t_m).

    Parameters
    ----------
    process : ProcessKind or str
        Standard Brownian motion, or S(t) = exp(W(t) - t/2).
    grid : ExerciseGrid
    n_paths : int
        Number of rows; zero gives an empty batch.
    seed : SeedCoordinates
        Keys the stream; rows are addressed by their index inside it.
    chunks, workers : int
        Split the rows into ``chunks`` contiguous blocks, optionally built on
        a thread pool. The result does not depend on either value.
    """
    process = ProcessKind.parse(process)
    if not isinstance(grid, ExerciseGrid):
        grid = ExerciseGrid(tuple(grid))
    n_paths = int(n_paths)
    if n_paths < 0:
        raise ValueError("n_paths must be nonnegative")
    s0 = grid.initial_state(process)
    times = np.asarray(grid.times)
    stream = derive_stream(seed.base_seed, seed.labels)

    chunks = max(1, min(int(chunks), max(n_paths, 1)))
    edges = np.linspace(0, n_paths, chunks + 1).astype(int)
    spans = list(zip(edges[:-1], edges[1:]))
    if workers and workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _rows(process, times, s0, stream, *s), spans))
    else:
        parts = [_rows(process, times, s0, stream, lo, hi) for lo, hi in spans]
    states = np.concatenate(parts, axis=0) if parts else np.empty((0, grid.m))
    states.setflags(write=False)
    return PathBatch(process, grid, states, seed)
