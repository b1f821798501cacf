import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from flowconn import logger, settings
from flowconn.exceptions import EstimatorError


@dataclass(frozen=True)
class Moments:
    """Running count, mean and sum of squared deviations of a sample of arrays."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "Moments":
        samples = np.asarray(samples, dtype=float)
        if len(samples) == 0:
            raise EstimatorError("Cannot summarize an empty sample")
        mean = samples.mean(axis=0)
        return cls(len(samples), mean, np.sum((samples - mean) ** 2, axis=0))

    def merge(self, other: "Moments") -> "Moments":
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / count)
        return Moments(count, mean, m2)

    @property
    def std_error(self) -> np.ndarray:
        if self.count < 2:
            logger.warning("Standard error needs at least two samples; reporting 0")
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def pairwise_merge(parts: list[Moments]) -> Moments:
    """Merge in a fixed balanced tree so the rounding never depends on scheduling."""
    if not parts:
        raise EstimatorError("Nothing to merge")
    while len(parts) > 1:
        merged = [parts[k].merge(parts[k + 1]) for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def path_chunks(paths: int, first: int = 0, chunk: int | None = None) -> list[range]:
    """
    Split path indices first..first+paths-1 into fixed-size blocks. Block
    boundaries depend only on the path count and the chunk size.
    """
    chunk = settings.chunk_paths if chunk is None else chunk
    if paths < 1 or chunk < 1:
        raise EstimatorError(f"Need a positive path count and chunk size, got {paths}, {chunk}")
    return [range(start, min(start + chunk, first + paths)) for start in range(first, first + paths, chunk)]


def worker_count() -> int:
    return settings.threads or os.cpu_count() or 1


def run_chunks(task: Callable[[range], Moments], chunks: list[range]) -> Moments:
    """
    Evaluate `task` on every chunk in a thread pool and merge the results in
    chunk order.
    """
    workers = min(worker_count(), len(chunks))
    logger.info(f"Running {len(chunks)} chunks ({sum(map(len, chunks))} paths) on {workers} threads")
    if workers <= 1:
        parts = [task(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, chunks))
    return pairwise_merge(parts)
