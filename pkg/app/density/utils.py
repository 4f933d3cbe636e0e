import typing as t
import asyncio
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .exceptions import DataError

T = t.TypeVar('T')
R = t.TypeVar('R')


async def _gather_jobs(loop, executor, func: t.Callable[[T], R], jobs: t.Sequence[T]) -> t.List[R]:
    tasks = [loop.run_in_executor(executor, func, job) for job in jobs]
    return list(await asyncio.gather(*tasks))


def run_in_threads(func: t.Callable[[T], R], jobs: t.Sequence[T], workers: int = 1) -> t.List[R]:
    """Runs `func` over `jobs` on at most `workers` threads, results in submission order"""
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]

    loop = asyncio.new_event_loop()  # Creating async loop
    try:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return loop.run_until_complete(_gather_jobs(loop, executor, func, jobs))
    finally:
        loop.close()


def split_rows(array: np.ndarray, parts: int) -> t.List[np.ndarray]:
    parts = max(1, min(parts, len(array)))
    return [chunk for chunk in np.array_split(array, parts) if len(chunk)]


def as_box(domain_box: t.Any) -> np.ndarray:
    """Returns the box as an (n, 2) float array

    Raises
    ------
    DataError
        If the box is malformed or degenerate (lo >= hi in some dimension)
    """
    box = np.atleast_2d(np.asarray(domain_box, dtype=float))
    if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] < 1:
        raise DataError(f'Domain box must be a list of [lo, hi] pairs, got shape {box.shape}')
    if not np.all(np.isfinite(box)):
        raise DataError('Domain box must be finite')
    degenerate = np.flatnonzero(box[:, 0] >= box[:, 1])
    if degenerate.size:
        raise DataError(f'Degenerate domain box in dimension(s) {degenerate.tolist()}: lo must be < hi')
    return box


def as_points(x: t.Any, dim: int) -> t.Tuple[np.ndarray, bool]:
    """Returns `x` as a (B, dim) array and whether the input was a single point"""
    points = np.asarray(x, dtype=float)
    single = points.ndim <= 1
    points = points.reshape(-1, dim)
    return points, single


def box_volume(box: np.ndarray) -> float:
    return float(np.prod(box[:, 1] - box[:, 0]))
