import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, TypeVar

from pydantic import PositiveInt, TypeAdapter, ValidationError

from .errors import ParameterError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "GEOFUSE_THREADS"

_positive_int = TypeAdapter(PositiveInt)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return min(8, os.cpu_count() or 1)

    try:
        return _positive_int.validate_python(int(raw))
    except (ValueError, ValidationError):
        raise ParameterError(
            f"{THREADS_ENV}: Invalid thread count ({raw!r}). Use a positive integer."
        ) from None


def map_ordered(func: Callable[[T], R], items: Sequence[T]) -> List[R]:
    """Apply `func` to every item, possibly concurrently; results keep input order."""
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [func(item) for item in items]

    logger.debug("map_ordered: %d items on %d threads", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


def row_bands(height: int, bands: int) -> List[Tuple[int, int]]:
    bands = max(1, min(bands, height))
    step = -(-height // bands)
    return [(start, min(start + step, height)) for start in range(0, height, step)]
