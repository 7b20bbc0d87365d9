import csv
import importlib.resources as ILR
import math
from dataclasses import dataclass
from io import StringIO
from typing import List

from pydantic import BaseModel, TypeAdapter

from .errors import ParameterError
from .utils import round_half_up

MASK64 = 0xFFFFFFFFFFFFFFFF
SPLITMIX64_GAMMA = 0x9E3779B97F4A7C15

BASE_EPOCHS = 7


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + SPLITMIX64_GAMMA) & MASK64
        z = self.state
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) & MASK64
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) & MASK64
        z ^= z >> 31
        return z

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound), rejection-sampled to avoid modulo bias."""
        if bound <= 0:
            raise ParameterError(f"SplitMix64: Invalid bound ({bound})")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % bound

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def shuffled_range(n: int, seed: int) -> List[int]:
    """Fisher-Yates shuffle of [0, n) driven by SplitMix64."""
    rng = SplitMix64(seed)
    values = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next_below(i + 1)
        values[i], values[j] = values[j], values[i]
    return values


class EpochScheduleRow(BaseModel):
    fraction: float
    epochs: int


def __load_epoch_schedule() -> List[EpochScheduleRow]:
    schedule_csv_text = (ILR.files("geofuse") / "epoch_schedule.csv").read_text()
    reader = csv.DictReader(StringIO(schedule_csv_text))

    records = list(reader)
    return TypeAdapter(List[EpochScheduleRow]).validate_python(records)


epoch_table = __load_epoch_schedule()


def epoch_schedule(fraction: float) -> int:
    if not (fraction > 0 and fraction <= 1):
        raise ParameterError(f"Epochs: Invalid fraction ({fraction}). Use (0, 1].")

    for row in epoch_table:
        if math.isclose(row.fraction, fraction, rel_tol=0, abs_tol=1e-12):
            return row.epochs

    return max(BASE_EPOCHS, round_half_up(BASE_EPOCHS / fraction))


@dataclass(frozen=True)
class SubsetPlan:
    n: int
    fraction: float
    seed: int
    indices: List[int]
    epochs: int


def subset_size(n: int, fraction: float) -> int:
    return max(1, round_half_up(fraction * n))


def subset_sample(n: int, fraction: float, seed: int) -> SubsetPlan:
    if n < 1:
        raise ParameterError(f"Subset: Invalid sample count ({n})")
    if not (fraction > 0 and fraction <= 1):
        raise ParameterError(f"Subset: Invalid fraction ({fraction}). Use (0, 1].")
    if seed < 0 or seed > MASK64:
        raise ParameterError(f"Subset: Seed must be an unsigned 64-bit value ({seed})")

    k = subset_size(n, fraction)
    indices = sorted(shuffled_range(n, seed)[:k])
    return SubsetPlan(
        n=n,
        fraction=fraction,
        seed=seed,
        indices=indices,
        epochs=epoch_schedule(fraction),
    )


def write_subset_plan(plan: SubsetPlan) -> str:
    sio = StringIO()
    sio.write(f"# n={plan.n} fraction={plan.fraction!r} seed={plan.seed}\n")
    sio.write("index\n")
    for index in plan.indices:
        sio.write(f"{index}\n")
    return sio.getvalue()
