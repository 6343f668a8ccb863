import dataclasses
import math
from typing import Optional, Sequence

from cine_selftrain.errors import InsufficientData


@dataclasses.dataclass(frozen=True)
class MeanStd:
    """Population mean and standard deviation of a sample."""

    mean: float
    std: float
    count: int

    def format(self, precision: int = 3) -> str:
        return f"{self.mean:.{precision}f} ({self.std:.{precision}f})"


def population_mean_std(
    values: Sequence[float], minimum: int = 1, what: str = 'values'
) -> MeanStd:
    """Mean and population (N-denominator) standard deviation.

    Sums are correctly rounded (:func:`math.fsum`) and a constant sample
    yields exactly its value and a zero deviation, so the result does not
    depend on the order of `values`.

    :raises InsufficientData: If fewer than `minimum` values are given.
    """
    values = [float(v) for v in values]
    if len(values) < minimum:
        raise InsufficientData(
            f"Need at least {minimum} {what}, got {len(values)}"
        )
    n = len(values)
    if min(values) == max(values):
        return MeanStd(values[0], 0.0, n)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    return MeanStd(mean, std, n)


def mean_std_of_defined(values: Sequence[Optional[float]]) -> Optional[MeanStd]:
    """:func:`population_mean_std` over the non-``None`` values, if any."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return population_mean_std(defined)
