"""Per-run measurements and their aggregates."""
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from scipy.stats import spearmanr

from .config import ScenarioConfig


@dataclass
class MetricsRecord:
    scenario: str
    config: Optional[ScenarioConfig] = None
    runs: List[Dict[str, float]] = field(default_factory=list)
    # runs that did not complete (for example a failed migration), excluded from runs
    failures: List[str] = field(default_factory=list)

    def add(self, values: Dict[str, float]) -> None:
        self.runs.append(dict(values))

    def fail(self, reason: str) -> None:
        self.failures.append(reason)

    @property
    def attempted(self) -> int:
        return len(self.runs) + len(self.failures)

    def metrics(self) -> List[str]:
        names: List[str] = []
        for run in self.runs:
            for k in run:
                if k not in names:
                    names.append(k)
        return names

    def values(self, metric: str) -> List[float]:
        return [run[metric] for run in self.runs if metric in run]

    def median(self, metric: str) -> float:
        return statistics.median(self.values(metric))

    def stdev(self, metric: str) -> float:
        vals = self.values(metric)
        return statistics.stdev(vals) if len(vals) > 1 else 0.0


def relative_difference(candidate: float, baseline: float) -> float:
    """(candidate - baseline) / baseline; negative means candidate is smaller."""
    return (candidate - baseline) / baseline


def crossings(times: List[float], a: List[float], b: List[float]) -> List[float]:
    """Times at which the sign of ``a - b`` changes, ignoring ties at zero."""
    out = []
    prev = 0
    for t, x, y in zip(times, a, b):
        sign = (x > y) - (x < y)
        if sign == 0:
            continue
        if prev and sign != prev:
            out.append(t)
        prev = sign
    return out


def spearman(xs: List[float], ys: List[float]) -> float:
    return float(spearmanr(xs, ys)[0])
