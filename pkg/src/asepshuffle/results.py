"""Result records shared by the coupling, observables and harness layers."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional


@dataclass
class HittingSample:
    value: float
    censored: bool
    seed: int
    p: float
    N: Optional[int] = None
    k: Optional[int] = None
    cap: float = float("inf")

    def __post_init__(self):
        if self.value > self.cap:
            raise ValueError("hitting sample exceeds its cap")
        if self.censored and self.value != self.cap:
            raise ValueError("censored samples sit at the cap")


@dataclass
class CoalescenceRecord:
    seed: int
    N: int
    p: float
    coalesce_time: float
    per_k_times: list
    censored: bool
    valid: bool = True
    meet_time: Optional[float] = None
    per_k_meet: list = field(default_factory=list)

    def __post_init__(self):
        if self.per_k_times and not self.censored:
            if self.coalesce_time != max(self.per_k_times):
                raise ValueError("coalesce_time must be the largest per-k time")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DriftEstimate:
    t: float
    reps: int
    mean_over_t: float
    var_over_t: float
    se_mean: float
    se_var: float
    invalid: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError("need at least two replicas")


@dataclass
class TailFit:
    thresholds: list
    survival: list
    model: str
    slope: float
    intercept: float
    r2: float
    lower_ci: list = field(default_factory=list)
    upper_ci: list = field(default_factory=list)
    n: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        """Fitted per-unit decay factor for the geometric model."""
        import math

        return math.exp(self.slope)


@dataclass
class EventProbReport:
    C: float
    N: int
    p: float
    reps: int
    p_A1c: float
    p_A2c: float
    p_A3c_given: float
    p_At1c: float
    p_hit: float
    implied_bound: float
    sigma: float
    ci: dict
    ci_method: str = "wilson"
    n_given: int = 0
    invalid: int = 0
    warnings: list = field(default_factory=list)

    @property
    def chain_holds(self) -> bool:
        return self.p_hit >= self.implied_bound - 3 * self.sigma
