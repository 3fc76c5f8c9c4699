"""Small record type shared by every pass/fail report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


@dataclass
class CheckResult:
    """Outcome of one numerical check.

    ``margin`` is positive when the check passes with room to spare (how it is
    measured is up to the check; it is documented in ``details``).
    """

    name: str
    passed: bool
    margin: float = math.nan
    tolerance: float = math.nan
    samples: int = 0
    details: dict = field(default_factory=dict)
    applicable: bool = True

    @property
    def status(self):
        if not self.applicable:
            return "not-applicable"
        return "pass" if self.passed else "fail"

    def to_json(self):
        out = asdict(self)
        out["status"] = self.status
        for key in ("margin", "tolerance"):
            if isinstance(out[key], float) and not math.isfinite(out[key]):
                out[key] = None
        return out

    def line(self):
        return f"[{self.status.upper():>4}] {self.name}: margin={self.margin:.3e} tol={self.tolerance:.1e}"
