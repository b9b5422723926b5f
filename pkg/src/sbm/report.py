"""Pass/fail certificates shared by the solvers and the verification suite."""

import json
from dataclasses import asdict, dataclass, field

__all__ = ["CertificateReport"]


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of one check; ``passed`` is ``statistic <= threshold``."""

    name: str
    passed: bool
    statistic: float
    threshold: float
    seed: int = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("name", "passed", "statistic", "threshold", "seed", "details")})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)
