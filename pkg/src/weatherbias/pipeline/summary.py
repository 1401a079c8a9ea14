"""Bias gap, mitigation ratios and bound checks computed from stage reports.

All quantities are in mAP percentage points. Everything here is a pure
function of the stored reports, so the summary can be recomputed from the
files in a run directory and must match the stored one exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from ..evaluation import EvalReport
from .config import Bounds

UNBOUNDED = "unbounded"
UNAVAILABLE = "unavailable"


def bias_gap(clean_map: float, target_map: float) -> float:
    """mAP lost when a clean-trained model meets the adverse condition."""
    return clean_map - target_map


def mitigation_ratio(technique_map: float, baseline_map: float):
    """``technique / baseline``, or ``"unbounded"`` when the baseline is 0."""
    if baseline_map > 0:
        return technique_map / baseline_map
    return UNBOUNDED


def mean_ratio(ratios):
    """Mean of the available ratios; unbounded if any of them is."""
    vals = [r for r in ratios if r != UNAVAILABLE]
    if not vals:
        return UNAVAILABLE
    if any(r == UNBOUNDED for r in vals):
        return UNBOUNDED
    return math.fsum(vals) / len(vals)


def class_deltas(after: EvalReport, before: EvalReport) -> list[float]:
    return [a - b for a, b in zip(after.ap_percent, before.ap_percent)]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class BiasSummary:
    maps: dict[str, float]
    bias_gap: dict[str, object]
    ratios: dict[str, object]
    deltas: dict[str, list[float]]
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "maps": self.maps,
            "bias_gap": self.bias_gap,
            "ratios": self.ratios,
            "deltas": self.deltas,
            "checks": [asdict(c) for c in self.checks],
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def summarize(reports: Mapping[str, EvalReport], bounds: Bounds = Bounds(),
              hygiene_problems: list[str] | None = None) -> BiasSummary:
    """Build the summary from reports keyed by stage id.

    ``hygiene_problems`` is the list of split violations found by the
    pipeline (``None`` when technique 2 did not run).
    """
    maps = {k: r.map_percent for k, r in sorted(reports.items())}
    s1, s2 = reports.get("stage1"), reports.get("stage2")
    b1, b2 = reports.get("stage4.clean"), reports.get("stage4.target")

    gaps = {
        "a": bias_gap(s1.map_percent, s2.map_percent) if s1 and s2 else UNAVAILABLE,
        "b": bias_gap(b1.map_percent, b2.map_percent) if b1 and b2 else UNAVAILABLE,
    }
    ratios = {}
    for tech in ("tech1", "tech2", "stage3"):
        r = reports.get(tech)
        ratios[tech] = mitigation_ratio(r.map_percent, s2.map_percent) if r and s2 else UNAVAILABLE
    ratios["mean"] = mean_ratio([ratios["tech1"], ratios["tech2"]])

    deltas = {}
    if s1 and s2:
        deltas["stage2-stage1"] = class_deltas(s2, s1)
    if b1 and b2:
        deltas["stage4.target-stage4.clean"] = class_deltas(b2, b1)
    if b2 and "stage4.mix" in reports:
        deltas["stage4.mix-stage4.target"] = class_deltas(reports["stage4.mix"], b2)
    for k in ("stage3", "tech1", "tech2"):
        if k in reports and s2:
            deltas[f"{k}-stage2"] = class_deltas(reports[k], s2)

    checks = []
    if s1:
        checks.append(Check("stage1_min_map", s1.map_percent >= bounds.stage1_min_map,
                            f"stage1 {s1.map_percent:.2f} >= {bounds.stage1_min_map:g}"))
    f = bounds.stage2_max_fraction
    if s1 and s2:
        checks.append(Check("stage2_fraction_a", s2.map_percent <= f * s1.map_percent,
                            f"stage2 {s2.map_percent:.2f} <= {f:g} x {s1.map_percent:.2f}"))
    if b1 and b2:
        checks.append(Check("stage2_fraction_b", b2.map_percent <= f * b1.map_percent,
                            f"B target {b2.map_percent:.2f} <= {f:g} x {b1.map_percent:.2f}"))
    if s2 and "stage3" in reports:
        m = reports["stage3"].map_percent
        checks.append(Check("stage3_not_worse", m >= s2.map_percent, f"stage3 {m:.2f} >= {s2.map_percent:.2f}"))
    if s2 and "tech1" in reports:
        m = reports["tech1"].map_percent
        checks.append(Check("tech1_improves", m > s2.map_percent, f"tech1 {m:.2f} > {s2.map_percent:.2f}"))
    if s2 and "tech2" in reports:
        m, k = reports["tech2"].map_percent, bounds.tech2_min_ratio
        checks.append(Check("tech2_ratio", m >= k * s2.map_percent,
                            f"tech2 {m:.2f} >= {k:g} x {s2.map_percent:.2f}"))
    if hygiene_problems is not None:
        checks.append(Check("split_hygiene", not hygiene_problems,
                            "; ".join(hygiene_problems) or "no image crosses the train/test boundary; "
                            "technique-2 training read only its own training images"))
    return BiasSummary(maps, gaps, ratios, deltas, checks)
