"""Quality scores and cost accounting for a validated run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Mapping, Optional

from .extraction.core import TokenUsage
from .validation import RULE_IDS, ValidationReport

_MILLION = Decimal(1_000_000)


def _check_counts(part: int, whole: int, what: str) -> None:
    if part < 0 or whole < 0:
        raise ValueError(f"{what}: counts must be non-negative")
    if part > whole:
        raise ValueError(f"{what}: {part} exceeds {whole}")


def _pct(part: int, whole: int) -> float:
    # exact ratio, one rounding step
    return 0.0 if whole == 0 else float(Fraction(part, whole) * 100)


def semantic_accuracy(correct: int, total: int) -> float:
    _check_counts(correct, total, "semantic_accuracy")
    return _pct(correct, total)


def schema_compliance(per_rule_pass: Mapping[str, tuple[int, int]]) -> float:
    """Unweighted mean of the six rule pass rates; an empty rule scores 100."""
    missing = [r for r in RULE_IDS if r not in per_rule_pass]
    if missing:
        raise KeyError(f"schema_compliance: missing rules {missing}")
    scores = []
    for rule in RULE_IDS:
        passed, total = per_rule_pass[rule]
        _check_counts(passed, total, rule)
        scores.append(100.0 if total == 0 else _pct(passed, total))
    return sum(scores) / len(scores)


def relationship_retention(validated: int, extracted: int) -> float:
    _check_counts(validated, extracted, "relationship_retention")
    return _pct(validated, extracted)


def entity_retention(validated: int, extracted: int) -> float:
    _check_counts(validated, extracted, "entity_retention")
    return _pct(validated, extracted)


def cost_waste_ratio(filtered: int, extracted: int) -> float:
    """Share of extracted entities that validation removed.

    Taken as the complement of entity retention so the two sum to exactly
    100.0 in floating point as well.
    """
    _check_counts(filtered, extracted, "cost_waste_ratio")
    if extracted == 0:
        return 0.0
    return 100.0 - entity_retention(extracted - filtered, extracted)


@dataclass(frozen=True)
class ModelPrice:
    input_per_mtok: Decimal
    output_per_mtok: Decimal


@dataclass(frozen=True)
class PriceTable:
    version: str
    models: Mapping[str, ModelPrice]

    def price(self, model_name: str) -> ModelPrice:
        try:
            return self.models[model_name]
        except KeyError:
            raise KeyError(f"no price for model {model_name!r} in table {self.version}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "PriceTable":
        return cls(
            version=str(d.get("version", "unversioned")),
            models={
                name: ModelPrice(Decimal(str(p["input_per_mtok"])), Decimal(str(p["output_per_mtok"])))
                for name, p in (d.get("models") or {}).items()
            },
        )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "models": {
                k: {"input_per_mtok": str(v.input_per_mtok), "output_per_mtok": str(v.output_per_mtok)}
                for k, v in sorted(self.models.items())
            },
        }


EMPTY_PRICES = PriceTable("none", {})


@dataclass
class CostLedger:
    model_name: str = ""
    price_table: PriceTable = EMPTY_PRICES
    stage2_tokens: TokenUsage = field(default_factory=TokenUsage)
    stage3_tokens: TokenUsage = field(default_factory=TokenUsage)

    def _cost(self, usage: TokenUsage) -> Decimal:
        if not self.price_table.models:
            return Decimal(0)
        p = self.price_table.price(self.model_name)
        return (usage.input * p.input_per_mtok + usage.output * p.output_per_mtok) / _MILLION

    @property
    def stage2_cost(self) -> Decimal:
        return self._cost(self.stage2_tokens)

    @property
    def stage3_cost(self) -> Decimal:
        return self._cost(self.stage3_tokens)

    @property
    def total_cost(self) -> Decimal:
        return self.stage2_cost + self.stage3_cost

    def add_stage2(self, usage: TokenUsage) -> None:
        self.stage2_tokens = self.stage2_tokens + usage

    def add_stage3(self, usage: TokenUsage) -> None:
        self.stage3_tokens = self.stage3_tokens + usage

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "price_table": self.price_table.to_dict(),
            "stage2_tokens": self.stage2_tokens.to_dict(),
            "stage3_tokens": self.stage3_tokens.to_dict(),
            "stage2_cost_usd": str(self.stage2_cost),
            "stage3_cost_usd": str(self.stage3_cost),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostLedger":
        return cls(
            model_name=d.get("model_name", ""),
            price_table=PriceTable.from_dict(d.get("price_table") or {}),
            stage2_tokens=TokenUsage.from_dict(d.get("stage2_tokens")),
            stage3_tokens=TokenUsage.from_dict(d.get("stage3_tokens")),
        )


def cost_per_entity(ledger: CostLedger, validated_entities: int) -> float:
    """Total spend per validated entity; ``inf`` when nothing validated."""
    if validated_entities < 0:
        raise ValueError("validated_entities must be non-negative")
    if validated_entities == 0:
        return math.inf
    return float(ledger.total_cost / validated_entities)


@dataclass
class QualityMetrics:
    semantic_accuracy: float
    schema_compliance: float
    relationship_retention: float
    cost_per_entity: float
    cost_waste_ratio: float
    flags: list[str] = field(default_factory=list)


def compute_metrics(report: ValidationReport, ledger: Optional[CostLedger] = None) -> QualityMetrics:
    ledger = ledger or CostLedger()
    e_in, r_in = report.input_counts
    e_out, r_out = report.output_counts
    flags = []
    if e_in == 0:
        flags.append("semantic_accuracy: no entities (degenerate)")
        flags.append("cost_waste_ratio: no entities (degenerate)")
    if r_in == 0:
        flags.append("relationship_retention: no relationships (degenerate)")
    if e_out == 0:
        flags.append("cost_per_entity: no validated entities (infinite)")
    vacuous = [r for r in RULE_IDS if report.per_rule_pass.get(r, (0, 0))[1] == 0]
    if vacuous:
        flags.append("schema_compliance: vacuous rules counted as 100: " + ", ".join(vacuous))
    per_rule = {r: report.per_rule_pass.get(r, (0, 0)) for r in RULE_IDS}
    return QualityMetrics(
        semantic_accuracy=semantic_accuracy(report.semantically_correct, e_in),
        schema_compliance=schema_compliance(per_rule),
        relationship_retention=relationship_retention(r_out, r_in),
        cost_per_entity=cost_per_entity(ledger, e_out),
        cost_waste_ratio=cost_waste_ratio(e_in - e_out, e_in),
        flags=flags,
    )


def round_half_up(value: float, places: int = 1) -> str:
    if math.isinf(value):
        return "inf"
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def metrics_summary(metrics: QualityMetrics, ledger: CostLedger, report: ValidationReport) -> dict:
    """Reported view: percentages to one decimal, half-up; costs to 4 decimals."""
    return {
        "semantic_accuracy_pct": round_half_up(metrics.semantic_accuracy),
        "schema_compliance_pct": round_half_up(metrics.schema_compliance),
        "relationship_retention_pct": round_half_up(metrics.relationship_retention),
        "cost_per_entity_usd": round_half_up(metrics.cost_per_entity, 4),
        "cost_waste_ratio_pct": round_half_up(metrics.cost_waste_ratio),
        "entities": {"extracted": report.input_counts[0], "validated": report.output_counts[0]},
        "relationships": {"extracted": report.input_counts[1], "validated": report.output_counts[1]},
        "per_rule_pass": {r: list(report.per_rule_pass.get(r, (0, 0))) for r in RULE_IDS},
        "cost": {
            "price_table_version": ledger.price_table.version,
            "model_name": ledger.model_name,
            "stage2_usd": str(ledger.stage2_cost),
            "stage3_usd": str(ledger.stage3_cost),
            "total_usd": str(ledger.total_cost),
        },
        "flags": list(metrics.flags),
    }
