"""Synthetic subscriber dataset and the renewal scenarios drawn from it.

The packaged CSV mirrors a well-known churn table's shape: same 21 columns,
7043 rows, 1869 churners, 11 zero-tenure rows with a blank TotalCharges. The
values are generated, not copied, so the file can ship with the package; a
real export with the same columns drops in via ``load_scenarios(csv_path=...)``.

Scenario derivation is pure: a customer row maps to a fixed signal schedule
keyed off contract shape, and every derived identifier is a hash prefix.
The raw customerID never leaves this module.
"""

from __future__ import annotations

import csv
import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

COLUMNS = (
    "customerID",
    "gender",
    "SeniorCitizen",
    "Partner",
    "Dependents",
    "tenure",
    "PhoneService",
    "MultipleLines",
    "InternetService",
    "OnlineSecurity",
    "OnlineBackup",
    "DeviceProtection",
    "TechSupport",
    "StreamingTV",
    "StreamingMovies",
    "Contract",
    "PaperlessBilling",
    "PaymentMethod",
    "MonthlyCharges",
    "TotalCharges",
    "Churn",
)

ROW_COUNT = 7043
CHURN_COUNT = 1869
BLANK_TOTAL_COUNT = 11

DEFAULT_CSV_SEED = 20180709

_INTERNET = ("DSL", "Fiber optic", "No")
_CONTRACTS = ("Month-to-month", "One year", "Two year")
_PAYMENTS = ("Electronic check", "Mailed check", "Bank transfer (automatic)", "Credit card (automatic)")


def packaged_csv_path() -> Path:
    return Path(__file__).parent / "data" / "telco_churn_synthetic.csv"


def customer_hash(customer_id: str) -> int:
    """Stable integer for injection schedules. Not reversible in context and
    never traced; only its residues are used."""
    return int(hashlib.sha256(customer_id.encode("utf-8")).hexdigest(), 16)


def redacted_ref(customer_id: str) -> str:
    return "cust-" + hashlib.sha256(("ref:" + customer_id).encode("utf-8")).hexdigest()[:10]


def _addon(rnd: random.Random, internet: str, p_yes: float) -> str:
    if internet == "No":
        return "No internet service"
    return "Yes" if rnd.random() < p_yes else "No"


def write_synthetic_churn_csv(path: str | Path, rows: int = ROW_COUNT, seed: int = DEFAULT_CSV_SEED) -> Path:
    """Generate the fixture. Churn labels go to the ``rows * 1869 / 7043``
    highest-propensity customers so the label correlates with contract shape
    the way the original table does."""
    rnd = random.Random(seed)
    churn_target = round(rows * CHURN_COUNT / ROW_COUNT)
    blank_target = min(BLANK_TOTAL_COUNT, rows)
    blank_rows = set(rnd.sample(range(rows), blank_target))

    seen_ids: set[str] = set()
    records: list[dict[str, Any]] = []
    propensity: list[tuple[float, int]] = []
    for i in range(rows):
        while True:
            cid = f"{rnd.randint(0, 9999):04d}-{''.join(rnd.choices('ABCDEFGHIJKLMNOPQRSTUVWXYZ', k=5))}"
            if cid not in seen_ids:
                seen_ids.add(cid)
                break
        internet = rnd.choices(_INTERNET, weights=(34, 44, 22))[0]
        contract = rnd.choices(_CONTRACTS, weights=(55, 21, 24))[0]
        payment = rnd.choices(_PAYMENTS, weights=(34, 23, 22, 21))[0]
        tenure = 0 if i in blank_rows else rnd.randint(1, 72)
        phone = "Yes" if rnd.random() < 0.9 else "No"
        addons = [_addon(rnd, internet, p) for p in (0.29, 0.34, 0.34, 0.29, 0.38, 0.39)]
        monthly = 19.0 + rnd.uniform(0.0, 6.0)
        if phone == "No":
            monthly -= 5.0
        if internet == "DSL":
            monthly += 22.0 + rnd.uniform(0.0, 12.0)
        elif internet == "Fiber optic":
            monthly += 50.0 + rnd.uniform(0.0, 24.0)
        monthly += 5.0 * sum(1 for a in addons if a == "Yes")
        monthly = round(min(monthly, 118.75), 2)
        total = "" if tenure == 0 else str(round(monthly * tenure * rnd.uniform(0.92, 1.04), 2))
        record = {
            "customerID": cid,
            "gender": rnd.choice(("Male", "Female")),
            "SeniorCitizen": 1 if rnd.random() < 0.16 else 0,
            "Partner": rnd.choice(("Yes", "No")),
            "Dependents": "Yes" if rnd.random() < 0.3 else "No",
            "tenure": tenure,
            "PhoneService": phone,
            "MultipleLines": "No phone service" if phone == "No" else rnd.choice(("Yes", "No")),
            "InternetService": internet,
            "OnlineSecurity": addons[0],
            "OnlineBackup": addons[1],
            "DeviceProtection": addons[2],
            "TechSupport": addons[3],
            "StreamingTV": addons[4],
            "StreamingMovies": addons[5],
            "Contract": contract,
            "PaperlessBilling": "Yes" if rnd.random() < 0.59 else "No",
            "PaymentMethod": payment,
            "MonthlyCharges": f"{monthly:.2f}",
            "TotalCharges": total,
            "Churn": "No",
        }
        score = rnd.gauss(0.0, 1.0)
        if contract == "Month-to-month":
            score += 2.1
        elif contract == "One year":
            score += 0.4
        if internet == "Fiber optic":
            score += 0.9
        if tenure <= 6:
            score += 1.1
        elif tenure >= 48:
            score -= 0.8
        if payment == "Electronic check":
            score += 0.5
        if record["TechSupport"] == "No":
            score += 0.4
        propensity.append((score, i))
        records.append(record)

    for _, i in sorted(propensity, reverse=True)[:churn_target]:
        records[i]["Churn"] = "Yes"

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(records)
    return path


# ---------------------------------------------------------------------------
# Scenario derivation

# Day offsets are relative to contract end (day 90 of the window). The
# billing_change for paper-billed customers is delivered 15 days after it
# happened; that is the late-arrival path the event log has to survive.
USAGE_DROP_OFFSET = -70
SUPPORT_TICKET_OFFSET = -55
BILLING_CHANGE_OFFSET = -40
PLAN_FIT_OFFSET = -35
MERGER_OFFSET = -30
LATE_DELIVERY_OFFSET = -25

MERGER_MODULUS = 25

OMITTED_SIGNAL_KINDS = ("network_event", "product_status")


@dataclass(frozen=True)
class SignalSpec:
    kind: str
    delivery_offset: int  # days before contract end when the event arrives
    event_offset: int  # days before contract end when it actually happened


@dataclass(frozen=True)
class RenewalScenario:
    renewal_id: str
    customer_ref: str
    customer_hash: int
    churn_label: bool
    eol_affected: bool
    merger: bool
    monthly_charges: float
    signals: tuple[SignalSpec, ...]
    features: dict[str, Any] = field(hash=False)

    def signal_kinds(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.signals)


def _tenure_bucket(tenure: int) -> str:
    if tenure <= 6:
        return "0-6"
    if tenure <= 24:
        return "7-24"
    return "25+"


def _monthly_bucket(monthly: float) -> str:
    if monthly < 45.0:
        return "low"
    if monthly <= 80.0:
        return "mid"
    return "high"


def derive_scenario(index: int, row: dict[str, str]) -> RenewalScenario:
    cid = row["customerID"]
    tenure = int(row["tenure"])
    monthly = float(row["MonthlyCharges"])
    internet = row["InternetService"]
    merger = customer_hash(cid) % MERGER_MODULUS == 0

    signals: list[SignalSpec] = []
    if tenure <= 6:
        signals.append(SignalSpec("usage_drop", USAGE_DROP_OFFSET, USAGE_DROP_OFFSET))
    if row["TechSupport"] == "No" and internet != "No":
        signals.append(SignalSpec("support_ticket", SUPPORT_TICKET_OFFSET, SUPPORT_TICKET_OFFSET))
    if monthly > 80.0:
        if row["PaperlessBilling"] == "No":
            signals.append(SignalSpec("billing_change", LATE_DELIVERY_OFFSET, BILLING_CHANGE_OFFSET))
        else:
            signals.append(SignalSpec("billing_change", BILLING_CHANGE_OFFSET, BILLING_CHANGE_OFFSET))
    if row["Contract"] == "Month-to-month":
        signals.append(SignalSpec("plan_fit_shift", PLAN_FIT_OFFSET, PLAN_FIT_OFFSET))
    if merger:
        signals.append(SignalSpec("merger_notice", MERGER_OFFSET, MERGER_OFFSET))
    signals.sort(key=lambda s: (s.delivery_offset, s.event_offset, s.kind))

    features = {
        "contract": row["Contract"],
        "internet": internet,
        "tenure_bucket": _tenure_bucket(tenure),
        "monthly_bucket": _monthly_bucket(monthly),
        "tech_support": row["TechSupport"],
        "paperless": row["PaperlessBilling"] == "Yes",
        "senior": int(row["SeniorCitizen"]),
        "monthly_charges": round(monthly, 2),
    }
    return RenewalScenario(
        renewal_id=f"rnw-{index:04d}",
        customer_ref=redacted_ref(cid),
        customer_hash=customer_hash(cid),
        churn_label=row["Churn"] == "Yes",
        eol_affected=internet == "Fiber optic",
        merger=merger,
        monthly_charges=round(monthly, 2),
        signals=tuple(signals),
        features=features,
    )


@dataclass(frozen=True)
class DatasetStats:
    rows: int
    churn_rows: int
    blank_total_charges: int

    @property
    def churn_fraction(self) -> float:
        return self.churn_rows / self.rows if self.rows else 0.0


def read_rows(csv_path: str | Path | None = None) -> tuple[list[dict[str, str]], DatasetStats]:
    path = Path(csv_path) if csv_path else packaged_csv_path()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"unexpected columns in {path}: {reader.fieldnames}")
        rows = list(reader)
    stats = DatasetStats(
        rows=len(rows),
        churn_rows=sum(1 for r in rows if r["Churn"] == "Yes"),
        blank_total_charges=sum(1 for r in rows if r["TotalCharges"].strip() == ""),
    )
    return rows, stats


def load_scenarios(
    scenario_count: int,
    seed: int,
    csv_path: str | Path | None = None,
) -> tuple[list[RenewalScenario], DatasetStats]:
    """Sample customers and derive their renewal scenarios. The sample is a
    deterministic function of the seed, so the same seed replays the same
    book of business."""
    rows, stats = read_rows(csv_path)
    if scenario_count < 1 or scenario_count > len(rows):
        raise ValueError(f"scenario_count must be in 1..{len(rows)}, got {scenario_count}")
    sampled = random.Random(seed).sample(rows, scenario_count)
    scenarios = [derive_scenario(i, row) for i, row in enumerate(sampled)]
    return scenarios, stats
