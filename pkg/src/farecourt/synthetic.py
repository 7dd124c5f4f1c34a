"""Synthetic order corpora with planted structure, for calibration checks and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import Rule, RuleBase
from .geo import GeoPoint
from .orders import OrderInit, OrderRecord
from .seeding import rng_for

TOPICS = {
    "no_show": [
        "passenger never showed up at the pickup point",
        "waited but the rider did not appear",
        "no one came out, rider absent at pickup",
    ],
    "route": [
        "driver took a strange detour away from the route",
        "car went the wrong way and looped around",
        "navigation ignored, long roundabout path",
    ],
    "vehicle": [
        "vehicle plate did not match the app",
        "different car arrived than the one booked",
        "wrong car model and plate at pickup",
    ],
    "schedule": [
        "rider asked to change the pickup time",
        "passenger requested cancellation due to schedule change",
        "plans changed so the trip was no longer needed",
    ],
}


@dataclass
class CalibrationCorpus:
    orders: list[OrderRecord]
    applicability: np.ndarray
    base: RuleBase
    planted_family: dict[str, str]


CALIBRATION_RULES = RuleBase(
    [
        Rule("R1", "Driver stationary for more than 300 s after acceptance is treated as a service delay."),
        Rule("R2", "Combined detour distance and passenger waiting beyond tolerance indicates driver fault."),
        Rule("R3", "Cancellation code 3 (vehicle mismatch) shifts liability to the driver."),
        Rule("R4", "Driver moving fast while barely stopping indicates the driver left the pickup area."),
        Rule("R5", "Passenger absence reported at pickup is assessed under the no-show clause."),
    ]
)
PLANTED_FAMILY = {"R1": "stumps", "R2": "logistic", "R3": "stumps", "R4": "logistic", "R5": "knn"}


def _order(i: int, rng: np.random.Generator, t0: float) -> tuple[OrderRecord, str]:
    topic = str(rng.choice(sorted(TOPICS)))
    phrase = str(rng.choice(TOPICS[topic]))
    start = GeoPoint(float(rng.uniform(0, 900)), float(rng.uniform(0, 900)))
    end = GeoPoint(float(rng.uniform(0, 900)), float(rng.uniform(0, 900)))
    drv = GeoPoint(float(rng.uniform(0, 900)), float(rng.uniform(0, 900)))
    order = OrderRecord(
        order_id=f"o{i:05d}",
        o_init=OrderInit(drv, start, end, {"tier": str(rng.choice(["basic", "plus"]))}, {"tier": str(rng.choice(["new", "regular"]))}),
        f_driver={
            "stationary_s": float(rng.uniform(0, 600)),
            "detour_m": float(rng.uniform(0, 2000)),
            "speed_kmh": float(rng.uniform(0, 60)),
        },
        f_pass={"wait_s": float(rng.uniform(0, 900)), "messages": float(rng.integers(0, 20))},
        timestamp=t0 + i * 60.0 + float(rng.uniform(0, 30)),
        cancel_code=int(rng.integers(0, 6)),
        narrative=phrase,
    )
    return order, topic


def calibration_corpus(n: int, seed: int) -> CalibrationCorpus:
    """Orders whose rule applicability follows planted threshold, linear and topical structure."""
    rng = rng_for(seed, "calibration-corpus")
    orders, rows = [], []
    for i in range(n):
        o, topic = _order(i, rng, 1.7e9)
        fd, fp = o.f_driver, o.f_pass
        rows.append(
            [
                int(fd["stationary_s"] > 300),
                int(0.6 * fd["detour_m"] / 2000 + 0.4 * fp["wait_s"] / 900 > 0.55),
                int(o.cancel_code == 3),
                int(fd["speed_kmh"] / 60 - fd["stationary_s"] / 600 > 0.2),
                int(topic == "no_show"),
            ]
        )
        orders.append(o)
    return CalibrationCorpus(orders, np.array(rows), CALIBRATION_RULES, dict(PLANTED_FAMILY))
