"""Disputed-order records and their textual rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .geo import GeoPoint


@dataclass(frozen=True)
class OrderInit:
    """Static information fixed when the driver accepts the order."""

    l_driver: GeoPoint
    l_start: GeoPoint
    l_end: GeoPoint
    driver_profile: dict[str, Any]
    passenger_profile: dict[str, Any]


@dataclass(frozen=True)
class OrderRecord:
    order_id: str
    o_init: OrderInit
    f_driver: dict[str, float]
    f_pass: dict[str, float]
    timestamp: float
    image_ref: str | None = None
    cancel_code: int = 0
    narrative: str = ""  # complaints, appeals and other free text
    ground_truth: str | None = None
    ambiguous: bool = False

    def __post_init__(self):
        if self.o_init is None:
            raise ValueError("o_init is required")
        for name in ("l_driver", "l_start", "l_end"):
            if getattr(self.o_init, name) is None:
                raise ValueError(f"o_init.{name} is required")
        if self.timestamp is None:
            raise ValueError("timestamp is required")

    @property
    def hour_of_day(self) -> float:
        return (float(self.timestamp) % 86400.0) / 3600.0

    def to_dict(self) -> dict[str, Any]:
        oi = self.o_init
        return {
            "order_id": self.order_id,
            "o_init": {
                "l_driver": list(oi.l_driver),
                "l_start": list(oi.l_start),
                "l_end": list(oi.l_end),
                "driver_profile": oi.driver_profile,
                "passenger_profile": oi.passenger_profile,
            },
            "f_driver": self.f_driver,
            "f_pass": self.f_pass,
            "timestamp": self.timestamp,
            "image_ref": self.image_ref,
            "cancel_code": self.cancel_code,
            "narrative": self.narrative,
            "ground_truth": self.ground_truth,
            "ambiguous": self.ambiguous,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "OrderRecord":
        try:
            oi = doc["o_init"]
            init = OrderInit(
                l_driver=GeoPoint(*oi["l_driver"]),
                l_start=GeoPoint(*oi["l_start"]),
                l_end=GeoPoint(*oi["l_end"]),
                driver_profile=dict(oi.get("driver_profile", {})),
                passenger_profile=dict(oi.get("passenger_profile", {})),
            )
            return cls(
                order_id=str(doc["order_id"]),
                o_init=init,
                f_driver={k: float(v) for k, v in doc.get("f_driver", {}).items()},
                f_pass={k: float(v) for k, v in doc.get("f_pass", {}).items()},
                timestamp=float(doc["timestamp"]),
                image_ref=doc.get("image_ref"),
                cancel_code=int(doc.get("cancel_code", 0)),
                narrative=doc.get("narrative", ""),
                ground_truth=doc.get("ground_truth"),
                ambiguous=bool(doc.get("ambiguous", False)),
            )
        except KeyError as exc:
            raise ValueError(f"order record missing mandatory field {exc.args[0]!r}") from None


def _fmt_stats(stats: dict[str, float]) -> str:
    return ", ".join(f"{k}={v:g}" for k, v in sorted(stats.items())) or "none recorded"


def _fmt_profile(profile: dict[str, Any]) -> str:
    return ", ".join(f"{k}: {v}" for k, v in sorted(profile.items())) or "none"


def order_text(order: OrderRecord) -> str:
    """Textual order context. Never includes the image reference."""
    oi = order.o_init
    lines = [
        f"Order ID: {order.order_id}",
        f"Driver acceptance point: ({oi.l_driver.x:.1f}, {oi.l_driver.y:.1f})",
        f"Pickup point: ({oi.l_start.x:.1f}, {oi.l_start.y:.1f})",
        f"Destination: ({oi.l_end.x:.1f}, {oi.l_end.y:.1f})",
        f"Hour of day: {order.hour_of_day:.1f}",
        f"Cancellation code: {order.cancel_code}",
        f"Driver profile: {_fmt_profile(oi.driver_profile)}",
        f"Passenger profile: {_fmt_profile(oi.passenger_profile)}",
        f"Driver behavior: {_fmt_stats(order.f_driver)}",
        f"Passenger behavior: {_fmt_stats(order.f_pass)}",
    ]
    if order.narrative:
        lines.append(f"Statements: {order.narrative}")
    return "\n".join(lines)


def semantic_text(order: OrderRecord) -> str:
    """Free-text fields concatenated for the semantic embedding."""
    oi = order.o_init
    parts = [order.narrative, _fmt_profile(oi.driver_profile), _fmt_profile(oi.passenger_profile)]
    return " | ".join(p for p in parts if p)


def load_orders(path: str | Path) -> list[OrderRecord]:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        doc = json.loads(text)
        docs = doc if isinstance(doc, list) else [doc]
    else:
        docs = [json.loads(line) for line in text.splitlines() if line.strip()]
    return [OrderRecord.from_dict(d) for d in docs]


def dump_orders(orders: Iterable[OrderRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in orders:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")
