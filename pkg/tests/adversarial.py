"""Randomized hostile backends for the inquiry loop, plus an isolation checker."""

import random

from farecourt.backends import FunctionBackend, RecordingBackend
from farecourt.calibration import Rule, RuleBase
from farecourt.geo import GeoPoint
from farecourt.orders import OrderInit, OrderRecord

WORDS = "driver rider route map stop wait cancel detour pickup lane bridge late early north".split()


def hostile_case(seed: int):
    """Order, rules and a pair of recording backends that try hard to break the loop."""
    rnd = random.Random(seed)
    rules = RuleBase(
        [Rule(f"R{i}", f"clause-{seed}-{i} " + " ".join(rnd.choices(WORDS, k=6))) for i in range(rnd.randint(1, 5))]
    )
    image = f"/data/maps/secret_{seed}.png"
    init = OrderInit(GeoPoint(0, 0), GeoPoint(50, 0), GeoPoint(900, 400), {"tier": "gold"}, {"tier": "new"})
    order = OrderRecord(f"adv{seed}", init, {"wait_s": 12.0}, {"wait_s": 3.0}, 1.7e9 + seed, image_ref=image)
    verdict_turn = rnd.choice([None, None, rnd.randint(1, 12)])

    def adjudicator(prompt, convo, image_ref):
        turn = sum(m["role"] == "assistant" for m in convo) + 1
        if verdict_turn is not None and turn >= verdict_turn:
            return "<result>driver_liable</result>"
        mode = rnd.randrange(5)
        clause = rnd.choice(rules.rules).clause
        if mode == 0:
            return " ".join(f"<map>Is it true that {clause}? part {j}</map>" for j in range(rnd.randint(2, 4)))
        if mode == 1:
            return "<map>unclosed question about " + clause
        if mode == 2:
            return "no tags at all"
        if mode == 3:
            return f"</map><map></map><map>{clause}</map>"
        return f"<map>Where did the driver stop? Rule text: {clause}</map>"

    def analyst(prompt, convo, image_ref):
        return f"<answer>Looking at {image_ref} and {image_ref.rsplit('/', 1)[-1]}: the route was followed.</answer>"

    adj = RecordingBackend(FunctionBackend(adjudicator, name="hostile-adjudicator"))
    ana = RecordingBackend(FunctionBackend(analyst, name="echo-analyst"))
    return order, rules, adj, ana


def isolation_violations(order, rules, adj: RecordingBackend, ana: RecordingBackend) -> list[str]:
    found = []
    image_name = order.image_ref.rsplit("/", 1)[-1]
    for rec in adj.records:
        if rec.image_ref is not None:
            found.append("adjudicator received an image")
        for m in rec.conversation:
            if image_name in m["content"]:
                found.append("image reference reached the adjudicator")
    for rec in ana.records:
        if rec.image_ref != order.image_ref:
            found.append("analyst image mismatch")
        for m in rec.conversation:
            if m["role"] != "user":
                continue
            if any(r.clause in m["content"] for r in rules):
                found.append("rule text reached the analyst")
            if order.order_id in m["content"]:
                found.append("order record reached the analyst")
    return found
