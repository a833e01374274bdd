"""Generate scenarios/perf_500.yaml: 500 nodes, 4x4 grid, 10,000 ticks,
200 flow events and 20 fault events."""

import random
import sys

import yaml


def build(mobility_interval: float = 20.0) -> dict:
    rng = random.Random(2024)
    events = []
    for i in range(100):
        start = rng.randrange(1, 9000)
        src, dst = rng.sample(range(500), 2)
        events.append({"time": start, "kind": "flow_arrival", "flow": f"f{i:03d}",
                       "src": src, "dst": dst, "demand": rng.choice([1, 2, 3])})
        events.append({"time": start + rng.randrange(100, 900), "kind": "flow_departure",
                       "flow": f"f{i:03d}"})
    for j in range(20):
        t = rng.randrange(1, 10000)
        kind = ("node_crash", "link_cut", "intruder_seizure")[j % 3]
        if kind == "node_crash":
            events.append({"time": t, "kind": kind, "node": rng.randrange(500)})
        elif kind == "link_cut":
            a, b = rng.sample(range(500), 2)
            events.append({"time": t, "kind": kind, "nodes": [a, b]})
        else:
            events.append({"time": t, "kind": kind, "node": rng.randrange(500), "seized": 4})
    events.sort(key=lambda e: e["time"])
    return {
        "name": "perf_500",
        "seed": 500,
        "duration": 10000,
        "grid": {"rows": 4, "cols": 4, "width": 2000, "height": 2000},
        "nodes": {"count": 500, "radio_range": 250, "speed": [0.0, 2.0]},
        "election_period": 50,
        "maintenance_tick": 1,
        "mobility_interval": mobility_interval,
        "events": events,
    }


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "scenarios/perf_500.yaml"
    with open(out, "w") as fh:
        yaml.safe_dump(build(), fh, sort_keys=False, default_flow_style=None)
