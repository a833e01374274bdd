"""Trace records and the metrics fold over them.

A trace is line-delimited text, one record per state transition::

    t=<seconds> kind=<RECORD_KIND> <key>=<value> ...

Keys appear in a fixed order per kind (see ``RECORD_KEYS``). Numbers are
written with six decimals so traces compare byte-for-byte.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from gridsurv.errors import TraceParseError

SCHEMA_ID = "gridsurv-metrics/1"
REASONS = ("ChFailed", "ChLeftCluster", "ElectionPeriodEnded", "ChOverloaded")

RECORD_KEYS: dict[str, tuple[str, ...]] = {
    "INIT": ("seed", "nodes", "rows", "cols", "width", "height", "range", "capacity"),
    "NODE": ("node", "x", "y", "speed", "battery", "computation"),
    "LINKS": ("count",),
    "CLUSTER": ("zone", "ch", "backup", "members", "gateways"),
    "MOBILITY": ("dt", "moved"),
    "FAULT": ("fault", "node", "peer", "seized"),
    "VIOLATION": ("flow", "violation"),
    "REPAIRED": ("flow", "path", "zones", "repairs"),
    "REPAIR_FAILED": ("flow",),
    "REMOVE": ("node", "zone"),
    "MOVE": ("node", "from", "to"),
    "GATEWAY": ("node", "zone", "gateway"),
    "CH_CHANGE": ("zone", "old", "new", "reason"),
    "CH_FORMED": ("zone", "ch"),
    "RELEASE": ("flow", "state"),
    "ADMIT": ("flow", "src", "dst", "demand", "path", "zones"),
    "REJECT": ("flow", "src", "dst", "demand", "reason"),
    "TICK": ("links", "capacity", "reserved", "residual", "active"),
    "END": ("active", "zone_infeasible", "search_exhausted"),
}

_LINE = re.compile(r"^t=(\S+) kind=([A-Z_]+)((?: [a-z_]+=\S*)*)$")


def fmt_value(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, (list, tuple)) and not hasattr(v, "_fields"):
        return ">".join(fmt_value(x) for x in v) or "-"
    return str(v)


def format_record(t: float, kind: str, **fields) -> str:
    keys = RECORD_KEYS[kind]
    assert tuple(fields) == keys, (kind, tuple(fields))
    parts = [f"t={t:.6f}", f"kind={kind}"]
    parts += [f"{k}={fmt_value(v)}" for k, v in fields.items()]
    return " ".join(parts)


@dataclass(frozen=True)
class Record:
    t: float
    kind: str
    fields: dict[str, str]


def parse_record(line: str, lineno: int) -> Record:
    m = _LINE.match(line)
    if not m:
        raise TraceParseError(lineno, f"malformed record {line[:60]!r}")
    try:
        t = float(m.group(1))
    except ValueError:
        raise TraceParseError(lineno, f"bad timestamp {m.group(1)!r}") from None
    kind = m.group(2)
    if kind not in RECORD_KEYS:
        raise TraceParseError(lineno, f"unknown record kind {kind}")
    fields = dict(kv.split("=", 1) for kv in m.group(3).split())
    if tuple(fields) != RECORD_KEYS[kind]:
        raise TraceParseError(lineno, f"{kind} record has keys {tuple(fields)}")
    return Record(t, kind, fields)


@dataclass
class MetricsReport:
    ch_changes_total: int = 0
    ch_changes_by_reason: dict[str, int] = field(default_factory=lambda: dict.fromkeys(REASONS, 0))
    ch_formations: int = 0
    re_registrations: int = 0
    flows_requested: int = 0
    flows_admitted: int = 0
    flows_rejected: int = 0
    flows_rejected_no_route: int = 0
    flows_rejected_bandwidth: int = 0
    flows_failed: int = 0
    flows_repaired: int = 0
    flows_released: int = 0
    repaired_then_released: int = 0
    active_at_end: int = 0
    repair_events: int = 0
    repair_latency: list[float] = field(default_factory=list)
    reservation_survival_rate: float = 1.0
    gateway_churn: int = 0
    zone_expansion_infeasible: int = 0
    residual_per_tick: list[tuple[float, float]] = field(default_factory=list)

    def balanced(self) -> bool:
        return self.flows_admitted == self.active_at_end + self.flows_released + self.flows_failed

    def to_json(self) -> str:
        d = asdict(self)
        d["residual_per_tick"] = [list(p) for p in self.residual_per_tick]
        return json.dumps({"schema": SCHEMA_ID, **d}, indent=2) + "\n"

    def to_csv(self, tool_version: str) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={SCHEMA_ID} tool=gridsurv {tool_version}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in asdict(self).items():
            if k == "ch_changes_by_reason":
                for reason, n in v.items():
                    w.writerow([f"ch_changes.{reason}", n])
            elif k == "repair_latency":
                w.writerow([k, ";".join(f"{x:.6f}" for x in v)])
            elif k == "residual_per_tick":
                w.writerow(["ticks", len(v)])
                if v:
                    vals = [r for _, r in v]
                    w.writerow(["residual_min", f"{min(vals):.6f}"])
                    w.writerow(["residual_max", f"{max(vals):.6f}"])
                    w.writerow(["residual_final", f"{vals[-1]:.6f}"])
            elif isinstance(v, float):
                w.writerow([k, f"{v:.6f}"])
            else:
                w.writerow([k, v])
        return buf.getvalue()


def collect_metrics(trace: Iterable[str]) -> MetricsReport:
    """Fold a trace into a MetricsReport.

    With no admitted flows the survival rate is 1.0 by convention.
    Repair latency is measured from the flow's most recent VIOLATION.
    """
    m = MetricsReport()
    state: dict[str, str] = {}
    violated_at: dict[str, float] = {}
    repaired: set[str] = set()
    for lineno, line in enumerate(trace, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        rec = parse_record(line, lineno)
        f = rec.fields
        kind = rec.kind
        if kind == "CH_CHANGE":
            m.ch_changes_total += 1
            if f["reason"] not in m.ch_changes_by_reason:
                raise TraceParseError(lineno, f"unknown reason {f['reason']}")
            m.ch_changes_by_reason[f["reason"]] += 1
        elif kind == "CH_FORMED":
            m.ch_formations += 1
        elif kind == "MOVE":
            m.re_registrations += 1
        elif kind == "GATEWAY":
            m.gateway_churn += 1
        elif kind == "ADMIT":
            m.flows_requested += 1
            m.flows_admitted += 1
            state[f["flow"]] = "Active"
        elif kind == "REJECT":
            m.flows_requested += 1
            m.flows_rejected += 1
            if f["reason"] == "no-route":
                m.flows_rejected_no_route += 1
            else:
                m.flows_rejected_bandwidth += 1
        elif kind == "VIOLATION":
            violated_at[f["flow"]] = rec.t
        elif kind == "REPAIRED":
            m.repair_events += 1
            repaired.add(f["flow"])
            state[f["flow"]] = "Repaired"
            m.repair_latency.append(rec.t - violated_at.get(f["flow"], rec.t))
        elif kind == "REPAIR_FAILED":
            m.flows_failed += 1
            state[f["flow"]] = "Failed"
        elif kind == "RELEASE":
            m.flows_released += 1
            if state.get(f["flow"]) == "Repaired":
                m.repaired_then_released += 1
            state[f["flow"]] = "Released"
        elif kind == "TICK":
            m.residual_per_tick.append((rec.t, float(f["residual"])))
        elif kind == "END":
            m.zone_expansion_infeasible = int(f["zone_infeasible"])
    m.flows_repaired = len(repaired)
    m.active_at_end = sum(1 for s in state.values() if s in ("Active", "Repaired"))
    if m.flows_admitted:
        m.reservation_survival_rate = (m.flows_admitted - m.flows_failed) / m.flows_admitted
    return m


def read_trace(path: str | Path) -> list[str]:
    return Path(path).read_text().splitlines()


def write_trace(path: str | Path, trace: Iterable[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in trace))

