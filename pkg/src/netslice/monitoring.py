"""Append-only time-series store for cross-domain KPIs, with a tiny query language.

Grammar (keywords are case-sensitive)::

    GET <metric> [WHERE <label>=<value> {AND <label>=<value>}] [RANGE <t0> <t1>] [AGG last|mean|max|min|sum]

Rows come back sorted by timestamp, then by their sorted label items,
then by insertion order. ``RANGE`` is inclusive on both ends.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType

from . import cn, slicing
from .errors import OrderingError, QueryParseError, SchemaError

METRIC_SCHEMA = {
    "prb_utilization": "fraction",
    "user_density": "users per cell",
    "handover_attempts": "count",
    "handover_successes": "count",
    "upf_processing_delay": "ms",
    "session_count": "count",
    "qos_violations": "count",
    "sla_satisfied": "count",
}
AGGREGATES = ("last", "mean", "max", "min", "sum")
_KEYWORDS = ("GET", "WHERE", "AND", "RANGE", "AGG")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_VALUE = re.compile(r"[A-Za-z0-9_.:\-]+\Z")
_INT = re.compile(r"\d+\Z")


@dataclass(frozen=True)
class MetricRecord:
    timestamp: int
    metric: str
    labels: MappingProxyType
    value: float

    def __post_init__(self):
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))

    @property
    def label_key(self):
        return tuple(sorted(self.labels.items()))


@dataclass(frozen=True)
class Query:
    metric: str
    where: tuple = ()  # ((label, value), ...) in source order
    time_range: tuple = None  # (t0, t1) inclusive
    agg: str = None


@dataclass(frozen=True)
class QueryResult:
    query: Query
    rows: tuple = ()  # (timestamp, label_items, value)
    aggregate: float = None

    @property
    def is_aggregate(self):
        return self.query.agg is not None

    @property
    def empty(self):
        return not self.rows

    def render(self):
        """Single-line text form used as an agent observation."""
        if self.is_aggregate:
            v = "none" if self.aggregate is None else f"{self.aggregate:.6g}"
            return f"{self.query.agg}={v} over {len(self.rows)} rows"
        if not self.rows:
            return "rows=0"
        parts = []
        for t, labels, value in self.rows:
            lab = ",".join(f"{k}={v}" for k, v in labels)
            parts.append(f"t={t} {lab} value={value:.6g}".replace("  ", " "))
        return f"rows={len(self.rows)}: " + " | ".join(parts)


# -- parsing ---------------------------------------------------------------


def _tokenize(text):
    return [(m.group(), m.start()) for m in re.finditer(r"\S+", text)]


def parse_query(text):
    """Parse a query string; raises :class:`QueryParseError` carrying the character position."""
    toks = _tokenize(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, len(text))

    def take(what):
        nonlocal pos
        tok, at = peek()
        if tok is None:
            raise QueryParseError(f"expected {what}, got end of input", text, at)
        pos += 1
        return tok, at

    tok, at = take("GET")
    if tok != "GET":
        raise QueryParseError(f"expected GET, got {tok!r}", text, at)
    metric, at = take("metric name")
    if metric in _KEYWORDS or not _IDENT.match(metric):
        raise QueryParseError(f"bad metric name {metric!r}", text, at)
    if metric not in METRIC_SCHEMA:
        raise QueryParseError(f"unknown metric {metric!r}", text, at)

    where, time_range, agg = [], None, None
    tok, at = peek()
    if tok == "WHERE":
        take("WHERE")
        while True:
            cond, at = take("label=value")
            label, eq, value = cond.partition("=")
            if not eq or not _IDENT.match(label) or label in _KEYWORDS:
                raise QueryParseError(f"expected label=value, got {cond!r}", text, at)
            if not value or not _VALUE.match(value):
                raise QueryParseError(f"bad label value in {cond!r}", text, at + len(label) + 1)
            where.append((label, value))
            tok, at = peek()
            if tok != "AND":
                break
            take("AND")
    tok, at = peek()
    if tok == "RANGE":
        take("RANGE")
        bounds = []
        for _ in range(2):
            num, at = take("tick")
            if not _INT.match(num):
                raise QueryParseError(f"expected a non-negative integer tick, got {num!r}", text, at)
            bounds.append(int(num))
        if bounds[0] > bounds[1]:
            raise QueryParseError("RANGE start after end", text, at)
        time_range = tuple(bounds)
    tok, at = peek()
    if tok == "AGG":
        take("AGG")
        agg, at = take("aggregate")
        if agg not in AGGREGATES:
            raise QueryParseError(f"unknown aggregate {agg!r}", text, at)
    tok, at = peek()
    if tok is not None:
        raise QueryParseError(f"unexpected {tok!r}", text, at)
    return Query(metric, tuple(where), time_range, agg)


def format_query(q):
    parts = ["GET", q.metric]
    if q.where:
        parts.append("WHERE")
        parts.append(" AND ".join(f"{k}={v}" for k, v in q.where))
    if q.time_range is not None:
        parts += ["RANGE", str(q.time_range[0]), str(q.time_range[1])]
    if q.agg:
        parts += ["AGG", q.agg]
    return " ".join(parts)


def aggregate(values, how):
    if not values:
        return None
    if how == "last":
        return values[-1]
    if how == "mean":
        return math.fsum(values) / len(values)
    if how == "max":
        return max(values)
    if how == "min":
        return min(values)
    return math.fsum(values)


# -- the store -------------------------------------------------------------


@dataclass
class MetricStore:
    schema: dict = field(default_factory=lambda: dict(METRIC_SCHEMA))

    def __post_init__(self):
        self._records = []
        self._last = {}  # (metric, label_key) -> last timestamp

    def __len__(self):
        return len(self._records)

    @property
    def records(self):
        return tuple(self._records)

    def append(self, record):
        if record.metric not in self.schema:
            raise SchemaError(f"metric {record.metric!r} is not registered")
        series = (record.metric, record.label_key)
        last = self._last.get(series)
        if last is not None and record.timestamp < last:
            raise OrderingError(
                f"series {record.metric}{dict(record.label_key)}: timestamp {record.timestamp} before {last}"
            )
        self._records.append(record)
        self._last[series] = record.timestamp
        return record

    def write(self, timestamp, metric, value, **labels):
        return self.append(MetricRecord(int(timestamp), metric, labels, float(value)))

    def ingest_snapshot(self, state, tick=None):
        """Write one KPI snapshot of ``state``; returns the number of records written."""
        t = state.tick if tick is None else tick
        n = 0
        for cid in sorted(state.cells):
            cell = state.cells[cid]
            users = state.users_on(cid)
            self.write(t, "prb_utilization", sum(u.assigned_prbs for u in users) / cell.total_prbs, cell=cid)
            self.write(t, "user_density", len(users), cell=cid)
            n += 2
        admitted = set(slicing.admitted_ids(state))
        report = slicing.sla_report(state)
        for sid in sorted(state.slices):
            members = [uid for uid, u in state.users.items() if u.slice_id == sid]
            sessions = sum(uid in admitted for uid in members)
            satisfied = report.satisfied_by_slice[sid]
            self.write(t, "session_count", sessions, slice=sid)
            self.write(t, "qos_violations", len(members) - satisfied, slice=sid)
            self.write(t, "sla_satisfied", satisfied, slice=sid)
            n += 3
        topo = state.topology
        if topo.embeddings:
            lat = [cn.sfc_latency(topo, e) for _, e in sorted(topo.embeddings.items())]
            self.write(t, "upf_processing_delay", math.fsum(lat) / len(lat))
            n += 1
        return n

    def query(self, text):
        q = text if isinstance(text, Query) else parse_query(text)
        picked = []
        for i, r in enumerate(self._records):
            if r.metric != q.metric:
                continue
            if any(r.labels.get(k) != v for k, v in q.where):
                continue
            if q.time_range and not (q.time_range[0] <= r.timestamp <= q.time_range[1]):
                continue
            picked.append((r.timestamp, r.label_key, i, r.value))
        picked.sort()
        rows = tuple((t, labels, v) for t, labels, _, v in picked)
        agg = aggregate([v for *_, v in rows], q.agg) if q.agg else None
        return QueryResult(q, rows, agg)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp", "metric", "labels", "value"])
        for r in self._records:
            w.writerow([r.timestamp, r.metric, ";".join(f"{k}={v}" for k, v in r.label_key), repr(r.value)])
        return buf.getvalue()

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())
        return path
