"""ReAct loop: render context, ask the reasoner, parse, act through tools, observe.

A reasoner is any callable mapping the rendered context document to
text in the line protocol::

    Thought: <free text>
    Action: Query[<dsl>] | Apply[ApplyPolicy[...]] | Retrieve[<terms>] | Finish[<summary>]
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import deque
from dataclasses import asdict, dataclass, field

from .errors import DuplicateError, NotFoundError, PolicyViolation, ReasonerParseError

ACTION_VERBS = ("Query", "Apply", "Retrieve", "Finish")
TOOL_FOR_VERB = {"Query": "db.query", "Apply": "policy.apply", "Retrieve": "memory.retrieve"}
FINISH_OBSERVATION = "episode closed"
MAX_PARSE_STRIKES = 3
SECTIONS = ("OBJECTIVE", "TOOLS", "RECENT STEPS", "RETRIEVED EXPERIENCE", "CURRENT KPIS")


# -- tools -----------------------------------------------------------------


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    kind: str  # "perception" | "control"
    params: str
    description: str

    def __post_init__(self):
        if self.kind not in ("perception", "control"):
            raise ValueError(f"tool kind must be perception or control, got {self.kind!r}")


class ToolRegistry:
    def __init__(self):
        self._tools = {}

    def register(self, descriptor, handler):
        if descriptor.name in self._tools:
            raise DuplicateError(f"tool {descriptor.name!r} already registered")
        self._tools[descriptor.name] = (descriptor, handler)

    def __contains__(self, name):
        return name in self._tools

    def descriptors(self):
        return [d for d, _ in sorted(self._tools.values(), key=lambda t: t[0].name)]

    def call(self, name, payload, mode="full"):
        """Invoke a tool; control tools are refused in ``perception`` mode."""
        if name not in self._tools:
            raise NotFoundError(f"no tool named {name!r}")
        desc, handler = self._tools[name]
        if mode == "perception" and desc.kind == "control":
            raise PolicyViolation(f"control tool {name!r} refused in perception-only mode")
        return handler(payload)


def register_tool(registry, descriptor, handler):
    registry.register(descriptor, handler)
    return registry


# -- memory ----------------------------------------------------------------


class ShortTermMemory:
    """Bounded FIFO of rendered steps from the current episode."""

    def __init__(self, window=8):
        self.window = window
        self._items = deque(maxlen=window)

    def push(self, text):
        self._items.append(text)

    def clear(self):
        self._items.clear()

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)


def tokens_of(text):
    return frozenset(t for t in re.split(r"[\s,;]+", text.lower()) if t)


@dataclass(frozen=True)
class ExperienceEntry:
    fingerprint: frozenset
    decision: str
    outcome: str  # SlaReport digest
    seq: int = 0


def jaccard(a, b):
    union = a | b
    return len(a & b) / len(union) if union else 0.0


class ExperienceStore:
    """Long-term memory: scored by token overlap, ties broken by recency (newest first)."""

    def __init__(self):
        self._entries = []

    def __len__(self):
        return len(self._entries)

    @property
    def entries(self):
        return tuple(self._entries)

    def add(self, fingerprint, decision, outcome):
        entry = ExperienceEntry(frozenset(fingerprint), decision, outcome, len(self._entries))
        self._entries.append(entry)
        return entry

    def retrieve(self, terms, top_k=3):
        if top_k < 0:
            raise ValueError("top_k must be >= 0")
        q = frozenset(terms) if not isinstance(terms, str) else tokens_of(terms)
        scored = [(jaccard(q, e.fingerprint), e) for e in self._entries]
        scored.sort(key=lambda se: (-se[0], -se[1].seq))
        return scored[:top_k]


def retrieve_experiences(store, terms, top_k=3):
    return store.retrieve(terms, top_k)


# -- context ---------------------------------------------------------------


def _token_count(text):
    return len(text.split())


def render_context(kpis, memory, experiences, tools, objective, max_tokens=1500):
    """Deterministic context document with fixed sections.

    When the document exceeds ``max_tokens`` whitespace tokens the oldest
    RECENT STEPS are dropped first and the header records how many.
    """
    steps = list(memory)
    tool_lines = [f"- {d.name} ({d.kind}): {d.params}  {d.description}" for d in tools]
    exp_lines = [f"- score={s:.3f} decision={e.decision} outcome={e.outcome}" for s, e in experiences]
    kpi_lines = [f"{k}: {v}" for k, v in kpis.items()] if isinstance(kpis, dict) else [str(kpis)]

    def build(kept, dropped):
        head = "## RECENT STEPS" + (f" ({dropped} older steps truncated)" if dropped else "")
        parts = [
            "## OBJECTIVE", objective, "",
            "## TOOLS", *tool_lines, "",
            head, *kept, "",
            "## RETRIEVED EXPERIENCE", *exp_lines, "",
            "## CURRENT KPIS", *kpi_lines, "",
        ]
        return "\n".join(parts)

    dropped = 0
    doc = build(steps, 0)
    while _token_count(doc) > max_tokens and dropped < len(steps):
        dropped += 1
        doc = build(steps[dropped:], dropped)
    return doc


def render_step(step):
    return (
        f"Step {step.index}\nThought: {step.thought}\n"
        f"Action: {step.action_text}\nObservation: {step.observation}"
    )


# -- reasoner protocol -----------------------------------------------------


@dataclass(frozen=True)
class Action:
    kind: str  # Query | Apply | Retrieve | Finish | Invalid
    payload: str

    @property
    def text(self):
        return f"{self.kind}[{self.payload}]"


def _balanced(s):
    depth = 0
    for i, ch in enumerate(s):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                return i
    return None if depth == 0 else len(s)


def parse_reasoner_output(text):
    """Return ``(thought, Action)``; raise :class:`ReasonerParseError` on protocol violations.

    Positions index into ``text``. Content after the action line is
    ignored unless it holds a second action line.
    """
    offset = 0
    lines = []
    for line in text.split("\n"):
        lines.append((line, offset))
        offset += len(line) + 1
    body = [(ln, at) for ln, at in lines if ln.strip()]
    if not body or not body[0][0].lstrip().startswith("Thought:"):
        at = body[0][1] if body else 0
        raise ReasonerParseError("missing 'Thought:' line before the action", text, at)
    thought_parts, action_line = [], None
    i = 0
    for i, (ln, at) in enumerate(body):
        s = ln.strip()
        if s.startswith("Action:"):
            action_line = (s, at + len(ln) - len(ln.lstrip()))
            break
        if s.startswith("Thought:"):
            if thought_parts:
                raise ReasonerParseError("duplicate 'Thought:' line", text, at)
            thought_parts.append(s[len("Thought:"):].strip())
        else:
            thought_parts.append(s)
    if action_line is None:
        raise ReasonerParseError("missing 'Action:' line", text, len(text))
    for ln, at in body[i + 1:]:
        if ln.strip().startswith("Action:"):
            raise ReasonerParseError("duplicate 'Action:' line", text, at)
    s, at = action_line
    rest = s[len("Action:"):]
    lead = len(rest) - len(rest.lstrip())
    rest = rest.strip()
    at += len("Action:") + lead
    m = re.match(r"([A-Za-z]+)\[", rest)
    if not m:
        raise ReasonerParseError("expected Verb[...] after 'Action:'", text, at)
    verb = m.group(1)
    if verb not in ACTION_VERBS:
        raise ReasonerParseError(f"unknown action verb {verb!r}", text, at)
    inner = rest[m.end():]
    if not inner.endswith("]"):
        raise ReasonerParseError("action must end with ']'", text, at + len(rest))
    payload = inner[:-1]
    bad = _balanced(payload)
    if bad is not None:
        raise ReasonerParseError("unbalanced brackets in action payload", text, at + m.end() + bad)
    if verb == "Apply" and not (payload.startswith("ApplyPolicy[") and payload.endswith("]")):
        raise ReasonerParseError("Apply expects ApplyPolicy[...]", text, at + m.end())
    return " ".join(p for p in thought_parts if p), Action(verb, payload.strip() if verb != "Apply" else payload)


# -- episodes --------------------------------------------------------------


@dataclass
class ReActStep:
    index: int
    thought: str
    action_kind: str
    action_payload: str
    observation: str
    timestamp: int = 0

    @property
    def action_text(self):
        if self.action_kind == "Invalid":
            return "Invalid"
        return f"{self.action_kind}[{self.action_payload}]"


@dataclass
class ReActTrace:
    episode_id: str
    budget: int
    steps: list = field(default_factory=list)
    outcome: str = "budget_exhausted"  # finished | budget_exhausted | aborted
    abort_reason: str = None
    final_directives: list = field(default_factory=list)
    scenario_id: str = None

    def to_jsonl(self):
        lines = []
        for s in self.steps:
            rec = {"episode_id": self.episode_id, "scenario_id": self.scenario_id, **asdict(s)}
            lines.append(json.dumps(rec, sort_keys=False))
        return "".join(line + "\n" for line in lines)

    def summary(self):
        return {
            "episode_id": self.episode_id,
            "steps": len(self.steps),
            "budget": self.budget,
            "outcome": self.outcome,
            "abort_reason": self.abort_reason,
            "final_directives": list(self.final_directives),
        }

    def digest(self):
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


def run_episode(
    reasoner, registry, memory, experiences=None, kpis=None, budget=12, objective="", episode_id="ep-0000",
    mode="full", max_tokens=1500, retrieve_k=3, timestamp=0, scenario_id=None, fingerprint=None,
):
    """Drive one thought-action-observation episode and return its trace.

    ``kpis`` is a mapping or a zero-argument callable returning one (so it
    can reflect the live state). Experiences matching ``fingerprint`` are
    retrieved once, up front. Tool failures become observations; three
    consecutive parse errors abort the episode.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    memory.clear()
    experiences = experiences if experiences is not None else ExperienceStore()
    trace = ReActTrace(episode_id, budget, scenario_id=scenario_id)
    recalled = experiences.retrieve(fingerprint, retrieve_k) if fingerprint else []
    strikes = 0
    for index in range(budget):
        current = kpis() if callable(kpis) else (kpis or {})
        doc = render_context(current, memory, recalled, registry.descriptors(), objective, max_tokens)
        raw = reasoner(doc)
        try:
            thought, action = parse_reasoner_output(raw)
        except ReasonerParseError as exc:
            strikes += 1
            step = ReActStep(index, "", "Invalid", raw, f"parse error: {exc}", timestamp)
            trace.steps.append(step)
            memory.push(render_step(step))
            if strikes >= MAX_PARSE_STRIKES:
                trace.outcome, trace.abort_reason = "aborted", "malformed_reasoner"
                return trace
            continue
        strikes = 0
        if action.kind == "Finish":
            step = ReActStep(index, thought, "Finish", action.payload, FINISH_OBSERVATION, timestamp)
            trace.steps.append(step)
            trace.outcome = "finished"
            return trace
        try:
            if action.kind == "Retrieve":
                hits = registry.call(TOOL_FOR_VERB["Retrieve"], action.payload, mode)
                observation = _render_hits(hits)
            else:
                result = registry.call(TOOL_FOR_VERB[action.kind], action.payload, mode)
                observation = result if isinstance(result, str) else str(result)
                if action.kind == "Apply" and isinstance(result, ApplyOutcome):
                    observation = result.observation
                    if result.accepted:
                        trace.final_directives.append(result.directive_id)
        except Exception as exc:  # tool failures are observations, never fatal
            observation = f"error: {type(exc).__name__}: {exc}"
        step = ReActStep(index, thought, action.kind, action.payload, observation, timestamp)
        trace.steps.append(step)
        memory.push(render_step(step))
    return trace


def _render_hits(hits):
    if not hits:
        return "no experiences"
    return " | ".join(f"score={s:.3f} decision={e.decision} outcome={e.outcome}" for s, e in hits)


@dataclass(frozen=True)
class ApplyOutcome:
    directive_id: str
    accepted: bool
    observation: str


def standard_registry(store, orchestrator=None, experiences=None, retrieve_k=3):
    """Registry with db.query, memory.retrieve and (when an orchestrator is given) policy.apply."""
    reg = ToolRegistry()
    reg.register(
        ToolDescriptor("db.query", "perception", "Query[<GET ...>]", "read KPIs from the monitoring DB"),
        lambda text: store.query(text).render(),
    )
    exp = experiences if experiences is not None else ExperienceStore()
    reg.register(
        ToolDescriptor("memory.retrieve", "perception", "Retrieve[<terms>]", "recall similar past episodes"),
        lambda terms: exp.retrieve(terms, retrieve_k),
    )
    if orchestrator is not None:

        def apply(text):
            rec, err = orchestrator.submit(text)
            if rec.accepted:
                obs = f"{rec.directive_id} accepted"
            else:
                obs = f"{rec.directive_id} rejected({rec.reason})" + (f": {err}" if err else "")
            return ApplyOutcome(rec.directive_id, rec.accepted, obs)

        reg.register(
            ToolDescriptor(
                "policy.apply", "control", "Apply[ApplyPolicy[<param> <op> <value> <unit>]]",
                "submit a policy directive to the orchestrator",
            ),
            apply,
        )
    return reg
