"""The agent-driven controller: allocate, observe, let the agent adjust policy, re-allocate.

Tick 0 runs the joint heuristic and writes a KPI snapshot to the
monitoring DB. One ReAct episode follows; accepted directives change
reservations or capacities, and take effect at tick 1, where the joint
heuristic runs again on the adjusted network.
"""

from __future__ import annotations

import hashlib

from . import slicing
from .agent import ShortTermMemory, ExperienceStore, run_episode, standard_registry
from .config import AgentSection, ExperimentConfig, PolicySection
from .controllers import BaseController, E2EHeuristic
from .monitoring import MetricStore
from .policy import ConstraintTemplate, PolicyOrchestrator
from .reasoners import ExternalReasoner, make_reasoner


def scenario_fingerprint(state, report):
    counts = {}
    for u in state.users.values():
        counts[u.slice_id] = counts.get(u.slice_id, 0) + 1
    tokens = {f"load={len(state.users)}"} | {f"{s}={n}" for s, n in counts.items()}
    tokens |= {f"bottleneck={reason}" for _, reason in report.violations}
    return frozenset(tokens)


def report_digest(report):
    return hashlib.sha256(report.to_json_line().encode()).hexdigest()[:12]


class AgentDriven(BaseController):
    """Joint heuristic wrapped in one closed-loop agent episode.

    ``reasoner`` is ``"heuristic"``, ``"scripted"`` (with ``script``),
    ``"external"`` or any callable taking the context document.
    """

    kind = "AgentDriven"

    def __init__(
        self, reasoner="heuristic", episode_budget=12, script=None, agent=None, policy=None,
        reasoner_config=None, transport=None, experiences=None, scenario_id=None,
    ):
        self.reasoner = reasoner
        self.episode_budget = episode_budget
        self.script = script
        self.agent = agent
        self.policy = policy
        self.reasoner_config = reasoner_config
        self.transport = transport
        self.experiences = experiences
        self.scenario_id = scenario_id

    def _make_reasoner(self):
        if callable(self.reasoner):
            return self.reasoner
        return make_reasoner(self.reasoner, self.agent, self.reasoner_config, self.script, self.transport)

    def _allocate(self, state):
        agent_cfg = self.agent or AgentSection()
        template = ConstraintTemplate.from_config(self.policy or PolicySection())
        experiences = self.experiences if self.experiences is not None else ExperienceStore()

        s0 = E2EHeuristic()._allocate(state)["_state"]
        before = slicing.sla_report(s0)
        pre_episode = s0.copy()
        store = MetricStore()
        store.ingest_snapshot(s0)

        orch = PolicyOrchestrator(s0, template, self.scenario_id)
        episode_id = f"ep-{self.scenario_id or 'run'}-t{s0.tick}"
        orch.begin_episode(episode_id)
        registry = standard_registry(store, orch, experiences, agent_cfg.retrieve_k)
        reasoner = self._make_reasoner()
        n = len(s0.users)

        def kpis():
            return {
                "tick": s0.tick,
                "state_digest": s0.digest()[:16],
                "users": n,
                "satisfied": before.satisfied_total,
            }

        fingerprint = scenario_fingerprint(s0, before)
        trace = run_episode(
            reasoner, registry, ShortTermMemory(agent_cfg.memory_window), experiences, kpis,
            self.episode_budget, agent_cfg.objective, episode_id, max_tokens=agent_cfg.context_tokens,
            retrieve_k=agent_cfg.retrieve_k, timestamp=s0.tick, scenario_id=self.scenario_id,
            fingerprint=fingerprint,
        )
        unavailable = isinstance(reasoner, ExternalReasoner) and reasoner.unavailable
        flagged = trace.outcome == "aborted" or unavailable

        if trace.outcome == "aborted":
            final = pre_episode
        elif trace.final_directives:
            s0.tick += 1
            slicing.reset_allocation(s0)
            final = E2EHeuristic()._allocate(s0)["_state"]
            store.ingest_snapshot(final)
        else:
            final = s0
        after = slicing.sla_report(final)
        audit = orch.audit_log()
        accepted = [r.text for r in audit if r.accepted]
        experiences.add(fingerprint, "; ".join(accepted) or "no action", report_digest(after))
        return {
            "_state": final,
            "_flagged": flagged,
            "trace": trace,
            "audit": audit,
            "before": before,
            "after": after,
            "store": store,
        }


def cn_bottleneck_config(n_users=12):
    """A scenario where core links, not radio, limit the URLLC slice.

    The ingress pod has no compute, so every chain crosses two 10 Mbps
    core links: each adds 1.2 ms of transmission delay per packet and
    only five 2 Mbps flows fit. The template admits a 1 Gbps raise.
    """
    cfg = ExperimentConfig()
    cfg.scenario.n_users = n_users
    cfg.scenario.slice_mix = {"URLLC": 1.0}
    cfg.cn.link_capacity_core_bps = 10e6
    cfg.cn.server_compute_overrides = {f"s{i:03d}": 0.0 for i in range(cfg.cn.fat_tree_k ** 2 // 4)}
    cfg.policy.core_bandwidth_max_factor = 1000.0
    return cfg.validate()


def healthy_config(n_users=10):
    cfg = ExperimentConfig()
    cfg.scenario.n_users = n_users
    return cfg.validate()
