"""Core network model: k-ary fat tree, first-fit SFC embedding and chain latency."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import (
    CapacityError,
    ConfigurationError,
    DuplicateError,
    IntegrityError,
    NoPathError,
    NotFoundError,
)

TIERS = ("core", "aggregation", "edge", "server")
LINK_TIERS = ("core", "aggregation", "edge")

DEFAULT_LINK_CAPS = {"core": 10e9, "aggregation": 5e9, "edge": 1e9}


@dataclass
class VirtualNode:
    id: str
    tier: str
    compute_capacity: float = 0.0
    compute_used: float = 0.0
    initial_capacity: float = 0.0


@dataclass
class VirtualLink:
    """Undirected link. ``tier`` names the upper tier it attaches to:
    ``edge`` is server-edge, ``aggregation`` is edge-aggregation,
    ``core`` is aggregation-core."""

    id: str
    endpoints: tuple
    tier: str
    bandwidth_capacity: float
    bandwidth_used: float = 0.0
    propagation_delay: float = 0.1  # ms
    initial_capacity: float = 0.0


@dataclass(frozen=True)
class VnfDemand:
    compute_demand: float
    processing_delay: float = 0.5  # ms

    def __post_init__(self):
        if not self.compute_demand > 0:
            raise ConfigurationError("VNF compute demand must be positive")
        if self.processing_delay < 0:
            raise ConfigurationError("VNF processing delay must be non-negative")


@dataclass(frozen=True)
class SfcRequest:
    request_id: str
    owner_user: str
    chain: tuple
    flow_bandwidth: float
    latency_budget: float

    def __post_init__(self):
        if not self.flow_bandwidth > 0:
            raise ConfigurationError("flow bandwidth must be positive")
        object.__setattr__(self, "chain", tuple(self.chain))

    @property
    def total_compute(self):
        return sum(v.compute_demand for v in self.chain)


@dataclass(frozen=True)
class SfcEmbedding:
    request_id: str
    placements: tuple  # ((vnf_index, node_id), ...)
    path_segments: tuple  # (tuple of link ids per hop ingress->vnf1->...->vnfK)
    total_latency: float
    request: SfcRequest = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class Infeasible:
    """Embedding refused; ``constraint`` is compute, bandwidth or latency."""

    constraint: str
    detail: str = ""

    def __bool__(self):
        return False


class FatTreeTopology:
    def __init__(self, k, nodes, links, ingress_node, packet_size_bytes=1500):
        self.k = k
        self.nodes = nodes  # id -> VirtualNode
        self.links = links  # id -> VirtualLink
        self.ingress_node = ingress_node
        self.packet_size_bytes = packet_size_bytes
        self.embeddings = {}  # request_id -> SfcEmbedding
        self.adjacency = {n: [] for n in nodes}
        for link in links.values():
            a, b = link.endpoints
            self.adjacency[a].append((b, link.id))
            self.adjacency[b].append((a, link.id))
        for nbrs in self.adjacency.values():
            nbrs.sort()
        self.servers = sorted(n.id for n in nodes.values() if n.tier == "server")
        # min-hop routes ignore capacity, so they can be shared between copies
        self._path_cache = {}

    def copy(self):
        """Independent copy of capacities, usage and embeddings."""
        new = object.__new__(FatTreeTopology)
        new.k = self.k
        new.nodes = {i: VirtualNode(**vars(n)) for i, n in self.nodes.items()}
        new.links = {
            i: VirtualLink(**vars(link)) for i, link in self.links.items()
        }
        new.ingress_node = self.ingress_node
        new.packet_size_bytes = self.packet_size_bytes
        new.embeddings = dict(self.embeddings)
        new.adjacency = self.adjacency
        new.servers = self.servers
        new._path_cache = self._path_cache
        return new

    def emptied(self):
        """Copy with current capacities but no embeddings and zero usage."""
        new = self.copy()
        for n in new.nodes.values():
            n.compute_used = 0.0
        for link in new.links.values():
            link.bandwidth_used = 0.0
        new.embeddings = {}
        return new

    @property
    def total_compute(self):
        return sum(self.nodes[s].compute_capacity for s in self.servers)

    def count(self, tier):
        return sum(1 for n in self.nodes.values() if n.tier == tier)

    def state_dict(self):
        return {
            "nodes": {i: [n.compute_capacity, n.compute_used] for i, n in sorted(self.nodes.items())},
            "links": {
                i: [link.bandwidth_capacity, link.bandwidth_used] for i, link in sorted(self.links.items())
            },
            "embeddings": {
                rid: [list(map(list, e.placements)), [list(s) for s in e.path_segments]]
                for rid, e in sorted(self.embeddings.items())
            },
        }


def _link_id(a, b):
    a, b = sorted((a, b))
    return f"{a}-{b}"


def build_fat_tree(k, node_caps=100.0, link_caps=None, link_delay=0.1, packet_size_bytes=1500):
    """Canonical k-ary fat tree.

    k pods, each with k/2 edge and k/2 aggregation switches and (k/2)^2
    servers; (k/2)^2 core switches. Aggregation switch i of every pod
    connects to cores i*k/2 ... i*k/2 + k/2 - 1. Edge switch ``e000``
    is the ingress gateway.
    """
    if not isinstance(k, int) or k < 2 or k % 2:
        raise ConfigurationError("fat-tree arity must be an even integer >= 2", "cn.fat_tree_k", k)
    caps = dict(DEFAULT_LINK_CAPS)
    if link_caps is not None:
        if isinstance(link_caps, dict):
            caps.update(link_caps)
        else:
            caps = {t: float(link_caps) for t in LINK_TIERS}
    half = k // 2
    nodes, links = {}, {}

    def add_link(a, b, tier):
        lid = _link_id(a, b)
        links[lid] = VirtualLink(lid, tuple(sorted((a, b))), tier, caps[tier], 0.0, link_delay, caps[tier])

    for c in range(half * half):
        nodes[f"c{c:03d}"] = VirtualNode(f"c{c:03d}", "core")
    for pod in range(k):
        for i in range(half):
            agg = f"a{pod * half + i:03d}"
            edge = f"e{pod * half + i:03d}"
            nodes[agg] = VirtualNode(agg, "aggregation")
            nodes[edge] = VirtualNode(edge, "edge")
        for i in range(half):
            agg = f"a{pod * half + i:03d}"
            for j in range(half):
                add_link(agg, f"c{i * half + j:03d}", "core")
                add_link(f"e{pod * half + j:03d}", agg, "aggregation")
        for e in range(half):
            edge = f"e{pod * half + e:03d}"
            for h in range(half):
                srv = f"s{(pod * half + e) * half + h:03d}"
                nodes[srv] = VirtualNode(srv, "server", float(node_caps), 0.0, float(node_caps))
                add_link(srv, edge, "edge")
    return FatTreeTopology(k, nodes, links, "e000", packet_size_bytes)


def _bfs_dist(topology, target):
    dist = {target: 0}
    q = deque([target])
    while q:
        u = q.popleft()
        for v, _ in topology.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def shortest_path(topology, a, b):
    """Min-hop route as link ids; among equal-length routes the node sequence is lexicographically smallest."""
    if a not in topology.nodes or b not in topology.nodes:
        raise NotFoundError(f"unknown node {a if a not in topology.nodes else b}")
    key = (a, b)
    cached = topology._path_cache.get(key)
    if cached is not None:
        return list(cached)
    if a == b:
        topology._path_cache[key] = ()
        return []
    dist = _bfs_dist(topology, b)
    if a not in dist:
        raise NoPathError(f"no path between {a} and {b}")
    path, u = [], a
    while u != b:
        # adjacency lists are sorted, so the first match is the smallest id
        for v, lid in topology.adjacency[u]:
            if dist.get(v) == dist[u] - 1:
                path.append(lid)
                u = v
                break
    topology._path_cache[key] = tuple(path)
    return path


def transmission_delay_ms(topology, link):
    return topology.packet_size_bytes * 8.0 / link.bandwidth_capacity * 1e3


def _segments_latency(topology, segments, chain):
    total = 0.0
    for seg in segments:
        for lid in seg:
            link = topology.links[lid]
            total += link.propagation_delay + transmission_delay_ms(topology, link)
    return total + sum(v.processing_delay for v in chain)


def sfc_latency(topology, embedding):
    """Propagation + per-packet transmission over every traversed link, plus VNF processing."""
    for _, node in embedding.placements:
        if node not in topology.nodes:
            raise IntegrityError(f"embedding {embedding.request_id} references unknown node {node}")
    for seg in embedding.path_segments:
        for lid in seg:
            if lid not in topology.links:
                raise IntegrityError(f"embedding {embedding.request_id} references unknown link {lid}")
    chain = embedding.request.chain if embedding.request is not None else ()
    return _segments_latency(topology, embedding.path_segments, chain)


def plan_embedding(topology, request):
    """Compute a first-fit placement without touching the topology.

    Returns (placements, segments, latency) or an :class:`Infeasible`.
    """
    tentative = {}
    placements = []
    for idx, vnf in enumerate(request.chain):
        for sid in topology.servers:
            node = topology.nodes[sid]
            free = node.compute_capacity - node.compute_used - tentative.get(sid, 0.0)
            if free >= vnf.compute_demand:
                tentative[sid] = tentative.get(sid, 0.0) + vnf.compute_demand
                placements.append((idx, sid))
                break
        else:
            return Infeasible("compute", f"VNF {idx} of {request.request_id} fits on no server")

    hops = [topology.ingress_node] + [sid for _, sid in placements]
    segments = [tuple(shortest_path(topology, hops[i], hops[i + 1])) for i in range(len(hops) - 1)]
    load = {}
    for seg in segments:
        for lid in seg:
            load[lid] = load.get(lid, 0.0) + request.flow_bandwidth
    for lid, extra in load.items():
        link = topology.links[lid]
        if link.bandwidth_used + extra > link.bandwidth_capacity:
            return Infeasible("bandwidth", f"link {lid} lacks {extra:g} bps for {request.request_id}")
    latency = _segments_latency(topology, segments, request.chain)
    if latency > request.latency_budget:
        return Infeasible("latency", f"{latency:.4f} ms exceeds budget {request.latency_budget} ms")
    return tuple(placements), tuple(segments), latency


def embed_sfc(topology, request):
    """All-or-nothing first-fit embedding. Returns the embedding, or an Infeasible with no state change."""
    if request.request_id in topology.embeddings:
        raise DuplicateError(f"request {request.request_id} already embedded")
    plan = plan_embedding(topology, request)
    if isinstance(plan, Infeasible):
        return plan
    placements, segments, latency = plan
    for idx, sid in placements:
        topology.nodes[sid].compute_used += request.chain[idx].compute_demand
    for seg in segments:
        for lid in seg:
            topology.links[lid].bandwidth_used += request.flow_bandwidth
    emb = SfcEmbedding(request.request_id, placements, segments, latency, request)
    topology.embeddings[request.request_id] = emb
    return emb


def release_embedding(topology, request_id):
    """Return an embedding's compute and bandwidth; yields what was released."""
    emb = topology.embeddings.pop(request_id, None)
    if emb is None:
        raise NotFoundError(f"no live embedding for {request_id}")
    req = emb.request
    compute, bandwidth = {}, {}
    for idx, sid in emb.placements:
        amt = req.chain[idx].compute_demand
        topology.nodes[sid].compute_used -= amt
        compute[sid] = compute.get(sid, 0.0) + amt
    for seg in emb.path_segments:
        for lid in seg:
            topology.links[lid].bandwidth_used -= req.flow_bandwidth
            bandwidth[lid] = bandwidth.get(lid, 0.0) + req.flow_bandwidth
    # snap float residue from repeated add/subtract
    for sid in compute:
        if abs(topology.nodes[sid].compute_used) < 1e-9:
            topology.nodes[sid].compute_used = 0.0
    for lid in bandwidth:
        if abs(topology.links[lid].bandwidth_used) < 1e-3:
            topology.links[lid].bandwidth_used = 0.0
    return {"request_id": request_id, "compute": compute, "bandwidth": bandwidth}


def _select_links(topology, tier=None, link_ids=None):
    if link_ids is not None:
        missing = [lid for lid in link_ids if lid not in topology.links]
        if missing:
            raise NotFoundError(f"unknown links {missing}")
        return [topology.links[lid] for lid in link_ids]
    if tier not in LINK_TIERS:
        raise ConfigurationError(f"unknown link tier {tier!r}")
    return [link for link in topology.links.values() if link.tier == tier]


def core_bandwidth_scale(topology, delta, tier="core", relative=False, link_ids=None):
    """Add ``delta`` bps (or scale by 1 + delta when ``relative``) to every link of ``tier``.

    Refuses, without touching any link, if a new capacity would be
    non-positive or below current usage.
    """
    targets = _select_links(topology, tier, link_ids)
    new_caps = {}
    for link in targets:
        cap = link.bandwidth_capacity * (1.0 + delta) if relative else link.bandwidth_capacity + delta
        if cap <= 0 or cap < link.bandwidth_used:
            raise CapacityError(
                f"link {link.id}: capacity {cap:g} below usage {link.bandwidth_used:g}"
            )
        new_caps[link.id] = cap
    for lid, cap in new_caps.items():
        topology.links[lid].bandwidth_capacity = cap
    return topology


def node_compute_scale(topology, delta, node_ids=None, relative=False):
    """Adjust server compute capacity; same refusal rule as :func:`core_bandwidth_scale`."""
    ids = topology.servers if node_ids is None else list(node_ids)
    for nid in ids:
        if nid not in topology.nodes or topology.nodes[nid].tier != "server":
            raise NotFoundError(f"{nid} is not a server")
    new_caps = {}
    for nid in ids:
        node = topology.nodes[nid]
        cap = node.compute_capacity * (1.0 + delta) if relative else node.compute_capacity + delta
        if cap < 0 or cap < node.compute_used:
            raise CapacityError(f"node {nid}: capacity {cap:g} below usage {node.compute_used:g}")
        new_caps[nid] = cap
    for nid, cap in new_caps.items():
        topology.nodes[nid].compute_capacity = cap
    return topology


def export_adjacency(topology):
    """Plain-text dump: ``node <id> <tier> <compute_capacity>`` lines, then
    ``link <a> <b> <bandwidth_capacity_bps> <propagation_delay_ms>`` lines."""
    lines = [f"# fat-tree k={topology.k} ingress={topology.ingress_node}"]
    for nid in sorted(topology.nodes):
        n = topology.nodes[nid]
        lines.append(f"node {nid} {n.tier} {n.compute_capacity:g}")
    for lid in sorted(topology.links):
        link = topology.links[lid]
        a, b = link.endpoints
        lines.append(f"link {a} {b} {link.bandwidth_capacity:g} {link.propagation_delay:g}")
    return "\n".join(lines) + "\n"
