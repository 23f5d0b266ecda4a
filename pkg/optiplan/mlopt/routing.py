"""
IP-layer routing over a fixed IP topology: ordered CSPF for TE tunnels,
an exhaustive oracle for desk-scale instances, failure views and FRR bypass
selection.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import networkx as nx

from optiplan.mlopt import NoCapacity, NoDiversePath, PlanningException
from optiplan.netmodel import (IpLink, MultiLayerNetwork, NetworkException, SiteKind, TeTunnel, TrafficMatrix,
                               link_latency_ms, link_srlgs)

logger = logging.getLogger(__name__)

CAPACITY_EPS = 1e-9
LATENCY_EPS = 1e-9
DEFAULT_HEADROOM = 1.3

Ordering = Callable[[Sequence[TeTunnel]], List[TeTunnel]]


@dataclass(frozen=True)
class QosClass:
    index: int
    latency_bound_ms: float
    priority: int = 0

    def __post_init__(self):
        if self.latency_bound_ms <= 0:
            raise PlanningException('QoS class %d needs a positive latency bound' % self.index)

    @classmethod
    def from_dict(cls, data: dict) -> QosClass:
        return cls(int(data['index']), float(data['latency_bound_ms']), int(data.get('priority', 0)))


def tunnels_for(matrix: TrafficMatrix, classes: Sequence[QosClass]) -> List[TeTunnel]:
    bounds = {c.index: c.latency_bound_ms for c in classes}
    missing = [k for k in range(matrix.n_classes) if k not in bounds]
    if missing:
        raise PlanningException('No QoS class definition for class(es) %s' % missing)
    return matrix.tunnels([bounds[k] for k in range(matrix.n_classes)])


def default_ordering(tunnels: Sequence[TeTunnel]) -> List[TeTunnel]:
    """Tightest latency bound first, then largest demand, then id."""
    return sorted(tunnels, key=lambda t: (t.latency_bound_ms, -t.demand, t.id))


def priority_ordering(classes: Sequence[QosClass]) -> Ordering:
    priority = {c.index: c.priority for c in classes}

    def ordering(tunnels):
        return sorted(tunnels, key=lambda t: (priority.get(t.qos_class, 0), t.latency_bound_ms, -t.demand, t.id))
    return ordering


@dataclass
class Routing:
    paths: Dict[str, List[str]] = field(default_factory=dict)
    unrouted: List[str] = field(default_factory=list)
    loads: Dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not self.unrouted

    def carried(self, tunnels: Iterable[TeTunnel]) -> float:
        return float(sum(t.demand for t in tunnels if t.id in self.paths))


def _add_access(graph: nx.Graph, network: MultiLayerNetwork, site: str):
    found = network.sites.get(site)
    if found is not None and found.kind == SiteKind.EDGE:
        for home in network.endpoint_sites(site):
            graph.add_edge(site, home, latency=0.0, link=None)


def latency_graph(network: MultiLayerNetwork, links: Iterable[IpLink], residual: Dict[str, float] = None,
                  demand: float = 0.0, latencies: Dict[str, float] = None) -> nx.Graph:
    """
    Core-site graph keeping, per site pair, the lowest-latency link whose
    residual capacity covers `demand`.
    """
    graph = nx.Graph()
    for link in sorted(links, key=lambda l: l.id):
        if residual is not None and residual[link.id] < demand - CAPACITY_EPS:
            continue
        latency = latencies[link.id] if latencies else link_latency_ms(network, link)
        existing = graph.get_edge_data(link.a, link.b)
        if existing is None or existing['latency'] > latency:
            graph.add_edge(link.a, link.b, latency=latency, link=link.id)
    return graph


def shortest_link_path(graph: nx.Graph, src: str, dst: str) -> Optional[Tuple[List[str], float]]:
    try:
        nodes = nx.shortest_path(graph, src, dst, weight='latency')
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        return None
    edges = [graph.edges[u, v] for u, v in zip(nodes[:-1], nodes[1:])]
    return [e['link'] for e in edges if e['link'] is not None], sum(e['latency'] for e in edges)


def cspf_path(network: MultiLayerNetwork, links: Sequence[IpLink], residual: Dict[str, float], tunnel: TeTunnel,
              latencies: Dict[str, float] = None) -> Optional[List[str]]:
    graph = latency_graph(network, links, residual, tunnel.demand, latencies)
    _add_access(graph, network, tunnel.src)
    _add_access(graph, network, tunnel.dst)
    found = shortest_link_path(graph, tunnel.src, tunnel.dst)
    if found is None or found[1] > tunnel.latency_bound_ms + LATENCY_EPS:
        return None
    return found[0]


def route_tunnels(network: MultiLayerNetwork, tunnels: Sequence[TeTunnel], ordering: Ordering = default_ordering,
                  links: Iterable[IpLink] = None) -> Routing:
    """
    Route tunnels one at a time in `ordering`, each on the lowest-latency
    path whose links still have room for its demand within its latency
    bound. Tunnels without such a path are reported as unrouted.
    """
    links = list(network.ip_links.values()) if links is None else list(links)
    latencies = {l.id: link_latency_ms(network, l) for l in links}
    residual = {l.id: l.bandwidth for l in links}
    routing = Routing(loads={l.id: 0.0 for l in links})
    for tunnel in ordering(tunnels):
        path = cspf_path(network, links, residual, tunnel, latencies)
        if path is None:
            logger.debug('Tunnel %s (%.1f) is unroutable', tunnel.id, tunnel.demand)
            routing.unrouted.append(tunnel.id)
            continue
        for link_id in path:
            residual[link_id] -= tunnel.demand
            routing.loads[link_id] += tunnel.demand
        routing.paths[tunnel.id] = path
    return routing


def _simple_paths(network: MultiLayerNetwork, links: Sequence[IpLink], tunnel: TeTunnel,
                  latencies: Dict[str, float]) -> List[List[str]]:
    graph = nx.MultiGraph()
    for link in links:
        graph.add_edge(link.a, link.b, key=link.id)
    for site in (tunnel.src, tunnel.dst):
        found = network.sites.get(site)
        if found is not None and found.kind == SiteKind.EDGE:
            for home in network.endpoint_sites(site):
                graph.add_edge(site, home, key=None)
    if tunnel.src not in graph or tunnel.dst not in graph:
        return []
    paths = []
    for edges in nx.all_simple_edge_paths(graph, tunnel.src, tunnel.dst):
        path = [key for _, _, key in edges if key is not None]
        if sum(latencies[l] for l in path) <= tunnel.latency_bound_ms + LATENCY_EPS:
            paths.append(path)
    return sorted(paths, key=lambda p: (sum(latencies[l] for l in p), p))


def brute_force_routing(network: MultiLayerNetwork, tunnels: Sequence[TeTunnel],
                        links: Iterable[IpLink] = None) -> Tuple[float, Dict[str, List[str]]]:
    """
    Maximum carried demand over every assignment of tunnels to feasible
    simple paths (or to nothing). Exponential; meant for a handful of sites.
    """
    links = list(network.ip_links.values()) if links is None else list(links)
    latencies = {l.id: link_latency_ms(network, l) for l in links}
    residual = {l.id: l.bandwidth for l in links}
    ordered = sorted(tunnels, key=lambda t: (-t.demand, t.id))
    options = [_simple_paths(network, links, t, latencies) for t in ordered]
    remaining = [sum(t.demand for t in ordered[i:]) for i in range(len(ordered))] + [0.0]
    best = [-1.0, {}]

    def search(index: int, carried: float, chosen: Dict[str, List[str]]):
        if carried + remaining[index] <= best[0] + CAPACITY_EPS:
            return
        if index == len(ordered):
            best[0], best[1] = carried, dict(chosen)
            return
        tunnel = ordered[index]
        for path in options[index]:
            if all(residual[l] >= tunnel.demand - CAPACITY_EPS for l in path):
                for l in path:
                    residual[l] -= tunnel.demand
                chosen[tunnel.id] = path
                search(index + 1, carried + tunnel.demand, chosen)
                del chosen[tunnel.id]
                for l in path:
                    residual[l] += tunnel.demand
        search(index + 1, carried, chosen)

    search(0, 0.0, {})
    return max(best[0], 0.0), best[1]


@dataclass(frozen=True)
class FailureScenario:
    """Failed routers are named `site/router-index`; SRLG cuts take down every member span."""
    id: str
    failed_routers: FrozenSet[str] = frozenset()
    cut_spans: FrozenSet[str] = frozenset()
    cut_srlgs: FrozenSet[str] = frozenset()
    failed_equipment: FrozenSet[str] = frozenset()

    def __post_init__(self):
        for name in ('failed_routers', 'cut_spans', 'cut_srlgs', 'failed_equipment'):
            object.__setattr__(self, name, frozenset(getattr(self, name)))

    def cut_span_ids(self, network: MultiLayerNetwork) -> Set[str]:
        return set(self.cut_spans) | {s.id for s in network.fiber_spans.values() if s.srlg in self.cut_srlgs}

    def router_failed(self, site: str, router: int) -> bool:
        return '%s/%d' % (site, router) in self.failed_routers

    def tail_failed(self, network: MultiLayerNetwork, tail_id: str) -> bool:
        tail = network.tails[tail_id]
        return tail_id in self.failed_equipment or self.router_failed(tail.site, tail.router)

    def link_survives(self, network: MultiLayerNetwork, link: IpLink, cut: Set[str] = None) -> bool:
        cut = self.cut_span_ids(network) if cut is None else cut
        return not (cut.intersection(link.optical_path)
                    or any(self.tail_failed(network, t) for t in link.tails)
                    or self.failed_equipment.intersection(link.regens))

    def unknown_references(self, network: MultiLayerNetwork) -> List[str]:
        unknown = [s for s in self.cut_spans if s not in network.fiber_spans]
        srlgs = {s.srlg for s in network.fiber_spans.values()}
        unknown += [g for g in self.cut_srlgs if g not in srlgs]
        unknown += [e for e in self.failed_equipment if e not in network.tails and e not in network.regens]
        for router in self.failed_routers:
            site, _, index = router.partition('/')
            found = network.sites.get(site)
            if found is None or not index.isdigit() or int(index) >= found.routers:
                unknown.append(router)
        return sorted(unknown)

    @classmethod
    def from_dict(cls, data: dict) -> FailureScenario:
        return cls(str(data['id']), frozenset(data.get('failed_routers', ())), frozenset(data.get('cut_spans', ())),
                   frozenset(data.get('cut_srlgs', ())), frozenset(data.get('failed_equipment', ())))


NOMINAL = FailureScenario('nominal')


def surviving_links(network: MultiLayerNetwork, failure: FailureScenario) -> List[IpLink]:
    cut = failure.cut_span_ids(network)
    return [l for l in network.ip_links.values() if failure.link_survives(network, l, cut)]


def compute_frr_bypass(network: MultiLayerNetwork, routing: Routing, protected_link: str,
                       envelope: Dict[str, float] = None) -> List[str]:
    """
    Lowest-latency bypass between the endpoints of `protected_link` that
    shares no SRLG with it and has room at every hop for the protected
    link's envelope load. Loads default to `routing.loads`.
    """
    link = network.ip_links.get(protected_link)
    if link is None:
        raise NetworkException('Unknown IP link %s' % protected_link)
    loads = dict(routing.loads)
    loads.update(envelope or {})
    required = loads.get(link.id, 0.0)
    srlgs = link_srlgs(network, link)
    diverse = [l for l in network.ip_links.values()
               if l.id != link.id and not link_srlgs(network, l) & srlgs]
    if shortest_link_path(latency_graph(network, diverse), link.a, link.b) is None:
        raise NoDiversePath('No SRLG-diverse path protects %s' % link.id)
    residual = {l.id: l.bandwidth - loads.get(l.id, 0.0) for l in diverse}
    found = shortest_link_path(latency_graph(network, diverse, residual, required), link.a, link.b)
    if found is None:
        raise NoCapacity(link.id, required)
    bypass = found[0]
    assert not any(link_srlgs(network, network.ip_links[l]) & srlgs for l in bypass)
    return bypass


def static_envelope(routing: Routing, headroom: float = DEFAULT_HEADROOM) -> Dict[str, float]:
    """Worst case without forecasts: current loads inflated by a fixed headroom."""
    return {link_id: load * headroom for link_id, load in routing.loads.items()}


def forecast_envelope(network: MultiLayerNetwork, tunnel_sets: Iterable[Sequence[TeTunnel]],
                      ordering: Ordering = default_ordering) -> Dict[str, float]:
    """Per-link maximum load over the routings of forecast traffic."""
    envelope: Dict[str, float] = {}
    for tunnels in tunnel_sets:
        for link_id, load in route_tunnels(network, tunnels, ordering).loads.items():
            envelope[link_id] = max(envelope.get(link_id, 0.0), load)
    return envelope


def refresh_frr_bypasses(network: MultiLayerNetwork, routing: Routing,
                         envelope: Dict[str, float]) -> Dict[str, Union[List[str], PlanningException]]:
    """
    Recompute the bypass of every loaded link. Links without a feasible
    bypass map to the error, which tells the caller whether a topology
    change (NoCapacity) can help.
    """
    bypasses: Dict[str, Union[List[str], PlanningException]] = {}
    for link_id in sorted(routing.loads):
        if routing.loads[link_id] <= 0 and envelope.get(link_id, 0.0) <= 0:
            continue
        try:
            bypasses[link_id] = compute_frr_bypass(network, routing, link_id, envelope)
        except PlanningException as err:
            logger.warning('Link %s has no bypass: %s', link_id, err)
            bypasses[link_id] = err
    return bypasses
