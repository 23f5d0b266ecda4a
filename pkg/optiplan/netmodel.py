"""
Multi-layer IP/optical network model: ROADM/fiber graph, core and edge
sites, tails, regenerators, IP links routed over fiber, TE tunnels and
traffic matrices.
"""
from __future__ import annotations
import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx

from optiplan import OptiplanException
from optiplan.utils import NETWORK_SCHEMA, DocumentMaker, SchemaError, document_class, translate_to_object

try:
    from enum import StrEnum
except ImportError:
    class StrEnum(str, Enum):
        pass

logger = logging.getLogger(__name__)

DEFAULT_PROPAGATION_US_PER_KM = 5.0
DEFAULT_ROUTERS_PER_SITE = 2
# bandwidth of one capacity unit (one 100 GE tail) in demand units
UNIT_BANDWIDTH = 100.0


class NetworkException(OptiplanException):
    pass


class NoPath(NetworkException):
    pass


class UnreachableSegment(NetworkException):
    pass


class BrokenChain(NetworkException):
    pass


class ResourceState(StrEnum):
    FREE = 'free'
    IN_USE = 'in-use'


class SiteKind(StrEnum):
    CORE = 'core'
    EDGE = 'edge'


class Severity(StrEnum):
    ERROR = 'error'
    WARNING = 'warning'


@dataclass(frozen=True)
class OpticalNode:
    id: str
    collocated_core_site: Optional[str] = None


@dataclass(frozen=True)
class FiberSpan:
    id: str
    a: str
    b: str
    length_km: float
    srlg: str

    @property
    def endpoints(self) -> Tuple[str, str]:
        return self.a, self.b

    def other_end(self, node: str) -> Optional[str]:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        return None


@dataclass(frozen=True)
class Site:
    """
    IP location. Core sites hold `routers` routers plus spare router ports
    and transponders that DFCC can fuse into new tails; edge sites are homed
    on core sites (a site listed twice means both of its routers).
    """
    id: str
    kind: SiteKind = SiteKind.CORE
    routers: int = DEFAULT_ROUTERS_PER_SITE
    homes: Tuple[str, ...] = ()
    spare_ports: int = 0
    spare_transponders: int = 0


@dataclass
class Tail:
    id: str
    site: str
    capacity_units: int = 1
    router: int = 0
    state: ResourceState = ResourceState.FREE


@dataclass
class Regen:
    id: str
    site: str
    state: ResourceState = ResourceState.FREE


@dataclass
class IpLink:
    id: str
    a: str
    b: str
    capacity: int
    optical_path: List[str]
    tails: Tuple[str, str]
    regens: List[str] = field(default_factory=list)

    @property
    def endpoints(self) -> Tuple[str, str]:
        return self.a, self.b

    @property
    def bandwidth(self) -> float:
        return self.capacity * UNIT_BANDWIDTH

    def other_end(self, site: str) -> Optional[str]:
        if site == self.a:
            return self.b
        if site == self.b:
            return self.a
        return None


@dataclass
class TeTunnel:
    id: str
    src: str
    dst: str
    qos_class: int
    demand: float
    latency_bound_ms: float
    path: Optional[List[str]] = None

    def __post_init__(self):
        if self.src == self.dst:
            raise NetworkException('Tunnel %s has identical endpoints' % self.id)
        if self.demand < 0:
            raise NetworkException('Tunnel %s has negative demand' % self.id)


def tunnel_id(src: str, dst: str, qos_class: int) -> str:
    return '%s:%s:%d' % (src, dst, qos_class)


@dataclass
class TrafficMatrix:
    """
    Demand per (src, dst, class): exactly K·N·(N−1) non-negative entries.
    """
    endpoints: Tuple[str, ...]
    n_classes: int
    entries: Dict[Tuple[str, str, int], float]

    def __post_init__(self):
        self.endpoints = tuple(self.endpoints)
        n = len(self.endpoints)
        expected = self.n_classes * n * (n - 1)
        if len(self.entries) != expected:
            raise NetworkException('Traffic matrix needs %d entries, got %d' % (expected, len(self.entries)))
        for (src, dst, cls), demand in self.entries.items():
            if src == dst or src not in self.endpoints or dst not in self.endpoints \
                    or not 0 <= cls < self.n_classes:
                raise NetworkException('Invalid traffic matrix key %s' % ((src, dst, cls),))
            if demand < 0:
                raise NetworkException('Negative demand for %s' % ((src, dst, cls),))

    @property
    def size(self) -> int:
        return len(self.entries)

    @classmethod
    def uniform(cls, endpoints: Sequence[str], n_classes: int, demand: float) -> TrafficMatrix:
        return cls(tuple(endpoints), n_classes, {
            (s, d, k): demand for s in endpoints for d in endpoints if s != d for k in range(n_classes)})

    def scaled(self, factor: float) -> TrafficMatrix:
        return TrafficMatrix(self.endpoints, self.n_classes,
                             {key: value * factor for key, value in self.entries.items()})

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def tunnels(self, latency_bounds_ms: Sequence[float]) -> List[TeTunnel]:
        return [TeTunnel(tunnel_id(src, dst, cls), src, dst, cls, demand, latency_bounds_ms[cls])
                for (src, dst, cls), demand in sorted(self.entries.items())]

    @classmethod
    def from_document(cls, document: dict) -> TrafficMatrix:
        try:
            entries = {(e['src'], e['dst'], int(e['class'])): float(e['demand']) for e in document['entries']}
            return cls(tuple(document['endpoints']), int(document['n_classes']), entries)
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError('Malformed traffic matrix: %s' % err)

    def to_document(self) -> dict:
        return {
            'endpoints': list(self.endpoints),
            'n_classes': self.n_classes,
            'entries': [{'src': s, 'dst': d, 'class': k, 'demand': v}
                        for (s, d, k), v in sorted(self.entries.items())],
        }


@dataclass(frozen=True)
class Violation:
    subject: str
    message: str
    severity: Severity = Severity.ERROR

    def __str__(self):
        return '%s: %s' % (self.subject, self.message)


@dataclass(frozen=True)
class OpticalRoute:
    nodes: Tuple[str, ...]
    spans: Tuple[str, ...]
    regen_sites: Tuple[str, ...]
    length_km: float

    @property
    def n_regens(self) -> int:
        return len(self.regen_sites)


@document_class(NETWORK_SCHEMA)
@dataclass
class MultiLayerNetwork:
    optical_nodes: Dict[str, OpticalNode]
    fiber_spans: Dict[str, FiberSpan]
    sites: Dict[str, Site]
    tails: Dict[str, Tail]
    regens: Dict[str, Regen]
    ip_links: Dict[str, IpLink]
    system_reach_km: float
    propagation_us_per_km: float = DEFAULT_PROPAGATION_US_PER_KM

    def copy(self) -> MultiLayerNetwork:
        return copy.deepcopy(self)

    def core_sites(self) -> List[str]:
        return sorted(s.id for s in self.sites.values() if s.kind == SiteKind.CORE)

    def node_of_site(self, site: str) -> str:
        for node in self.optical_nodes.values():
            if node.collocated_core_site == site:
                return node.id
        raise NetworkException('Site %s has no collocated optical node' % site)

    def endpoint_sites(self, site: str) -> List[str]:
        """Core sites through which traffic of `site` enters the IP core."""
        found = self.sites.get(site)
        if found is None:
            raise NetworkException('Unknown site %s' % site)
        if found.kind == SiteKind.CORE:
            return [site]
        return sorted(set(found.homes))

    def free_tails(self, site: str = None) -> List[Tail]:
        return sorted((t for t in self.tails.values()
                       if t.state == ResourceState.FREE and (site is None or t.site == site)),
                      key=lambda t: t.id)

    def free_regens(self, site: str = None) -> List[Regen]:
        return sorted((r for r in self.regens.values()
                       if r.state == ResourceState.FREE and (site is None or r.site == site)),
                      key=lambda r: r.id)

    def links_between(self, a: str, b: str) -> List[IpLink]:
        return sorted((l for l in self.ip_links.values() if {l.a, l.b} == {a, b}), key=lambda l: l.id)

    @classmethod
    def from_document(cls, document: dict) -> MultiLayerNetwork:
        def unique(items, kind):
            result = {}
            for item in items:
                if item.id in result:
                    raise SchemaError('Duplicate %s id %s' % (kind, item.id))
                result[item.id] = item
            return result

        try:
            return cls(
                optical_nodes=unique((OpticalNode(n['id'], n.get('collocated_core_site'))
                                      for n in document.get('optical_nodes', [])), 'optical node'),
                fiber_spans=unique((FiberSpan(s['id'], s['endpoints'][0], s['endpoints'][1],
                                              float(s['length_km']), str(s.get('srlg', s['id'])))
                                    for s in document.get('fiber_spans', [])), 'fiber span'),
                sites=unique((Site(s['id'], SiteKind(s.get('kind', 'core')),
                                   int(s.get('routers', DEFAULT_ROUTERS_PER_SITE)),
                                   tuple(s.get('homes', ())),
                                   int(s.get('spare_ports', 0)), int(s.get('spare_transponders', 0)))
                              for s in document.get('sites', [])), 'site'),
                tails=unique((Tail(t['id'], t['site'], int(t.get('capacity_units', 1)), int(t.get('router', 0)),
                                   ResourceState(t.get('state', 'free')))
                              for t in document.get('tails', [])), 'tail'),
                regens=unique((Regen(r['id'], r['site'], ResourceState(r.get('state', 'free')))
                               for r in document.get('regens', [])), 'regen'),
                ip_links=unique((IpLink(l['id'], l['endpoints'][0], l['endpoints'][1], int(l['capacity']),
                                        list(l['optical_path']), tuple(l['tails']), list(l.get('regens', [])))
                                 for l in document.get('ip_links', [])), 'IP link'),
                system_reach_km=float(document['system_reach_km']),
                propagation_us_per_km=float(document.get('propagation_us_per_km',
                                                         DEFAULT_PROPAGATION_US_PER_KM)),
            )
        except (KeyError, IndexError, TypeError, ValueError) as err:
            raise SchemaError('Malformed network document: %s' % err)

    def to_document(self) -> dict:
        return {
            'schema': NETWORK_SCHEMA,
            'system_reach_km': self.system_reach_km,
            'propagation_us_per_km': self.propagation_us_per_km,
            'optical_nodes': [{'id': n.id, 'collocated_core_site': n.collocated_core_site}
                              for n in self.optical_nodes.values()],
            'fiber_spans': [{'id': s.id, 'endpoints': [s.a, s.b], 'length_km': s.length_km, 'srlg': s.srlg}
                            for s in self.fiber_spans.values()],
            'sites': [{'id': s.id, 'kind': s.kind.value, 'routers': s.routers, 'homes': list(s.homes),
                       'spare_ports': s.spare_ports, 'spare_transponders': s.spare_transponders}
                      for s in self.sites.values()],
            'tails': [{'id': t.id, 'site': t.site, 'capacity_units': t.capacity_units, 'router': t.router,
                       'state': t.state.value} for t in self.tails.values()],
            'regens': [{'id': r.id, 'site': r.site, 'state': r.state.value} for r in self.regens.values()],
            'ip_links': [{'id': l.id, 'endpoints': [l.a, l.b], 'capacity': l.capacity,
                          'optical_path': list(l.optical_path), 'tails': list(l.tails), 'regens': list(l.regens)}
                         for l in self.ip_links.values()],
        }


def walk_nodes(network: MultiLayerNetwork, start: str, spans: Sequence[str]) -> Optional[List[str]]:
    """Nodes visited when following `spans` from `start`, or None if they do not chain."""
    nodes = [start]
    for span_id in spans:
        span = network.fiber_spans.get(span_id)
        nxt = span.other_end(nodes[-1]) if span else None
        if nxt is None:
            return None
        nodes.append(nxt)
    return nodes


def link_length_km(network: MultiLayerNetwork, link: IpLink) -> float:
    return sum(network.fiber_spans[s].length_km for s in link.optical_path)


def link_latency_ms(network: MultiLayerNetwork, link: IpLink) -> float:
    return link_length_km(network, link) * network.propagation_us_per_km / 1000.0


def link_srlgs(network: MultiLayerNetwork, link: IpLink) -> FrozenSet[str]:
    return frozenset(network.fiber_spans[s].srlg for s in link.optical_path)


def segment_lengths(network: MultiLayerNetwork, nodes: Sequence[str], spans: Sequence[str],
                    regen_sites: Iterable[str]) -> List[float]:
    """Lengths between consecutive regeneration points (and the path ends)."""
    regen_sites = set(regen_sites)
    segments, acc = [], 0.0
    for node, span_id in zip(nodes[:-1], spans):
        if node in regen_sites and acc > 0:
            segments.append(acc)
            acc = 0.0
        acc += network.fiber_spans[span_id].length_km
    segments.append(acc)
    return segments


def optical_graph(network: MultiLayerNetwork, cut_spans: Iterable[str] = ()) -> nx.Graph:
    cut = set(cut_spans)
    graph = nx.Graph()
    graph.add_nodes_from(sorted(network.optical_nodes))
    for span in sorted(network.fiber_spans.values(), key=lambda s: s.id):
        if span.id in cut:
            continue
        existing = graph.get_edge_data(span.a, span.b)
        if existing is None or existing['length_km'] > span.length_km:
            graph.add_edge(span.a, span.b, length_km=span.length_km, span=span.id)
    return graph


def place_regens(network: MultiLayerNetwork, nodes: Sequence[str], spans: Sequence[str]) -> List[str]:
    """
    Greedy-farthest placement: walk the path accumulating km and regenerate at
    the last node before the accumulator would exceed the system reach.
    """
    reach = network.system_reach_km
    regen_sites, acc = [], 0.0
    for i, span_id in enumerate(spans):
        length = network.fiber_spans[span_id].length_km
        if length > reach:
            raise UnreachableSegment('Span %s (%.1f km) exceeds the system reach %.1f km'
                                     % (span_id, length, reach))
        if acc + length > reach:
            regen_sites.append(nodes[i])
            acc = 0.0
        acc += length
    return regen_sites


def _route_from_nodes(network: MultiLayerNetwork, graph: nx.Graph, nodes: List[str]) -> OpticalRoute:
    spans = [graph.edges[u, v]['span'] for u, v in zip(nodes[:-1], nodes[1:])]
    length = sum(network.fiber_spans[s].length_km for s in spans)
    return OpticalRoute(tuple(nodes), tuple(spans), tuple(place_regens(network, nodes, spans)), length)


def optical_route(network: MultiLayerNetwork, src_node: str, dst_node: str,
                  cut_spans: Iterable[str] = ()) -> OpticalRoute:
    """
    Shortest fiber route (by km) between two ROADMs with regenerators placed
    greedily so that no segment exceeds the system reach.
    """
    for node in (src_node, dst_node):
        if node not in network.optical_nodes:
            raise NetworkException('Unknown optical node %s' % node)
    graph = optical_graph(network, cut_spans)
    try:
        nodes = nx.shortest_path(graph, src_node, dst_node, weight='length_km')
    except nx.NetworkXNoPath:
        raise NoPath('No fiber path from %s to %s' % (src_node, dst_node))
    return _route_from_nodes(network, graph, nodes)


def k_shortest_optical_paths(network: MultiLayerNetwork, src_node: str, dst_node: str, k: int,
                             cut_spans: Iterable[str] = ()) -> List[OpticalRoute]:
    graph = optical_graph(network, cut_spans)
    routes = []
    try:
        for nodes in nx.shortest_simple_paths(graph, src_node, dst_node, weight='length_km'):
            try:
                routes.append(_route_from_nodes(network, graph, nodes))
            except UnreachableSegment as err:
                logger.debug('Skipping candidate path: %s', err)
            if len(routes) >= k:
                break
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        pass
    if not routes:
        raise NoPath('No fiber path from %s to %s' % (src_node, dst_node))
    return routes


def path_latency(network: MultiLayerNetwork, ip_links: Sequence[Union[str, IpLink]]) -> float:
    """Propagation latency in milliseconds of a chain of IP links."""
    links = [network.ip_links[l] if isinstance(l, str) else l for l in ip_links]
    if len(links) > 1:
        shared = set(links[0].endpoints) & set(links[1].endpoints)
        if not shared:
            raise BrokenChain('Links %s and %s do not share an endpoint' % (links[0].id, links[1].id))
        current = sorted(shared)[0]
        for link in links[1:]:
            nxt = link.other_end(current)
            if nxt is None:
                raise BrokenChain('Link %s does not continue the chain at %s' % (link.id, current))
            current = nxt
    return sum(link_latency_ms(network, link) for link in links)


def _validate_link(network: MultiLayerNetwork, link: IpLink) -> List[Violation]:
    violations = []
    for site in link.endpoints:
        found = network.sites.get(site)
        if found is None or found.kind != SiteKind.CORE:
            violations.append(Violation(link.id, 'endpoint %s is not a core site' % site))
    if link.a == link.b:
        violations.append(Violation(link.id, 'endpoints are identical'))
    if link.capacity <= 0:
        violations.append(Violation(link.id, 'capacity must be positive'))
    tails = [network.tails.get(t) for t in link.tails]
    if len(link.tails) != 2 or None in tails:
        violations.append(Violation(link.id, 'needs two existing tails'))
    else:
        if sorted(t.site for t in tails) != sorted(link.endpoints):
            violations.append(Violation(link.id, 'tails are not located at the link endpoints'))
        if min(t.capacity_units for t in tails) < link.capacity:
            violations.append(Violation(link.id, 'capacity exceeds its tails'))
        for tail in tails:
            if tail.state != ResourceState.IN_USE:
                violations.append(Violation(link.id, 'tail %s is not marked in-use' % tail.id))
    for regen_id in link.regens:
        regen = network.regens.get(regen_id)
        if regen is None:
            violations.append(Violation(link.id, 'unknown regen %s' % regen_id))
        elif regen.state != ResourceState.IN_USE:
            violations.append(Violation(link.id, 'regen %s is not marked in-use' % regen_id))
    if violations:
        return violations
    try:
        start, end = network.node_of_site(link.a), network.node_of_site(link.b)
    except NetworkException as err:
        return [Violation(link.id, str(err))]
    nodes = walk_nodes(network, start, link.optical_path)
    if nodes is None or nodes[-1] != end:
        return [Violation(link.id, 'optical path does not connect %s and %s' % (start, end))]
    regen_sites = [network.regens[r].site for r in link.regens]
    off_path = [s for s in regen_sites if s not in nodes[1:-1]]
    if off_path:
        violations.append(Violation(link.id, 'regens at %s are not on the optical path' % ', '.join(off_path)))
    for length in segment_lengths(network, nodes, link.optical_path, regen_sites):
        if length > network.system_reach_km:
            violations.append(Violation(link.id, 'segment of %.1f km exceeds the system reach %.1f km'
                                        % (length, network.system_reach_km)))
    return violations


def validate(network: MultiLayerNetwork) -> List[Violation]:
    """All invariant violations of `network`; empty iff the network is well-formed."""
    violations: List[Violation] = []
    if network.system_reach_km <= 0:
        violations.append(Violation('network', 'system reach must be positive'))
    if network.propagation_us_per_km <= 0:
        violations.append(Violation('network', 'propagation delay must be positive'))
    for node in network.optical_nodes.values():
        site = network.sites.get(node.collocated_core_site) if node.collocated_core_site else None
        if node.collocated_core_site and (site is None or site.kind != SiteKind.CORE):
            violations.append(Violation(node.id, 'collocated site %s is not a core site' % node.collocated_core_site))
    for span in network.fiber_spans.values():
        if span.length_km <= 0:
            violations.append(Violation(span.id, 'length must be positive'))
        if span.a == span.b:
            violations.append(Violation(span.id, 'endpoints are identical'))
        for node in span.endpoints:
            if node not in network.optical_nodes:
                violations.append(Violation(span.id, 'unknown optical node %s' % node))
    for site in network.sites.values():
        if site.kind == SiteKind.CORE and site.routers < 1:
            violations.append(Violation(site.id, 'core site needs at least one router'))
        if site.kind == SiteKind.EDGE:
            homes = [h for h in site.homes if h in network.sites and network.sites[h].kind == SiteKind.CORE]
            if len(homes) < 2:
                violations.append(Violation(site.id, 'edge site should attach to two core routers',
                                            Severity.WARNING))
    for tail in network.tails.values():
        site = network.sites.get(tail.site)
        if site is None:
            violations.append(Violation(tail.id, 'unknown site %s' % tail.site))
        elif not 0 <= tail.router < site.routers:
            violations.append(Violation(tail.id, 'router %d does not exist at %s' % (tail.router, tail.site)))
        if tail.capacity_units <= 0:
            violations.append(Violation(tail.id, 'capacity must be positive'))
    for regen in network.regens.values():
        if regen.site not in network.optical_nodes:
            violations.append(Violation(regen.id, 'site %s is not an optical node' % regen.site))

    tail_users: Dict[str, List[str]] = {}
    regen_users: Dict[str, List[str]] = {}
    for link in network.ip_links.values():
        violations.extend(_validate_link(network, link))
        for tail_id in link.tails:
            tail_users.setdefault(tail_id, []).append(link.id)
        for regen_id in link.regens:
            regen_users.setdefault(regen_id, []).append(link.id)
    for tail_id, users in sorted(tail_users.items()):
        if len(users) > 1:
            violations.append(Violation(tail_id, 'tail used by several links: %s' % ', '.join(users)))
    for regen_id, users in sorted(regen_users.items()):
        if len(users) > 1:
            violations.append(Violation(regen_id, 'regen used by several links: %s' % ', '.join(users)))
    for tail in network.tails.values():
        if tail.state == ResourceState.IN_USE and tail.id not in tail_users:
            violations.append(Violation(tail.id, 'in-use tail is not referenced by any link'))
    for regen in network.regens.values():
        if regen.state == ResourceState.IN_USE and regen.id not in regen_users:
            violations.append(Violation(regen.id, 'in-use regen is not referenced by any link'))
    return violations


def load_network(path) -> MultiLayerNetwork:
    return translate_to_object(path, NETWORK_SCHEMA)


def dump_network(network: MultiLayerNetwork) -> DocumentMaker:
    document = network.to_document()
    document.pop('schema')
    return DocumentMaker(NETWORK_SCHEMA).add(document)
