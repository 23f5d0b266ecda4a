"""
Scenario-based capacity planning.

Every (failure × traffic) scenario is served in turn, in several random
scenario orders. When the current inventory cannot carry a scenario, the
cheapest resources that make it routable are bought and kept; the order
with the lowest final cost wins. The four modes grant increasing freedom:

1. fixed IP↔optical mapping, traffic = base × uncertainty factor
2. fixed mapping, traffic = forecast surge matrices
3. fixed IP link set whose tails and regens are pooled per site and may be
   re-routed over surviving fiber and resized per scenario
4. any site pair may be linked, and DFCC recovers the transponders of
   failed routers onto spare ports

A plan found under one mode is also valid under every later mode, so each
mode keeps the previous mode's plan when its own search does worse. Failures
are admitted one at a time, each step buying on top of the last, so a
longer failure list never plans cheaper.
"""
from __future__ import annotations
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import pandas as pd

from optiplan.mlopt import InfeasibleScenario, PlanningException
from optiplan.mlopt.routing import (LATENCY_EPS, NOMINAL, FailureScenario, Ordering, QosClass, default_ordering,
                                    route_tunnels, shortest_link_path, surviving_links, tunnels_for)
from optiplan.netmodel import (UNIT_BANDWIDTH, IpLink, MultiLayerNetwork, NetworkException, Regen, ResourceState,
                               SiteKind, Tail, TeTunnel, TrafficMatrix, link_length_km, link_latency_ms,
                               optical_route, place_regens, walk_nodes)
from optiplan.numcore import derive_seed
from optiplan.runner import make_runner
from optiplan.utils import PLAN_SCHEMA, SCENARIO_SCHEMA, DocumentMaker, SchemaError, document_class

logger = logging.getLogger(__name__)

MODES = (1, 2, 3, 4)
DEFAULT_UNCERTAINTY_FACTOR = 1.3
DEFAULT_ORDERINGS = 10
# weight of one unit of purchase cost against one millisecond of latency
PURCHASE_WEIGHT = 1e6
MAX_ROUNDS = 1000
CAPACITY_EPS = 1e-9
TABLE_COLUMNS = ['mode', 'tails', 'regens', 'cost', 'delta_pct_vs_mode1']


@dataclass(frozen=True)
class CostModel:
    """Costs in units of one 100 GE tail; a 100 GE regen costs `regen_cost_ratio` of that."""
    tail_unit_cost: float = 1.0
    regen_cost_ratio: float = 0.4

    def __post_init__(self):
        if self.tail_unit_cost <= 0 or self.regen_cost_ratio <= 0:
            raise PlanningException('Cost model needs positive costs')

    @property
    def regen_unit_cost(self) -> float:
        return self.regen_cost_ratio * self.tail_unit_cost

    def cost(self, tails: float, regens: float) -> float:
        if tails < 0 or regens < 0:
            raise ValueError('Resource counts must be non-negative')
        return tails * self.tail_unit_cost + regens * self.regen_unit_cost


DEFAULT_COST_MODEL = CostModel()


def cost(tails: float, regens: float, cost_model: CostModel = DEFAULT_COST_MODEL) -> float:
    return cost_model.cost(tails, regens)


@dataclass(frozen=True)
class SurgeScenario:
    id: str
    traffic: TrafficMatrix


@document_class(SCENARIO_SCHEMA)
@dataclass(frozen=True)
class ScenarioSet:
    base_traffic: TrafficMatrix
    qos_classes: Tuple[QosClass, ...]
    failures: Tuple[FailureScenario, ...] = ()
    surges: Tuple[SurgeScenario, ...] = ()

    def unknown_references(self, network: MultiLayerNetwork) -> List[str]:
        unknown = []
        for failure in self.failures:
            unknown += ['%s: %s' % (failure.id, ref) for ref in failure.unknown_references(network)]
        for matrix in [self.base_traffic] + [s.traffic for s in self.surges]:
            unknown += ['traffic endpoint %s' % site for site in matrix.endpoints if site not in network.sites]
        return sorted(set(unknown))

    def with_failure(self, failure: FailureScenario) -> ScenarioSet:
        return replace(self, failures=self.failures + (failure,))

    @classmethod
    def from_document(cls, document: dict) -> ScenarioSet:
        try:
            return cls(
                base_traffic=TrafficMatrix.from_document(document['base_traffic']),
                qos_classes=tuple(QosClass.from_dict(c) for c in document['qos_classes']),
                failures=tuple(FailureScenario.from_dict(f) for f in document.get('failures', ())),
                surges=tuple(SurgeScenario(str(s['id']), TrafficMatrix.from_document(s['traffic']))
                             for s in document.get('surges', ())),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError('Malformed scenario document: %s' % err)

    def to_document(self) -> DocumentMaker:
        return DocumentMaker(SCENARIO_SCHEMA).add({
            'base_traffic': self.base_traffic.to_document(),
            'qos_classes': list(self.qos_classes),
            'failures': [{'id': f.id, 'failed_routers': f.failed_routers, 'cut_spans': f.cut_spans,
                          'cut_srlgs': f.cut_srlgs, 'failed_equipment': f.failed_equipment}
                         for f in self.failures],
            'surges': [{'id': s.id, 'traffic': s.traffic.to_document()} for s in self.surges],
        })


@dataclass(frozen=True)
class PlannerConfig:
    n_orderings: int = DEFAULT_ORDERINGS
    uncertainty_factor: float = DEFAULT_UNCERTAINTY_FACTOR
    cost_model: CostModel = DEFAULT_COST_MODEL
    n_workers: int = 1

    def __post_init__(self):
        if self.n_orderings < 1:
            raise PlanningException('Need at least one scenario ordering')
        if self.uncertainty_factor <= 0:
            raise PlanningException('Uncertainty factor must be positive')


@dataclass
class PlanResult:
    mode: int
    tails: int
    regens: int
    cost: float
    scenarios: Dict[str, str]
    ordering_index: int
    added_tails: int = 0
    added_regens: int = 0
    inherited_from: Optional[int] = None
    network: Optional[MultiLayerNetwork] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {'mode': self.mode, 'tails': self.tails, 'regens': self.regens, 'cost': self.cost,
                'added_tails': self.added_tails, 'added_regens': self.added_regens,
                'ordering_index': self.ordering_index, 'inherited_from': self.inherited_from,
                'scenarios': dict(sorted(self.scenarios.items()))}


@dataclass(frozen=True)
class Scenario:
    id: str
    failure: FailureScenario
    tunnels: Tuple[TeTunnel, ...]


def inventory(network: MultiLayerNetwork) -> Tuple[int, int]:
    """(tail units, regens) owned, in use or free."""
    return sum(t.capacity_units for t in network.tails.values()), len(network.regens)


def scenarios_for_mode(scenario_set: ScenarioSet, mode: int,
                       uncertainty_factor: float = DEFAULT_UNCERTAINTY_FACTOR) -> List[Scenario]:
    if mode == 1:
        traffic = [('uncertainty', scenario_set.base_traffic.scaled(uncertainty_factor))]
    else:
        traffic = [(s.id, s.traffic) for s in scenario_set.surges] or [('base', scenario_set.base_traffic)]
    return [Scenario('%s+%s' % (failure.id, traffic_id), failure,
                     tuple(tunnels_for(matrix, scenario_set.qos_classes)))
            for failure in (NOMINAL,) + tuple(scenario_set.failures)
            for traffic_id, matrix in traffic]


def _next_id(existing, prefix: str) -> str:
    index = len(existing) + 1
    while '%s%d' % (prefix, index) in existing:
        index += 1
    return '%s%d' % (prefix, index)


def _units_needed(demand: float, residual: float) -> int:
    shortfall = demand - residual
    if shortfall <= CAPACITY_EPS:
        return 0
    return int(math.ceil(shortfall / UNIT_BANDWIDTH - CAPACITY_EPS))


def _add_access(graph: nx.Graph, network: MultiLayerNetwork, site: str):
    found = network.sites.get(site)
    if found is not None and found.kind == SiteKind.EDGE:
        for home in network.endpoint_sites(site):
            graph.add_edge(site, home, weight=0.0, latency=0.0, link=None, units=0)


def _cheapest_path(graph: nx.Graph, network: MultiLayerNetwork, tunnel: TeTunnel,
                   scenario_id: str) -> List[dict]:
    """
    Edges of the cheapest augmenting path for `tunnel` within its latency
    bound; falls back to the lowest-latency path when the cheapest one is
    too slow.
    """
    _add_access(graph, network, tunnel.src)
    _add_access(graph, network, tunnel.dst)
    for weight in ('weight', 'latency'):
        try:
            nodes = nx.shortest_path(graph, tunnel.src, tunnel.dst, weight=weight)
        except (nx.NetworkXNoPath, nx.NodeNotFound):
            raise InfeasibleScenario(scenario_id, 'no path for tunnel %s' % tunnel.id)
        edges = [graph.edges[u, v] for u, v in zip(nodes[:-1], nodes[1:])]
        if sum(e['latency'] for e in edges) <= tunnel.latency_bound_ms + LATENCY_EPS:
            return [e for e in edges if e['link'] is not None]
    raise InfeasibleScenario(scenario_id, 'latency bound of tunnel %s cannot be met' % tunnel.id)


class FixedMappingSolver:
    """Modes 1 and 2: links keep their optical paths; capacity grows by whole wavelengths."""

    def __init__(self, cost_model: CostModel, ordering: Ordering = default_ordering):
        self.cost_model = cost_model
        self.ordering = ordering

    def unit_cost(self, link: IpLink) -> float:
        return 2 * self.cost_model.tail_unit_cost + self.cost_model.regen_unit_cost * len(self.regen_sites(link))

    def regen_sites(self, link: IpLink) -> List[str]:
        return list(dict.fromkeys(self._network.regens[r].site for r in link.regens))

    def add_units(self, link: IpLink, units: int):
        link.capacity += units
        for tail_id in link.tails:
            self._network.tails[tail_id].capacity_units += units
        for site in self.regen_sites(link):
            for _ in range(units):
                regen = Regen(_next_id(self._network.regens, 'R+'), site, ResourceState.IN_USE)
                self._network.regens[regen.id] = regen
                link.regens.append(regen.id)

    def _graph(self, links: Sequence[IpLink], residual: Dict[str, float], demand: float) -> nx.Graph:
        graph = nx.Graph()
        for link in sorted(links, key=lambda l: l.id):
            units = _units_needed(demand, residual[link.id])
            latency = link_latency_ms(self._network, link)
            weight = units * self.unit_cost(link) * PURCHASE_WEIGHT + latency
            existing = graph.get_edge_data(link.a, link.b)
            if existing is None or existing['weight'] > weight:
                graph.add_edge(link.a, link.b, weight=weight, latency=latency, link=link.id, units=units)
        return graph

    def serve(self, network: MultiLayerNetwork, scenario: Scenario) -> bool:
        """Make `scenario` routable on `network` (mutated); True if anything was bought."""
        self._network = network
        augmented = False
        by_id = {t.id: t for t in scenario.tunnels}
        for _ in range(MAX_ROUNDS):
            links = surviving_links(network, scenario.failure)
            routing = route_tunnels(network, scenario.tunnels, self.ordering, links)
            if routing.feasible:
                return augmented
            augmented = True
            residual = {l.id: l.bandwidth - routing.loads[l.id] for l in links}
            for tunnel in self.ordering([by_id[t] for t in routing.unrouted]):
                for edge in _cheapest_path(self._graph(links, residual, tunnel.demand), network, tunnel,
                                           scenario.id):
                    link = network.ip_links[edge['link']]
                    units = _units_needed(tunnel.demand, residual[link.id])
                    if units:
                        self.add_units(link, units)
                    residual[link.id] += units * UNIT_BANDWIDTH - tunnel.demand
        raise PlanningException('Scenario %s did not converge in %d rounds' % (scenario.id, MAX_ROUNDS))


@dataclass
class PooledEdge:
    a: str
    b: str
    regen_sites: Tuple[str, ...]
    latency: float
    allocated: int = 0
    load: float = 0.0

    @property
    def residual(self) -> float:
        return self.allocated * UNIT_BANDWIDTH - self.load


class PooledSolver:
    """
    Modes 3 and 4: per scenario, every surviving tail and regen is a free
    resource of its site, and link capacity is assigned from those pools
    along routes over surviving fiber.
    """

    def __init__(self, mode: int, cost_model: CostModel, ordering: Ordering = default_ordering):
        self.mode = mode
        self.cost_model = cost_model
        self.ordering = ordering

    def _pair_route(self, network: MultiLayerNetwork, a: str, b: str, cut) -> Optional[Tuple[float, Tuple[str, ...]]]:
        """(km, regen sites) of the pair's surviving original path, else of a fresh route."""
        best = None
        for link in network.links_between(a, b):
            if cut.intersection(link.optical_path):
                continue
            nodes = walk_nodes(network, network.node_of_site(link.a), link.optical_path)
            sites = tuple(dict.fromkeys(network.regens[r].site for r in link.regens)) if link.regens \
                else tuple(place_regens(network, nodes, link.optical_path))
            candidate = (link_length_km(network, link), sites)
            if best is None or candidate[0] < best[0]:
                best = candidate
        if best is not None:
            return best
        try:
            route = optical_route(network, network.node_of_site(a), network.node_of_site(b), cut)
        except NetworkException as err:
            logger.debug('Pair %s-%s has no surviving route: %s', a, b, err)
            return None
        return route.length_km, route.regen_sites

    def edges(self, network: MultiLayerNetwork, failure: FailureScenario) -> Dict[Tuple[str, str], PooledEdge]:
        cut = failure.cut_span_ids(network)
        pairs = {tuple(sorted(l.endpoints)) for l in network.ip_links.values()}
        if self.mode >= 4:
            pairs |= set(combinations(network.core_sites(), 2))
        edges = {}
        for a, b in sorted(pairs):
            found = self._pair_route(network, a, b, cut)
            if found is not None:
                km, sites = found
                edges[(a, b)] = PooledEdge(a, b, sites, km * network.propagation_us_per_km / 1000.0)
        return edges

    def pools(self, network: MultiLayerNetwork, failure: FailureScenario) -> Tuple[Dict[str, int], Dict[str, int]]:
        tails: Dict[str, int] = defaultdict(int)
        stranded: Dict[str, int] = defaultdict(int)
        for tail in network.tails.values():
            if tail.id in failure.failed_equipment:
                continue
            if failure.router_failed(tail.site, tail.router):
                stranded[tail.site] += tail.capacity_units
            else:
                tails[tail.site] += tail.capacity_units
        if self.mode >= 4:
            for site, units in stranded.items():
                found = network.sites[site]
                if any(not failure.router_failed(site, r) for r in range(found.routers)):
                    tails[site] += min(units, found.spare_ports)
        regens: Dict[str, int] = defaultdict(int)
        for regen in network.regens.values():
            if regen.id not in failure.failed_equipment:
                regens[regen.site] += 1
        return tails, regens

    def _purchase_cost(self, edge: PooledEdge, units: int) -> float:
        tails = sum(max(0, units - self._tails[site]) for site in (edge.a, edge.b))
        regens = sum(max(0, units - self._regens[site]) for site in edge.regen_sites)
        return self.cost_model.cost(tails, regens)

    def _graph(self, demand: float, augment: bool) -> nx.Graph:
        graph = nx.Graph()
        for pair, edge in self._edges.items():
            units = _units_needed(demand, edge.residual)
            if units and not augment:
                continue
            weight = self._purchase_cost(edge, units) * PURCHASE_WEIGHT + edge.latency
            graph.add_edge(edge.a, edge.b, weight=weight, latency=edge.latency, link=pair, units=units)
        return graph

    def _allocate(self, network: MultiLayerNetwork, failure: FailureScenario, edge: PooledEdge, units: int) -> bool:
        bought = False
        for site in (edge.a, edge.b):
            short = units - min(units, self._tails[site])
            self._tails[site] -= units - short
            if short:
                found = network.sites[site]
                router = next((r for r in range(found.routers) if not failure.router_failed(site, r)), 0)
                tail = Tail(_next_id(network.tails, '%s+' % site), site, short, router, ResourceState.FREE)
                network.tails[tail.id] = tail
                bought = True
        for site in edge.regen_sites:
            short = units - min(units, self._regens[site])
            self._regens[site] -= units - short
            for _ in range(short):
                regen = Regen(_next_id(network.regens, 'R+'), site, ResourceState.FREE)
                network.regens[regen.id] = regen
                bought = True
        edge.allocated += units
        return bought

    def serve(self, network: MultiLayerNetwork, scenario: Scenario) -> bool:
        self._edges = self.edges(network, scenario.failure)
        self._tails, self._regens = self.pools(network, scenario.failure)
        bought = False
        for tunnel in self.ordering(scenario.tunnels):
            graph = self._graph(tunnel.demand, augment=False)
            _add_access(graph, network, tunnel.src)
            _add_access(graph, network, tunnel.dst)
            found = shortest_link_path(graph, tunnel.src, tunnel.dst)
            if found is not None and found[1] <= tunnel.latency_bound_ms + LATENCY_EPS:
                path = [self._edges[pair] for pair in found[0]]
            else:
                path = []
                for data in _cheapest_path(self._graph(tunnel.demand, augment=True), network, tunnel, scenario.id):
                    edge = self._edges[data['link']]
                    units = _units_needed(tunnel.demand, edge.residual)
                    if units:
                        bought |= self._allocate(network, scenario.failure, edge, units)
                    path.append(edge)
            for edge in path:
                edge.load += tunnel.demand
        return bought


def _solver(mode: int, config: PlannerConfig):
    if mode <= 2:
        return FixedMappingSolver(config.cost_model)
    return PooledSolver(mode, config.cost_model)


def _plan_ordering(network: MultiLayerNetwork, scenarios: Sequence[Scenario], mode: int, config: PlannerConfig,
                   seed: int, index: int) -> Tuple[MultiLayerNetwork, Dict[str, str]]:
    work = network.copy()
    solver = _solver(mode, config)
    record = {}
    for scenario in sorted(scenarios, key=lambda s: (derive_seed(seed, index, s.id), s.id)):
        record[scenario.id] = 'augmented' if solver.serve(work, scenario) else 'feasible'
    return work, record


def _result(mode: int, network: MultiLayerNetwork, base: MultiLayerNetwork, record: Dict[str, str], index: int,
            cost_model: CostModel) -> PlanResult:
    tails, regens = inventory(network)
    base_tails, base_regens = inventory(base)
    return PlanResult(mode, tails, regens, cost_model.cost(tails, regens), record, index,
                      tails - base_tails, regens - base_regens, network=network)


def plan_mode(network: MultiLayerNetwork, scenarios: Sequence[Scenario], mode: int, config: PlannerConfig,
              seed: int, start: Optional[MultiLayerNetwork] = None) -> PlanResult:
    """
    Best of `config.n_orderings` scenario orders under one mode; ties go to
    the lower ordering index. Purchases are made on top of `start` when
    given; added resources are always counted against `network`.
    """
    origin = start if start is not None else network
    with make_runner(config.n_workers) as runner:
        outcomes = runner.map(lambda i: _plan_ordering(origin, scenarios, mode, config, seed, i),
                              list(range(config.n_orderings)))
    results = [_result(mode, work, network, record, i, config.cost_model) for i, (work, record) in enumerate(outcomes)]
    best = min(results, key=lambda r: (r.cost, r.ordering_index))
    logger.info('Mode %d: %d tails, %d regens, cost %.1f (ordering %d)',
                mode, best.tails, best.regens, best.cost, best.ordering_index)
    return best


def _carries(previous: PlanResult, scenarios: Sequence[Scenario], mode: int) -> bool:
    if mode >= 3:
        return True
    return all(route_tunnels(previous.network, s.tunnels, default_ordering,
                             surviving_links(previous.network, s.failure)).feasible for s in scenarios)


def _ladder_step(network: MultiLayerNetwork, scenario_set: ScenarioSet, top_mode: int, config: PlannerConfig,
                 seed: int, prior: Dict[int, Optional[PlanResult]]
                 ) -> Tuple[Dict[int, Optional[PlanResult]], Dict[int, PlanningException]]:
    """
    One rung per mode up to `top_mode`. Each mode buys on top of its plan in
    `prior` and only adopts the previous mode's plan when that one costs at
    least as much as `prior`.
    """
    results: Dict[int, Optional[PlanResult]] = {}
    errors: Dict[int, PlanningException] = {}
    previous: Optional[PlanResult] = None
    for mode in range(1, top_mode + 1):
        scenarios = scenarios_for_mode(scenario_set, mode, config.uncertainty_factor)
        floor = prior.get(mode)
        try:
            own = plan_mode(network, scenarios, mode, config, seed,
                            start=floor.network if floor is not None else None)
        except InfeasibleScenario as err:
            logger.warning('Mode %d: %s', mode, err)
            own, errors[mode] = None, err
        least = floor.cost if floor is not None else 0.0
        if previous is not None and least <= previous.cost and (own is None or previous.cost < own.cost) \
                and _carries(previous, scenarios, mode):
            own = replace(previous, mode=mode, inherited_from=previous.inherited_from or previous.mode)
            logger.info('Mode %d keeps the mode %d plan', mode, own.inherited_from)
        results[mode] = own
        previous = own
    return results, errors


def plan_ladder(network: MultiLayerNetwork, scenario_set: ScenarioSet, modes: Iterable[int] = MODES,
                config: PlannerConfig = PlannerConfig(), seed: int = 0) -> Dict[int, PlanResult]:
    """
    Plans for `modes`. Lower modes are always planned too, since each mode
    falls back to the previous mode's plan when that one is cheaper and
    still carries its scenarios.

    Failures are admitted one at a time in their listed order, each step
    buying on top of the plans of the step before. Appending a failure to
    the set therefore never lowers the cost of any mode.
    """
    modes = sorted(set(modes))
    if not modes or any(m not in MODES for m in modes):
        raise ValueError('Modes must be drawn from %s' % (MODES,))
    unknown = scenario_set.unknown_references(network)
    if unknown:
        raise PlanningException('Scenarios reference unknown elements: %s' % ', '.join(unknown))
    results: Dict[int, Optional[PlanResult]] = {}
    errors: Dict[int, PlanningException] = {}
    for admitted in range(len(scenario_set.failures) + 1):
        step = replace(scenario_set, failures=scenario_set.failures[:admitted])
        results, errors = _ladder_step(network, step, modes[-1], config, seed, results)
        logger.debug('Planned with %d of %d failures', admitted, len(scenario_set.failures))
    for mode in modes:
        if results[mode] is None:
            raise errors[mode]
    return {mode: results[mode] for mode in modes}


def plan_capacity(network: MultiLayerNetwork, scenario_set: ScenarioSet, mode: int,
                  config: PlannerConfig = PlannerConfig(), seed: int = 0) -> PlanResult:
    return plan_ladder(network, scenario_set, (mode,), config, seed)[mode]


def plan_table(results: Dict[int, PlanResult], reference: PlanResult = None) -> pd.DataFrame:
    """Rows per mode with the cost change relative to mode 1 in percent."""
    reference = reference or results.get(1)
    rows = []
    for mode in sorted(results):
        result = results[mode]
        delta = 0.0
        if reference is not None and reference.cost > 0:
            delta = round(100.0 * (result.cost - reference.cost) / reference.cost, 2)
        rows.append({'mode': mode, 'tails': result.tails, 'regens': result.regens,
                     'cost': round(result.cost, 6), 'delta_pct_vs_mode1': delta})
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_plan_table(results: Dict[int, PlanResult], path: Union[str, Path], reference: PlanResult = None):
    plan_table(results, reference).to_csv(path, index=False, lineterminator='\n')


def plan_document(results: Dict[int, PlanResult]) -> DocumentMaker:
    return DocumentMaker(PLAN_SCHEMA).add('plans', [results[m].to_dict() for m in sorted(results)])
