import math
from itertools import combinations
from typing import Dict, Iterable, Sequence, Tuple

import pytest

from optiplan.mlopt.planner import ScenarioSet, SurgeScenario
from optiplan.mlopt.routing import FailureScenario, QosClass
from optiplan.netmodel import (FiberSpan, IpLink, MultiLayerNetwork, OpticalNode, Regen, ResourceState, Site,
                               SiteKind, Tail, TrafficMatrix)

MESH_SITES = 8
MESH_RADIUS_KM = 300.0
BASE_DEMAND = 40.0
SURGE_FACTORS = (0.5, 0.6, 0.7)


def site_name(i: int) -> str:
    return 'S%d' % i


def node_name(i: int) -> str:
    return 'O%d' % i


def build_network(n_sites: int, spans: Iterable[Tuple[int, int, float, str]], links: Iterable[Tuple[int, int, int]],
                  reach_km: float = 2000.0, tail_routers: Dict[Tuple[str, str], int] = None,
                  regens: Sequence[Tuple[str, str]] = (), spare_ports: int = 0,
                  spare_transponders: int = 0, free_tails: Sequence[Tuple[str, int]] = ()) -> MultiLayerNetwork:
    """
    Core sites S1..Sn on ROADMs O1..On. `spans` are (i, j, km, srlg); each
    link (i, j, capacity) rides the span F{i}-{j} and owns two in-use tails.
    """
    tail_routers = tail_routers or {}
    network = MultiLayerNetwork(
        optical_nodes={node_name(i): OpticalNode(node_name(i), site_name(i)) for i in range(1, n_sites + 1)},
        fiber_spans={}, sites={}, tails={}, regens={}, ip_links={}, system_reach_km=reach_km)
    for i in range(1, n_sites + 1):
        network.sites[site_name(i)] = Site(site_name(i), SiteKind.CORE, 2, (), spare_ports, spare_transponders)
    for i, j, km, srlg in spans:
        span_id = 'F%d-%d' % (i, j)
        network.fiber_spans[span_id] = FiberSpan(span_id, node_name(i), node_name(j), km, srlg or span_id)
    for i, j, capacity in links:
        link_id = 'L%d-%d' % (i, j)
        tails = []
        for site in (site_name(i), site_name(j)):
            tail_id = 'T%d-%d@%s' % (i, j, site)
            network.tails[tail_id] = Tail(tail_id, site, capacity, tail_routers.get((link_id, site), 0),
                                          ResourceState.IN_USE)
            tails.append(tail_id)
        network.ip_links[link_id] = IpLink(link_id, site_name(i), site_name(j), capacity, ['F%d-%d' % (i, j)],
                                           tuple(tails))
    for regen_id, node in regens:
        network.regens[regen_id] = Regen(regen_id, node)
    for index, (site, units) in enumerate(free_tails):
        tail_id = 'X%d@%s' % (index + 1, site)
        network.tails[tail_id] = Tail(tail_id, site, units)
    return network


def chord_km(i: int, j: int, n: int = MESH_SITES, radius: float = MESH_RADIUS_KM) -> float:
    return round(2 * radius * math.sin(math.pi * abs(i - j) / n), 1)


def mesh_network() -> MultiLayerNetwork:
    """Eight sites, fiber and one-unit IP links between every pair; F1-3 and F2-4 share a duct."""
    pairs = list(combinations(range(1, MESH_SITES + 1), 2))
    duct = {(1, 3): 'duct-1', (2, 4): 'duct-1'}
    return build_network(MESH_SITES, [(i, j, chord_km(i, j), duct.get((i, j))) for i, j in pairs],
                         [(i, j, 1) for i, j in pairs], tail_routers={('L3-7', 'S3'): 1},
                         regens=[('R1', 'O5'), ('R2', 'O5')], spare_ports=2, spare_transponders=1)


MESH_FAILURES = (
    FailureScenario('cut-F1-2', cut_spans=frozenset({'F1-2'})),
    FailureScenario('duct-1', cut_srlgs=frozenset({'duct-1'})),
    FailureScenario('router-S3-1', failed_routers=frozenset({'S3/1'})),
    FailureScenario('tail-T5-6', failed_equipment=frozenset({'T5-6@S5'})),
    FailureScenario('cut-F4-8', cut_spans=frozenset({'F4-8'})),
)


def mesh_scenarios(surge_factors: Sequence[float] = SURGE_FACTORS) -> ScenarioSet:
    sites = [site_name(i) for i in range(1, MESH_SITES + 1)]
    base = TrafficMatrix.uniform(sites, 1, BASE_DEMAND)
    return ScenarioSet(base, (QosClass(0, 100.0),), MESH_FAILURES,
                       tuple(SurgeScenario('surge-%d' % (k + 1), base.scaled(f)) for k, f in enumerate(surge_factors)))


def ring_network(n_sites: int = 4, capacity: int = 1, km: float = 100.0, chords: Sequence[Tuple[int, int]] = ()
                 ) -> MultiLayerNetwork:
    pairs = [(i, i % n_sites + 1) for i in range(1, n_sites + 1)]
    pairs = [tuple(sorted(p)) for p in pairs] + [tuple(sorted(c)) for c in chords]
    return build_network(n_sites, [(i, j, km, None) for i, j in pairs], [(i, j, capacity) for i, j in pairs])


@pytest.fixture
def mesh():
    return mesh_network()


@pytest.fixture
def scenario_set():
    return mesh_scenarios()


@pytest.fixture
def ring():
    return ring_network()
