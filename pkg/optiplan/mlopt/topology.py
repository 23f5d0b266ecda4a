"""
Minutes-to-hours IP topology changes: light new IP links from free tails
and regenerators, fuse tails through the DFCC, and retire links that are
no longer needed.
"""
from __future__ import annotations
import logging
from abc import ABCMeta, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

from optiplan.mlopt import InsufficientResources, PlanningException
from optiplan.mlopt.routing import NOMINAL, FailureScenario, Ordering, default_ordering, route_tunnels, surviving_links
from optiplan.netmodel import (IpLink, MultiLayerNetwork, NetworkException, ResourceState, Tail, TeTunnel,
                               optical_route)

try:
    from enum import StrEnum
except ImportError:
    class StrEnum(str, Enum):
        pass

logger = logging.getLogger(__name__)

# time to light a new wavelength
SETUP_MINUTES = 2.5
# how long before a predicted surge a new link should be requested
LEAD_TIME_MINUTES = 20.0
REGEN_SCORE_WEIGHT = 0.4
CARRIED_EPS = 1e-9


class Trigger(StrEnum):
    SURGE = 'surge'
    FAILURE = 'failure'
    CLEANUP = 'periodic-cleanup'


class Action(metaclass=ABCMeta):
    kind = 'action'
    setup_minutes = 0.0
    lead_time_minutes = 0.0

    @abstractmethod
    def apply(self, network: MultiLayerNetwork):
        """Mutate `network` in place."""

    def to_dict(self) -> dict:
        data = {'action': self.kind}
        data.update(self.__dict__)
        if self.setup_minutes:
            data['setup_minutes'] = self.setup_minutes
            data['lead_time_minutes'] = self.lead_time_minutes
        return data


@dataclass(frozen=True)
class CreateLink(Action):
    link_id: str
    a: str
    b: str
    capacity: int
    optical_path: Tuple[str, ...]
    tails: Tuple[str, str]
    regens: Tuple[str, ...] = ()

    kind = 'create-link'
    setup_minutes = SETUP_MINUTES
    lead_time_minutes = LEAD_TIME_MINUTES

    def apply(self, network):
        if self.link_id in network.ip_links:
            raise PlanningException('Link %s already exists' % self.link_id)
        for resource in [network.tails[t] for t in self.tails] + [network.regens[r] for r in self.regens]:
            if resource.state != ResourceState.FREE:
                raise PlanningException('%s is not free' % resource.id)
            resource.state = ResourceState.IN_USE
        network.ip_links[self.link_id] = IpLink(self.link_id, self.a, self.b, self.capacity,
                                                list(self.optical_path), tuple(self.tails), list(self.regens))


@dataclass(frozen=True)
class DeleteLink(Action):
    link_id: str

    kind = 'delete-link'

    def apply(self, network):
        link = network.ip_links.pop(self.link_id, None)
        if link is None:
            raise PlanningException('Unknown link %s' % self.link_id)
        for tail_id in link.tails:
            network.tails[tail_id].state = ResourceState.FREE
        for regen_id in link.regens:
            network.regens[regen_id].state = ResourceState.FREE


@dataclass(frozen=True)
class RecombineTail(Action):
    """
    DFCC cross-connect at `site`: either move the transponder of `tail_id`
    onto a spare port of `router`, or (`fused`) pair a spare port with a
    spare transponder into the new tail `tail_id`.
    """
    site: str
    router: int
    tail_id: str
    fused: bool = False

    kind = 'recombine-tail'

    def apply(self, network):
        site = network.sites[self.site]
        if site.spare_ports < 1 or (self.fused and site.spare_transponders < 1):
            raise PlanningException('No spare DFCC resources at %s' % self.site)
        if self.fused:
            if self.tail_id in network.tails:
                raise PlanningException('Tail %s already exists' % self.tail_id)
            network.tails[self.tail_id] = Tail(self.tail_id, self.site, 1, self.router, ResourceState.FREE)
            network.sites[self.site] = replace(site, spare_ports=site.spare_ports - 1,
                                               spare_transponders=site.spare_transponders - 1)
        else:
            network.tails[self.tail_id].router = self.router
            network.sites[self.site] = replace(site, spare_ports=site.spare_ports - 1)


def apply_actions(network: MultiLayerNetwork, actions: Sequence[Action]) -> MultiLayerNetwork:
    """Copy of `network` with `actions` applied in order; the input is left untouched."""
    result = network.copy()
    for action in actions:
        action.apply(result)
    return result


def spare_score(network: MultiLayerNetwork) -> float:
    """Free tail units plus 0.4 per free regen."""
    tails = sum(t.capacity_units for t in network.tails.values() if t.state == ResourceState.FREE)
    return tails + REGEN_SCORE_WEIGHT * len(network.free_regens())


def _surviving_routers(network: MultiLayerNetwork, site: str, failure: FailureScenario) -> List[int]:
    return [r for r in range(network.sites[site].routers) if not failure.router_failed(site, r)]


def _tail_option(network: MultiLayerNetwork, site: str,
                 failure: FailureScenario) -> Optional[Tuple[List[Action], str, int]]:
    """Free tail usable at `site`, possibly via a DFCC recombination: (actions, tail id, units)."""
    free = [t for t in network.free_tails(site) if t.id not in failure.failed_equipment]
    for tail in free:
        if not failure.router_failed(site, tail.router):
            return [], tail.id, tail.capacity_units
    routers = _surviving_routers(network, site, failure)
    spare = network.sites[site]
    if not routers or spare.spare_ports < 1:
        return None
    if free:
        return [RecombineTail(site, routers[0], free[0].id)], free[0].id, free[0].capacity_units
    if spare.spare_transponders >= 1:
        tail_id = '%s-dfcc-%d' % (site, sum(1 for t in network.tails if t.startswith(site + '-dfcc-')) + 1)
        return [RecombineTail(site, routers[0], tail_id, fused=True)], tail_id, 1
    return None


def _new_link_id(network: MultiLayerNetwork, a: str, b: str) -> str:
    index = 1
    while '%s-%s-%d' % (a, b, index) in network.ip_links:
        index += 1
    return '%s-%s-%d' % (a, b, index)


def link_candidates(network: MultiLayerNetwork, failure: FailureScenario = NOMINAL) -> List[List[Action]]:
    """Every new IP link buildable from free resources, as the action list that creates it."""
    cut = failure.cut_span_ids(network)
    candidates = []
    for a, b in combinations(network.core_sites(), 2):
        option_a = _tail_option(network, a, failure)
        option_b = _tail_option(network, b, failure)
        if option_a is None or option_b is None:
            continue
        try:
            route = optical_route(network, network.node_of_site(a), network.node_of_site(b), cut)
        except NetworkException as err:
            logger.debug('No optical route for %s-%s: %s', a, b, err)
            continue
        capacity = min(option_a[2], option_b[2])
        regens = []
        for node in route.regen_sites:
            free = [r.id for r in network.free_regens(node)
                    if r.id not in failure.failed_equipment and r.id not in regens]
            if len(free) < capacity:
                break
            regens.extend(free[:capacity])
        else:
            create = CreateLink(_new_link_id(network, a, b), a, b, capacity, route.spans,
                                (option_a[1], option_b[1]), tuple(regens))
            candidates.append(option_a[0] + option_b[0] + [create])
    return candidates


def _candidate_key(trial: MultiLayerNetwork, actions: List[Action]):
    create = actions[-1]
    return -spare_score(trial), len(create.regens), (create.a, create.b)


def _cleanup(network: MultiLayerNetwork, tunnels: Sequence[TeTunnel], failure: FailureScenario,
             ordering: Ordering) -> List[Action]:
    actions: List[Action] = []
    while True:
        best = None
        for link in sorted(surviving_links(network, failure), key=lambda l: l.id):
            action = DeleteLink(link.id)
            trial = apply_actions(network, [action])
            if not route_tunnels(trial, tunnels, ordering, surviving_links(trial, failure)).feasible:
                continue
            key = (-spare_score(trial), link.id)
            if best is None or key < best[0]:
                best = (key, action)
        if best is None:
            return actions
        logger.info('Retiring idle link %s', best[1].link_id)
        best[1].apply(network)
        actions.append(best[1])


def topology_adjust(network: MultiLayerNetwork, trigger: Trigger, tunnels: Sequence[TeTunnel],
                    failure: FailureScenario = NOMINAL, ordering: Ordering = default_ordering) -> List[Action]:
    """
    Actions that make `tunnels` (typically the forecast traffic) routable,
    or, on periodic cleanup, that retire links nobody needs. Each round
    lights the candidate link that adds carried demand and leaves the most
    spare resources; ties go to fewer regens, then to endpoint ids.
    `network` is not modified.
    """
    work = network.copy()
    if Trigger(trigger) == Trigger.CLEANUP:
        return _cleanup(work, tunnels, failure, ordering)
    actions: List[Action] = []
    if Trigger(trigger) == Trigger.FAILURE:
        # release the resources of links the failure took down
        alive = {l.id for l in surviving_links(work, failure)}
        for link_id in sorted(set(work.ip_links) - alive):
            action = DeleteLink(link_id)
            action.apply(work)
            actions.append(action)
    while True:
        routing = route_tunnels(work, tunnels, ordering, surviving_links(work, failure))
        if routing.feasible:
            return actions
        carried = routing.carried(tunnels)
        best = None
        for candidate in link_candidates(work, failure):
            trial = apply_actions(work, candidate)
            if route_tunnels(trial, tunnels, ordering, surviving_links(trial, failure)).carried(tunnels) \
                    <= carried + CARRIED_EPS:
                continue
            key = _candidate_key(trial, candidate)
            if best is None or key < best[0]:
                best = (key, candidate)
        if best is None:
            raise InsufficientResources('No buildable link restores %d unrouted tunnel(s)' % len(routing.unrouted))
        logger.info('Lighting %s-%s for %s', best[1][-1].a, best[1][-1].b, Trigger(trigger).value)
        for action in best[1]:
            action.apply(work)
        actions.extend(best[1])
