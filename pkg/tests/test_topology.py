import pytest

from optiplan.mlopt import InsufficientResources, PlanningException
from optiplan.mlopt.routing import FailureScenario
from optiplan.mlopt.topology import (CreateLink, DeleteLink, RecombineTail, Trigger, apply_actions, link_candidates,
                                     spare_score, topology_adjust)
from optiplan.netmodel import ResourceState, TeTunnel, validate
from tests.conftest import build_network, ring_network


def tunnel(src, dst, demand, bound=100.0):
    return TeTunnel('%s:%s:0' % (src, dst), src, dst, 0, demand, bound)


def path_network(**kwargs):
    """S1-S2-S3 linked in a line over 100 km spans, plus a direct F1-3 fiber."""
    return build_network(3, [(1, 2, 100.0, None), (2, 3, 100.0, None), (1, 3, 100.0, None)],
                         [(1, 2, 1), (2, 3, 1)], **kwargs)


def test_surge_lights_the_only_candidate():
    network = path_network(free_tails=[('S1', 1), ('S3', 1)])
    tunnels = [tunnel('S1', 'S2', 100.0), tunnel('S1', 'S3', 100.0), tunnel('S2', 'S3', 100.0)]
    actions = topology_adjust(network, Trigger.SURGE, tunnels)
    assert actions == [CreateLink('S1-S3-1', 'S1', 'S3', 1, ('F1-3',), ('X1@S1', 'X2@S3'))]
    assert 'S1-S3-1' not in network.ip_links
    adjusted = apply_actions(network, actions)
    assert validate(adjusted) == []
    assert adjusted.tails['X1@S1'].state == ResourceState.IN_USE


def test_regen_free_candidate_wins():
    network = build_network(3, [(1, 2, 100.0, None), (2, 3, 100.0, None), (1, 3, 400.0, None)], [(2, 3, 1)],
                            reach_km=150.0, regens=[('R1', 'O2')], free_tails=[('S1', 1), ('S2', 1), ('S3', 1)])
    candidates = {(c[-1].a, c[-1].b): c[-1] for c in link_candidates(network)}
    assert candidates[('S1', 'S3')].regens == ('R1',)
    assert candidates[('S1', 'S2')].regens == ()
    with_regen = spare_score(apply_actions(network, [candidates[('S1', 'S3')]]))
    without = spare_score(apply_actions(network, [candidates[('S1', 'S2')]]))
    assert without - with_regen == pytest.approx(0.4)
    actions = topology_adjust(network, Trigger.SURGE, [tunnel('S1', 'S3', 50.0)])
    assert [(a.a, a.b, a.regens) for a in actions] == [('S1', 'S2', ())]


def test_insufficient_resources():
    network = path_network()
    with pytest.raises(InsufficientResources):
        topology_adjust(network, Trigger.SURGE, [tunnel('S1', 'S3', 100.0), tunnel('S1', 'S2', 100.0)])


def test_feasible_traffic_needs_no_action():
    network = path_network(free_tails=[('S1', 1), ('S3', 1)])
    assert topology_adjust(network, Trigger.SURGE, [tunnel('S1', 'S3', 10.0)]) == []


def test_cleanup_keeps_busy_links():
    network = ring_network(3)
    tunnels = [tunnel('S1', 'S2', 100.0, 0.6), tunnel('S2', 'S3', 100.0, 0.6), tunnel('S1', 'S3', 100.0, 0.6)]
    assert topology_adjust(network, Trigger.CLEANUP, tunnels) == []


def test_cleanup_retires_idle_links():
    network = ring_network(3)
    actions = topology_adjust(network, Trigger.CLEANUP, [tunnel('S1', 'S2', 10.0, 0.6)])
    assert actions == [DeleteLink('L1-3'), DeleteLink('L2-3')]
    cleaned = apply_actions(network, actions)
    assert list(cleaned.ip_links) == ['L1-2']
    assert len(cleaned.free_tails()) == 4
    assert validate(cleaned) == []


def test_failure_replaces_lost_link():
    network = path_network(free_tails=[('S1', 1), ('S3', 1)])
    failure = FailureScenario('cut', cut_spans=frozenset({'F2-3'}))
    actions = topology_adjust(network, Trigger.FAILURE, [tunnel('S1', 'S3', 50.0)], failure)
    assert actions[0] == DeleteLink('L2-3')
    assert [a.kind for a in actions[1:]] == ['create-link']
    assert actions[-1].optical_path == ('F1-3',)


def test_dfcc_fuses_spare_port_and_transponder():
    network = build_network(2, [(1, 2, 100.0, None)], [], spare_ports=1, spare_transponders=1)
    candidates = link_candidates(network)
    assert len(candidates) == 1
    fuse_a, fuse_b, create = candidates[0]
    assert fuse_a == RecombineTail('S1', 0, 'S1-dfcc-1', fused=True)
    assert fuse_b == RecombineTail('S2', 0, 'S2-dfcc-1', fused=True)
    assert create.tails == ('S1-dfcc-1', 'S2-dfcc-1')
    built = apply_actions(network, candidates[0])
    assert validate(built) == []
    assert built.sites['S1'].spare_ports == 0 and built.sites['S1'].spare_transponders == 0


def test_dfcc_moves_stranded_tail():
    network = build_network(2, [(1, 2, 100.0, None)], [], spare_ports=1, free_tails=[('S1', 1), ('S2', 1)])
    network.tails['X1@S1'].router = 1
    failure = FailureScenario('router', failed_routers=frozenset({'S1/1'}))
    actions = link_candidates(network, failure)[0]
    assert actions[0] == RecombineTail('S1', 0, 'X1@S1')
    built = apply_actions(network, actions)
    assert built.tails['X1@S1'].router == 0
    assert built.sites['S1'].spare_ports == 0


def test_candidates_skip_failed_tails():
    network = build_network(2, [(1, 2, 100.0, None)], [], free_tails=[('S1', 1), ('S1', 1), ('S2', 1)])
    failure = FailureScenario('tail', failed_equipment=frozenset({'X1@S1'}))
    [actions] = link_candidates(network, failure)
    assert actions == [CreateLink('S1-S2-1', 'S1', 'S2', 1, ('F1-2',), ('X2@S1', 'X3@S2'))]
    assert link_candidates(network, FailureScenario('far', failed_equipment=frozenset({'X3@S2'}))) == []


def test_apply_actions_leaves_input_untouched(ring):
    before = ring.copy()
    changed = apply_actions(ring, [DeleteLink('L1-2')])
    assert ring == before
    assert 'L1-2' not in changed.ip_links
    with pytest.raises(PlanningException):
        apply_actions(ring, [DeleteLink('nope')])


def test_action_dicts():
    create = CreateLink('S1-S2-1', 'S1', 'S2', 1, ('F1-2',), ('a', 'b'))
    data = create.to_dict()
    assert data['action'] == 'create-link'
    assert data['setup_minutes'] == 2.5 and data['lead_time_minutes'] == 20.0
    assert DeleteLink('L1').to_dict() == {'action': 'delete-link', 'link_id': 'L1'}
