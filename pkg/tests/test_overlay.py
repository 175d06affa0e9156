from __future__ import annotations

import pytest

from nada.core import Domain, parse_rid
from nada.errors import NadaError, PolicyDenied, ReplayDetected
from nada.overlay import connect, get_ticket, node_authenticate

from .oracles import overlay_matrix, overlay_mismatches, overlay_sweep

# The full 512-matrix sweep lives in the acceptance suite; here a spread sample.
SAMPLE = [0, 1, 7, 84, 146, 273, 292, 341, 438, 511]


def test_sampled_policy_matrices_match_oracle():
    rows = overlay_sweep(SAMPLE)
    assert not overlay_mismatches(rows)
    assert {r[3] for r in rows} == {True, False}


def test_empty_matrix_admits_nothing_and_full_matrix_everything():
    assert not any(e for *_, e, _ in overlay_matrix(0))
    assert all(all(v is True for v in routes.values()) for *_, routes in overlay_matrix(511))


def test_ticket_cannot_be_used_twice(fresh_reference):
    world = fresh_reference.world
    n1, n2 = world.nodes["n1"].agent, world.nodes["n2"].agent
    c1 = parse_rid("C1/A1")
    grant = get_ticket(n1, c1, "n2", c1)
    node_authenticate(n1, grant, n2)
    with pytest.raises(ReplayDetected):
        node_authenticate(n1, grant, n2)


def test_rival_slice_cannot_reach_customer_overlay(fresh_reference):
    world = fresh_reference.world
    n1 = world.nodes["n1"].agent
    with pytest.raises(PolicyDenied):
        connect(n1, "n2", parse_rid("C1/A1"), Domain.NADA_NETWORK, parse_rid("C2/A1"))
    with pytest.raises(PolicyDenied):
        get_ticket(n1, parse_rid("C2/A1"), "n2", parse_rid("C1/A1"))


def test_slice_not_running_on_requesting_node_gets_no_ticket(fresh_reference):
    world = fresh_reference.world
    n2 = world.nodes["n2"].agent
    # C2/A1 runs on n1 only.
    with pytest.raises(NadaError):
        get_ticket(n2, parse_rid("C2/A1"), "n1", parse_rid("C2/A1"))
