import copy
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_network
from xchainsim.calltree import (AMOUNT, READ, WHOLE, CyclicCalls, DescriptorError,
                                UnknownService, analyze, lock_requests)
from xchainsim.samples import linear, random_dapp, train_hotel

SERVICES = make_network(relayers=()).services


def test_train_hotel_tree():
    tree, req, clones = analyze(train_hotel(), SERVICES)
    assert tree.depth == 3
    assert tree.order == ["outbound", "hotel", "return", "agency"]
    assert clones == ["train", "hotel"]
    assert tree.invoked_chains() == [2, 3]
    modes = {(t.node_id, t.slot): t.mode for t in req.templates()}
    assert modes == {("outbound", "price"): READ, ("outbound", "seats"): AMOUNT,
                     ("return", "price"): READ, ("return", "seats"): AMOUNT,
                     ("hotel", "price"): READ, ("hotel", "remain"): AMOUNT}


def test_lock_requests_merge_per_chain():
    tree, req, _ = analyze(train_hotel(), SERVICES)
    groups = lock_requests(tree, req, SERVICES, {"user": "u", "n": 2})
    train = groups[2][SERVICES["train"].state_addr]
    assert {(r.slot, r.mode, r.amount) for r in train} == {("price", READ, 0), ("seats", AMOUNT, 4)}
    coarse = lock_requests(tree, req, SERVICES, {"user": "u", "n": 2}, fgsl=False)
    assert all(r.mode == WHOLE for g in coarse.values() for rs in g.values() for r in rs)
    per_node = lock_requests(tree, req, SERVICES, {"user": "u", "n": 2}, per_node=True)
    assert set(per_node) == {"outbound", "hotel", "return"}


def test_registered_services_not_cloned():
    _, _, clones = analyze(train_hotel(), SERVICES, registered={"train"})
    assert clones == ["hotel"]


def test_local_only_dapp():
    d = {"name": "local", "exec_chain": 1, "inputs": ["user"], "root": "a",
         "nodes": {"a": {"service": "agency", "function": "open", "args": {"user": "input:user"}}}}
    tree, req, clones = analyze(d, SERVICES)
    assert tree.depth == 0 and clones == [] and req.chains() == []


@pytest.mark.parametrize("depth", range(1, 7))
def test_linear_depth_counts_edges(depth):
    tree, _, _ = analyze(linear(depth), SERVICES)
    assert tree.depth == depth and len(tree.edges) == depth


def test_cycle_rejected():
    d = train_hotel()
    d["nodes"]["return"]["calls"] = ["outbound"]
    with pytest.raises(CyclicCalls):
        analyze(d, SERVICES)
    d = train_hotel()
    d["nodes"]["hotel"]["calls"] = ["hotel"]
    with pytest.raises(CyclicCalls):
        analyze(d, SERVICES)


@pytest.mark.parametrize("mutate, exc", [
    (lambda d: d["nodes"]["hotel"].update(service="casino"), UnknownService),
    (lambda d: d.pop("root"), DescriptorError),
    (lambda d: d["nodes"]["hotel"].update(calls=["ghost"]), DescriptorError),
    (lambda d: d["nodes"]["outbound"]["args"].update(num="out:return.0"), DescriptorError),
    (lambda d: d["nodes"]["hotel"]["args"].update(num="input:undeclared"), DescriptorError),
    (lambda d: d["nodes"]["agency"].update(calls=["outbound", "hotel"]), DescriptorError),
])
def test_malformed_descriptors(mutate, exc):
    d = copy.deepcopy(train_hotel())
    mutate(d)
    with pytest.raises(exc):
        analyze(d, SERVICES)


@settings(max_examples=60)
@given(st.integers(0, 10**6))
def test_random_dapps_are_valid_trees(seed):
    d = random_dapp(random.Random(seed), SERVICES, max_nodes=8)
    tree, req, clones = analyze(d, SERVICES)
    assert len(tree.nodes) <= 8
    assert len(tree.edges) == len(tree.nodes) - 1
    assert tree.order[-1] == tree.root or tree.nodes[tree.root].order == "pre"
    assert sorted(tree.order) == sorted(tree.nodes)
    remote = {tree.nodes[n].service for n in tree.remote_nodes()}
    assert set(clones) == remote
    for t in req.templates():
        assert t.chain != tree.exec_chain
