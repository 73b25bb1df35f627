import pytest
from hypothesis import given, settings, strategies as st

from conftest import invoke_once, make_network
from xchainsim.audit import audit, snapshot_states
from xchainsim.encoding import account_key
from xchainsim.execution import BadTransition, Invocation, transition
from xchainsim.network import Client, run_clients
from xchainsim.samples import train_hotel


def single(**kw):
    net_kw = {k: kw.pop(k) for k in list(kw)
              if k in ("storage", "dapp_timeout", "ta", "fgsl", "relayers", "lock_size")}
    net = make_network(**net_kw)
    kw.setdefault("retry", False)
    clients, report = invoke_once(net, **kw)
    req = clients[0].done[0]
    inv = net.hub.invocations[req.attempts[-1]] if req.attempts else None
    return net, req, inv, report


def phases(inv):
    return [p for p, _ in inv.history]


def test_train_hotel_commits_with_two_lock_and_two_update_messages():
    net, req, inv, report = single(n=2)
    assert req.status == "Committed" and report.ok
    assert inv.msgs == {"LOCK_REQ": 2, "UPDATE_REQ": 2}
    assert inv.history == [("Locking", 1), ("Executing", 4), ("Updating", 4), ("Committed", 7)]
    assert req.latency == 35_000
    # both train legs land on one contract: 2 legs of 2 seats each
    assert net.state("train").storage["seats"] == 10_000 - 4
    assert net.state("hotel").storage["remain"] == 10_000 - 2
    assert not net.state("train").lockpool and not net.state("hotel").lockpool


def test_ta_off_sends_one_message_per_remote_node():
    net, req, inv, report = single(ta=False)
    assert req.status == "Committed" and report.ok
    assert inv.msgs == {"LOCK_REQ": 3, "UPDATE_REQ": 3}


def test_local_only_dapp_skips_locking():
    d = {"name": "local", "exec_chain": 1, "inputs": ["user"], "root": "a",
         "nodes": {"a": {"service": "agency", "function": "open", "args": {"user": "input:user"}}}}
    net, req, inv, report = single(descriptor=d)
    assert req.status == "Committed" and report.ok
    assert phases(inv) == ["Executing", "Updating", "Committed"]
    assert inv.msgs == {}


def test_unverified_logic_rejected():
    net = make_network()
    net.install_dapp(train_hotel())
    clients, report = invoke_once(net, retry=False)
    assert clients[0].done[0].status == "Rejected" and clients[0].rejected == 1
    assert net.hub.invocations == {}


def test_lock_conflict_aborts_and_releases_other_chain():
    # one seat left but the two train legs need two
    net, req, inv, report = single(storage={"train": {"seats": 1}})
    assert (req.status, req.reason) == ("Aborted", "LockConflict")
    assert inv.detail == "InsufficientAvailable"
    assert report.ok
    assert net.state("train").storage["seats"] == 1
    assert net.state("hotel").storage["remain"] == 10_000
    assert not net.state("hotel").lockpool
    # the RESULT waited for every abort acknowledgement
    assert inv.acks == set(inv.groups)


def test_timeout_then_late_lock_success_is_released():
    net, req, inv, report = single(dapp_timeout=2)
    assert (req.status, req.reason) == ("Aborted", "Timeout")
    assert inv.deadline_height == 3 and phases(inv) == ["Locking", "Aborted"]
    assert inv.stale >= 1          # lock results that arrived after the abort
    assert report.ok
    assert not net.state("train").lockpool and not net.state("hotel").lockpool
    assert net.state("train").storage["seats"] == 10_000


def test_no_abort_after_commit_point():
    net, req, inv, report = single(dapp_timeout=5)
    assert inv.result_height > inv.deadline_height
    assert req.status == "Committed" and report.ok


def test_out_of_gas_is_exec_failure():
    net, req, inv, report = single(exec_gas=500)
    assert (req.status, req.reason) == ("Aborted", "ExecFailure")
    assert "OutOfGas" in inv.detail and report.ok
    assert net.state("train").storage["seats"] == 10_000


def test_failed_require_is_exec_failure():
    net = make_network()
    net.deploy(train_hotel(), preinstalled=True)
    user = net.add_user("poor", wallet=1)
    genesis = snapshot_states(net)
    client = Client(net, user, "train-hotel", {"user": account_key(user), "n": 1}, retry=False)
    run_clients(net, [client], 1_000_000)
    req = client.done[0]
    assert (req.status, req.reason) == ("Aborted", "ExecFailure")
    assert audit(net, genesis, [net.hub]).ok
    assert net.state("agency").storage == genesis["agency"]


def test_bad_transition():
    inv = Invocation(b"x", "d", "u", {}, "Committed", 0, 0, 10, 0, 0)
    with pytest.raises(BadTransition):
        transition(inv, "Locking", 1)


def test_insufficient_fee_rejected():
    net = make_network()
    net.deploy(train_hotel(), preinstalled=True)
    user = net.add_user("cheap")
    client = Client(net, user, "train-hotel", {"user": account_key(user), "n": 1}, fee=0,
                    retry=False)
    run_clients(net, [client], 100_000)
    assert client.done[0].status == "Rejected"


@settings(max_examples=15)
@given(st.integers(1, 5), st.lists(st.integers(1, 4), min_size=1, max_size=5),
       st.booleans(), st.booleans(), st.integers(0, 10**6))
def test_concurrent_clients_match_oracle(seats, ns, fgsl, ta, seed):
    net = make_network(seed=seed, fgsl=fgsl, ta=ta, storage={"train": {"seats": seats * 2}})
    net.deploy(train_hotel(), preinstalled=True)
    users = [net.add_user(f"u{i}") for i in range(len(ns))]
    genesis = snapshot_states(net)
    clients = [Client(net, u, "train-hotel", {"user": account_key(u), "n": n}, max_attempts=3)
               for u, n in zip(users, ns)]
    run_clients(net, clients, 3_000_000)
    assert all(c.finished for c in clients)
    report = audit(net, genesis, [net.hub])
    assert report.ok, report.violations
    assert report.unfinished == 0
