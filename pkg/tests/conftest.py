import pytest
from hypothesis import HealthCheck, settings

from xchainsim.audit import audit, snapshot_states
from xchainsim.encoding import account_key
from xchainsim.network import Client, Network, default_chains, run_clients
from xchainsim.samples import train_hotel

settings.register_profile("repo", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_network(*, relayers=("honest",), seed=0, block_time=5_000, depth=1, ta=True, fgsl=True,
                 dapp_timeout=10, bridge_timeout=20, storage=None, lock_size=1, p=None):
    """Agency on chain 1, train on 2, hotel on 3."""
    net = Network(default_chains(3, block_time, depth), seed=seed, ta=ta, fgsl=fgsl,
                  dapp_timeout=dapp_timeout, bridge_timeout=bridge_timeout)
    storage = storage or {}
    net.add_service("agency", 1, "agency", storage.get("agency"))
    net.add_service("train", 2, "train", storage.get("train"), lock_size)
    net.add_service("hotel", 3, "hotel", storage.get("hotel"), lock_size)
    for i, behavior in enumerate(relayers):
        prob = p if p is not None else {"drop": 1.0, "tamper": 1.0}.get(behavior, 0.0)
        net.add_relayer(f"r{i}", behavior, prob)
    return net


def invoke_once(net, descriptor=None, *, protocol="integratex", users=1, n=1, requests=1,
                retry=True, exec_gas=5_000_000, max_time=None, preinstalled=True, **client_kw):
    """Deploy ``descriptor`` (train-hotel by default), run ``users`` clients, audit."""
    descriptor = descriptor or train_hotel()
    if descriptor["name"] not in net.plans:
        net.deploy(descriptor, preinstalled=preinstalled)
    names = [net.add_user(f"user{len(net.users)}") for _ in range(users)]
    genesis = snapshot_states(net)
    clients = [Client(net, u, descriptor["name"], {"user": account_key(u), "n": n},
                      protocol=protocol, requests=requests, retry=retry, exec_gas=exec_gas,
                      **client_kw) for u in names]
    run_clients(net, clients, net.world.now + (max_time or 2_000 * net.world.min_block_time))
    report = audit(net, genesis, [net.endpoint(protocol)])
    return clients, report


@pytest.fixture
def net():
    return make_network()


# -- acceptance reporting -------------------------------------------------------------
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    CRITERIA[number] = (ok, f"{title}: {detail}" if detail else title)
    print(f"{'PASS' if ok else 'FAIL'} criterion {number:2d}  {CRITERIA[number][1]}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, text = CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}  {text}")
