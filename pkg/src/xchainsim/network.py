"""Assemble a simulated multi-chain network and drive user invocations on it."""

from __future__ import annotations

from dataclasses import dataclass, field

from .baseline import Coordinator
from .bridge import Bridge, RegistryEntry
from .calltree import ServiceInfo, analyze
from .deploy import VERIFIED, DeploymentJob, run_deployment
from .encoding import account_key, address_from, digest
from .execution import ABORTED, COMMITTED, DAppPlan, IntegrateX
from .ledger import BadNonce, ChainConfig, InsufficientBalance
from .lsd import lsd_transform
from .relayer import Relayer, RelayerConfig
from .samples import USER_WALLET, genesis_storage, load_program
from .sim import PRIO_ACTOR, World, default_offsets
from .state import CodeContract, StateContract
from .vm import DEFAULT_GAS, GasSchedule, Program, slot_key

INTEGRATEX = "integratex"
BASELINE = "baseline"
PROTOCOLS = (INTEGRATEX, BASELINE)
PROVIDER = "provider"
USER_BALANCE = 10**15


def default_chains(n: int = 3, block_time: int = 5_000, depth: int = 1) -> list[ChainConfig]:
    return [ChainConfig(i, block_time, 4096, depth) for i in range(1, n + 1)]


class Network:
    """World, bridges, decoupled services, both protocol endpoints and relayers.

    ``stagger`` shifts invoked chains by half a block relative to the
    execution chain so block production is interleaved.
    """

    def __init__(self, chains: list[ChainConfig] | None = None, exec_chain: int = 1, *,
                 seed: int = 0, gas: GasSchedule = DEFAULT_GAS, ta: bool = True,
                 fgsl: bool = True, bridge_timeout: int = 20, dapp_timeout: int = 10,
                 stagger: bool = True):
        chains = chains or default_chains()
        if stagger:
            chains = default_offsets(chains, exec_chain)
        self.world = World(chains, gas, seed)
        self.exec_chain = exec_chain
        self.seed = seed
        self.services: dict[str, ServiceInfo] = {}
        self.world.services = self.services
        self.world.exec_chain = exec_chain
        for cid in sorted(self.world.chains):
            addr = address_from("bridge", cid)
            self.world.chain(cid).install(Bridge(addr, cid, self.world))
            self.world.bridges[cid] = addr
            self.world.chain(cid).fund(PROVIDER, USER_BALANCE)
        exec_bridge = self.world.bridge(exec_chain)
        self.hub = IntegrateX(address_from("integratex", exec_chain), exec_chain, self.world,
                              exec_bridge.address, ta=ta, fgsl=fgsl,
                              bridge_timeout=bridge_timeout, dapp_timeout=dapp_timeout)
        self.coordinator = Coordinator(address_from("coordinator", exec_chain), exec_chain,
                                       self.world, exec_bridge.address,
                                       bridge_timeout=bridge_timeout, dapp_timeout=dapp_timeout)
        for ep in (self.hub, self.coordinator):
            self.exec.install(ep)
            exec_bridge.add_endpoint(ep.address)
        self.relayers: list[Relayer] = []
        self.users: list[str] = []
        self.plans: dict[str, DAppPlan] = {}
        self.jobs: list[DeploymentJob] = []

    @property
    def exec(self):
        return self.world.chain(self.exec_chain)

    def endpoint(self, protocol: str):
        if protocol == INTEGRATEX:
            return self.hub
        if protocol == BASELINE:
            return self.coordinator
        raise ValueError(f"unknown protocol {protocol!r}")

    # -- services ---------------------------------------------------------------
    def add_service(self, service_id: str, chain: int, program: Program | str,
                    storage: dict | None = None, lock_size: int = 1) -> ServiceInfo:
        """Install the decoupled pair of ``program`` on ``chain`` at genesis."""
        if service_id in self.services:
            raise ValueError(f"service {service_id} already exists")
        if isinstance(program, str):
            storage = genesis_storage(program, self.users) if storage is None else storage
            program = load_program(program)
        logic, state = lsd_transform(program)
        c = self.world.chain(chain)
        logic_addr = address_from("logic", chain, service_id)
        state_addr = address_from("state", chain, service_id)
        c.install(CodeContract(logic_addr, logic, deployer=PROVIDER))
        c.install(StateContract(state_addr, state, logic_addr=logic_addr,
                                bridge_addr=self.world.bridges[chain], deployer=PROVIDER,
                                storage=dict(storage or {}), lock_size=lock_size))
        self.world.bridge(chain).add_state(state_addr)
        info = ServiceInfo(service_id, chain, program, logic, state, logic_addr, state_addr,
                           lock_size)
        self.services[service_id] = info
        return info

    def state(self, service_id: str) -> StateContract:
        info = self.services[service_id]
        return self.world.chain(info.chain).contract(info.state_addr)

    def preinstall(self, service_id: str) -> str:
        """Place a verified clone on the execution chain without running the deployment protocol."""
        info = self.services[service_id]
        bridge = self.world.bridge(self.exec_chain)
        addr = address_from("clone", self.exec_chain, service_id)
        self.exec.install(CodeContract(addr, info.logic, deployer=PROVIDER))
        bridge.registry[service_id] = RegistryEntry(service_id, addr, info.chain, info.logic_addr,
                                                    PROVIDER, b"", 0, True)
        return addr

    # -- actors -------------------------------------------------------------------
    def add_relayer(self, relayer_id: str, behavior: str = "honest", p: float = 0.0,
                    poll_interval: int | None = None, phase: int | None = None) -> Relayer:
        cfg = RelayerConfig(relayer_id, behavior, p, poll_interval)
        r = Relayer(self.world, cfg, self.seed,
                    phase=len(self.relayers) if phase is None else phase)
        r.start()
        self.relayers.append(r)
        return r

    def add_user(self, name: str, wallet: int | None = None) -> str:
        """Fund ``name`` on the execution chain and credit its agency wallets."""
        self.exec.fund(name, USER_BALANCE)
        self.users.append(name)
        for info in self.services.values():
            if info.monolithic.name == "Agency":
                st = self.state(info.service_id)
                st.storage[slot_key("wallet", account_key(name))] = (
                    USER_WALLET if wallet is None else wallet)
        return name

    # -- dApps --------------------------------------------------------------------
    def install_dapp(self, descriptor: dict) -> DAppPlan:
        tree, req, _ = analyze(descriptor, self.services)
        if tree.exec_chain != self.exec_chain:
            raise ValueError(f"dApp {tree.name} targets chain {tree.exec_chain}")
        plan = DAppPlan(tree, req, self.services)
        self.hub.install_dapp(plan)
        self.coordinator.install_dapp(plan)
        self.plans[tree.name] = plan
        return plan

    def deploy(self, descriptor: dict, *, restart_cap: int = 3, preinstalled: bool = False,
               max_time: int | None = None) -> DeploymentJob:
        """Make every remote logic of ``descriptor`` available and install the dApp."""
        if preinstalled:
            _, _, clones = analyze(descriptor, self.services,
                                   registered=set(self.world.bridge(self.exec_chain).registry))
            for sid in clones:
                self.preinstall(sid)
            job = DeploymentJob(f"deploy:{descriptor['name']}", self.exec_chain, clones,
                                phase=VERIFIED)
        else:
            job = run_deployment(self, descriptor, self.exec_chain, restart_cap=restart_cap,
                                 max_time=max_time)
        self.jobs.append(job)
        self.install_dapp(descriptor)
        return job

    def run_until(self, time: int, stop=None) -> int:
        return self.world.run_until(time, stop)


# ------------------------------------------------------------------------- clients

@dataclass
class Request:
    request_id: int
    submit_time: int
    attempts: list = field(default_factory=list)   # invocation ids
    status: str = "pending"
    reason: str = ""
    end_time: int = -1

    @property
    def latency(self) -> int:
        return self.end_time - self.submit_time if self.end_time >= 0 else -1


class Client:
    """A user that submits invocations and retries aborted ones.

    ``requests`` calls are made one after another (closed loop). An aborted
    attempt is retried as soon as its RESULT is observed, up to
    ``max_attempts``. Latency runs from the first submission to the final
    RESULT.
    """

    def __init__(self, network: Network, account: str, dapp: str, inputs: dict, *,
                 protocol: str = INTEGRATEX, exec_gas: int = 5_000_000, fee: int | None = None,
                 requests: int = 1, retry: bool = True, max_attempts: int = 50,
                 start: int | None = None, duration: int | None = None):
        self.net = network
        self.world = network.world
        self.account = account
        self.dapp = dapp
        self.inputs = dict(inputs)
        self.endpoint = network.endpoint(protocol)
        self.protocol = protocol
        self.exec_gas = exec_gas
        plan = network.plans[dapp]
        self.fee = self.endpoint.required_fee(plan) if fee is None else fee
        self.requests_left = requests
        self.retry = retry
        self.max_attempts = max_attempts
        self.start_time = self.world.now if start is None else start
        self.duration = duration
        self.done: list[Request] = []
        self.current: Request | None = None
        self._pending_tx: bytes | None = None
        self.rejected = 0

    def start(self) -> None:
        interval = max(1, self.world.min_block_time // 2)
        self.world.sched.every(interval, self.poll, self.start_time, PRIO_ACTOR)

    @property
    def finished(self) -> bool:
        return self.current is None and self.requests_left == 0

    def _submit(self) -> None:
        try:
            self._pending_tx = self.net.exec.send(
                self.account, self.endpoint.address, "invoke", self.dapp, self.inputs,
                self.exec_gas, self.fee, gas_limit=20_000_000)
        except (BadNonce, InsufficientBalance):
            self._pending_tx = None

    def _new_request(self) -> None:
        self.requests_left -= 1
        self.current = Request(len(self.done), self.world.now)
        self._submit()

    def _window_closed(self) -> bool:
        if self.duration is not None and self.world.now >= self.start_time + self.duration:
            self.requests_left = 0
        return self.requests_left <= 0

    def poll(self):
        if self.current is None:
            if self._window_closed():
                return False
            self._new_request()
            return True
        req = self.current
        chain = self.net.exec
        if self._pending_tx is not None:
            if self._pending_tx not in chain.tx_index:
                return True
            receipt = chain.receipt(self._pending_tx)
            if receipt.status != "success":
                self.rejected += 1
                self._close(req, "Rejected", "invoke reverted")
                return True
            req.attempts.append(digest("inv", self._pending_tx))
            self._pending_tx = None
        inv = self.endpoint.invocations[req.attempts[-1]]
        if not inv.finished:
            return True
        if inv.status == COMMITTED:
            self._close(req, COMMITTED, "", inv.result_time)
        elif inv.status == ABORTED:
            if self.retry and len(req.attempts) < self.max_attempts:
                self._submit()
            else:
                self._close(req, ABORTED, inv.reason, inv.result_time)
        return True

    def _close(self, req: Request, status: str, reason: str, end: int | None = None) -> None:
        req.status, req.reason = status, reason
        req.end_time = self.world.now if end is None else end
        self.done.append(req)
        self.current = None
        if not self._window_closed():
            self._new_request()


def run_clients(network: Network, clients: list[Client], max_time: int) -> int:
    for c in clients:
        c.start()
    return network.run_until(max_time, stop=lambda: all(c.finished for c in clients))
