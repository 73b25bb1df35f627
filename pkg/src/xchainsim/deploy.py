"""Hybrid cross-chain deployment: request clones, race to register, cross-verify.

The provider actor drives a :class:`DeploymentJob` through

    Prepared -> CloneRequested -> Registered -> Verifying -> Verified

Failed verification sends the job back to CloneRequested for the affected
services (the cloner is penalised and barred from re-cloning them). After
``restart_cap`` restarts the job ends in Failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .calltree import analyze
from .ledger import BadNonce, InsufficientBalance
from .lsd import NotDecouplable, lsd_transform  # noqa: F401  (re-exported)
from .sim import PRIO_ACTOR

PREPARED = "Prepared"
CLONE_REQUESTED = "CloneRequested"
REGISTERED = "Registered"
VERIFYING = "Verifying"
VERIFIED = "Verified"
FAILED = "Failed"

_NEXT = {
    PREPARED: {CLONE_REQUESTED, VERIFIED},
    CLONE_REQUESTED: {REGISTERED, FAILED},
    REGISTERED: {VERIFYING},
    VERIFYING: {VERIFIED, CLONE_REQUESTED, FAILED},
    VERIFIED: set(),
    FAILED: set(),
}


class RestartCapExceeded(RuntimeError):
    pass


@dataclass
class DeploymentJob:
    job_id: str
    execution_chain: int
    clone_list: list[str]
    phase: str = PREPARED
    restart_count: int = 0
    restart_cap: int = 3
    timeline: list = field(default_factory=list)
    txs: dict = field(default_factory=dict)       # kind -> [(chain, tx_hash)]
    _seen_registered: dict = field(default_factory=dict)
    _requested_at: int = 0

    @property
    def terminal(self) -> bool:
        return self.phase in (VERIFIED, FAILED)

    def advance(self, phase: str, time: int, height: int) -> None:
        if phase not in _NEXT[self.phase]:
            raise ValueError(f"illegal phase change {self.phase} -> {phase}")
        self.phase = phase
        self.timeline.append((phase, time, height))

    def raise_for_status(self) -> None:
        if self.phase == FAILED:
            raise RestartCapExceeded(f"{self.job_id}: gave up after {self.restart_count} restarts")


class Provider:
    """dApp provider actor: pays for requests and verification."""

    def __init__(self, network, job: DeploymentJob, origins: dict[str, tuple[int, str]],
                 account: str = "provider", patience_blocks: int = 10):
        self.net = network
        self.world = network.world
        self.job = job
        self.origins = origins
        self.account = account
        self.patience_blocks = patience_blocks
        self.pending: set[str] = set()
        chain = self.world.chain(job.execution_chain)
        job.timeline.append((PREPARED, self.world.now, chain.height))

    @property
    def chain(self):
        return self.world.chain(self.job.execution_chain)

    @property
    def bridge(self):
        return self.world.bridge(self.job.execution_chain)

    def _send(self, kind: str, method: str, *args) -> None:
        try:
            h = self.chain.send(self.account, self.bridge.address, method, *args)
        except (BadNonce, InsufficientBalance):
            return
        self.job.txs.setdefault(kind, []).append((self.job.execution_chain, h))

    def _request(self, sids) -> None:
        by_chain: dict[int, list] = {}
        for sid in sids:
            chain, addr = self.origins[sid]
            by_chain.setdefault(chain, []).append([sid, addr])
        for chain in sorted(by_chain):
            self._send("request_clone", "request_clone", chain, by_chain[chain])
        self.pending = set(sids)
        self.job._requested_at = self.chain.height
        self.job._seen_registered = {}

    def start(self) -> None:
        self.world.sched.every(max(1, self.world.min_block_time // 2), self.poll,
                               self.world.now, PRIO_ACTOR)

    def poll(self):
        job, now, height = self.job, self.world.now, self.chain.height
        if job.terminal:
            return False
        reg = self.bridge.registry
        depth = self.chain.config.confirmation_depth
        if job.phase == PREPARED:
            if not job.clone_list:
                job.advance(VERIFIED, now, height)
                return False
            self._request(job.clone_list)
            job.advance(CLONE_REQUESTED, now, height)
        elif job.phase == CLONE_REQUESTED:
            for sid in job.clone_list:
                if sid in reg and sid not in job._seen_registered:
                    job._seen_registered[sid] = height
            waiting = [s for s in self.pending if s not in reg]
            if not waiting and all(height - job._seen_registered[s] >= depth for s in self.pending):
                job.advance(REGISTERED, now, height)
                for sid in sorted(self.pending):
                    if not reg[sid].verified:
                        self._send("verification", "verification", sid)
                job.advance(VERIFYING, now, height)
            elif waiting and height - job._requested_at >= self.patience_blocks:
                # nobody picked the request up; ask again (not a restart)
                self._request(waiting)
                self.pending |= {s for s in job.clone_list if s in reg and not reg[s].verified}
        elif job.phase == VERIFYING:
            failed = [s for s in job.clone_list if s not in reg]
            if failed:
                job.restart_count += 1
                if job.restart_count > job.restart_cap:
                    job.advance(FAILED, now, height)
                    return False
                job.advance(CLONE_REQUESTED, now, height)
                self._request(failed)
            elif all(reg[s].verified for s in job.clone_list):
                job.advance(VERIFIED, now, height)
                return False
        return True


def run_deployment(network, descriptor: dict, execution_chain: int | None = None, *,
                   restart_cap: int = 3, max_time: int | None = None) -> DeploymentJob:
    """Run the deployment protocol for ``descriptor`` until the job is terminal."""
    exec_chain = execution_chain if execution_chain is not None else descriptor["exec_chain"]
    bridge = network.world.bridge(exec_chain)
    verified = {sid for sid, e in bridge.registry.items() if e.verified}
    _, _, clone_list = analyze(descriptor, network.services, registered=verified)
    job = DeploymentJob(f"deploy:{descriptor['name']}", exec_chain, clone_list,
                        restart_cap=restart_cap)
    origins = {sid: (network.services[sid].chain, network.services[sid].logic_addr)
               for sid in clone_list}
    provider = Provider(network, job, origins)
    provider.start()
    limit = max_time if max_time is not None else network.world.now + 400 * network.world.min_block_time
    network.world.run_until(limit, stop=lambda: job.terminal)
    return job
