"""Seeded fault schedules for the atomicity audit.

Each seed picks a protocol, a relayer mix (always one honest relayer), a dApp,
a level of contention and zero or more injected failures. The run is then
audited against the monolithic oracle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ledger import ChainConfig
from .relayer import DROP, HONEST, PREMATURE, TAMPER
from .samples import TRAIN_STORAGE, HOTEL_STORAGE
from .scenario import RelayerSpec, RunSpec, ServiceSpec, Workload

FAULT_RELAYERS = ((DROP, 1.0), (TAMPER, 0.5), (PREMATURE, 0.0))


@dataclass
class FaultOutcome:
    seed: int
    spec: RunSpec
    injected: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.summary.get("audit_ok") == "true"

    def summary_row(self) -> dict:
        row = dict(self.summary)
        row["scenario"] = "fault-suite"
        return row


def fault_schedule(seed: int) -> tuple[RunSpec, list[str]]:
    """Derive a run and the list of injected fault kinds from ``seed``."""
    rng = random.Random(seed)
    injected = []
    protocol = rng.choice(("integratex", "integratex", "baseline"))
    relayers = [RelayerSpec("r0", HONEST)]
    for i in range(rng.randint(1, 3)):
        behavior, p = rng.choice(FAULT_RELAYERS)
        relayers.append(RelayerSpec(f"f{i}", behavior, p))
        injected.append(behavior)
    train, hotel = dict(TRAIN_STORAGE), dict(HOTEL_STORAGE)
    n = rng.randint(1, 3)
    exec_gas = 5_000_000
    if rng.random() < 0.2:                      # bookings that overrun capacity
        train["seats"] = rng.randint(0, 4)
        hotel["remain"] = rng.randint(0, 4)
        injected.append("exec_failure")
    if rng.random() < 0.1:
        exec_gas = rng.choice((500, 3_000, 20_000))
        injected.append("gas_exhaustion")
    dapp_timeout = 10
    if rng.random() < 0.15:
        dapp_timeout = rng.randint(1, 3)
        injected.append("timeout")
    clients = rng.choice((1, 1, 2, 3, 4))
    if clients > 1:
        injected.append("contention")
    fgsl = rng.random() < 0.7
    lock_size = rng.choice((1, 1, 2, 4))
    if rng.random() < 0.5:
        dapp = {"builtin": "train-hotel"}
    else:
        dapp = {"builtin": "random", "seed": rng.randrange(2**31), "max_nodes": 8}
    services = [ServiceSpec("agency", 1, "agency"),
                ServiceSpec("train", 2, "train", lock_size, train),
                ServiceSpec("hotel", 3, "hotel", lock_size, hotel)]
    if rng.random() < 0.3:                      # a second train on the execution chain
        services.append(ServiceSpec("train2", 1, "train", lock_size, dict(train)))
    chains = [ChainConfig(i, 5_000, 4096, 1) for i in (1, 2, 3)]
    spec = RunSpec(
        label=f"fault/seed={seed}", protocol=protocol, seed=seed, chains=chains, exec_chain=1,
        ta=rng.random() < 0.8, fgsl=fgsl, bridge_timeout=20, dapp_timeout=dapp_timeout,
        deploy="preinstalled", restart_cap=3, services=services, relayers=relayers, dapp=dapp,
        workload=Workload(clients=clients, requests=rng.randint(1, 2), n=n, exec_gas=exec_gas,
                          retry=True, max_attempts=3, horizon=1_000 * 5_000),
    )
    return spec, injected


def fault_run(seed: int) -> FaultOutcome:
    from .bench import execute_run

    spec, injected = fault_schedule(seed)
    res = execute_run(spec, "fault-suite")
    out = FaultOutcome(seed, spec, injected, res.summary, list(res.report.violations))
    if res.report.unfinished:
        out.violations.append(("run", f"{res.report.unfinished} invocations did not terminate"))
        out.summary["audit_ok"] = "false"
        out.summary["violations"] = len(out.violations)
    return out
