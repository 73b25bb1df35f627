"""Cross-chain atomicity audit.

Committed invocations are replayed in execution order against the monolithic
programs on a single storage per service, starting from a snapshot taken
before the workload. The audited network must end in exactly that state:
anything a committed invocation changed is everywhere, anything an aborted
one touched is nowhere. Lock pools must be empty and slot conservation must
hold once every invocation has finished.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .execution import ABORTED, COMMITTED
from .vm import VMError, execute


@dataclass
class AuditReport:
    checked: int = 0
    committed: int = 0
    aborted: int = 0
    unfinished: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def snapshot_states(network) -> dict[str, dict[str, int]]:
    return {sid: dict(network.state(sid).storage) for sid in network.services}


def oracle_replay(network, genesis: dict, invocations) -> tuple[dict, list]:
    """Replay ``invocations`` (ordered) on monolithic programs. Returns ``(storage, failures)``."""
    storage = {sid: dict(vals) for sid, vals in genesis.items()}
    failures = []
    for inv, plan in invocations:
        outputs: dict[str, tuple] = {}
        trial = {sid: dict(v) for sid, v in storage.items()}
        try:
            for nid in plan.tree.order:
                node = plan.tree.nodes[nid]
                info = plan.node_info(nid)
                args = plan.node_args(nid, inv.inputs, outputs)
                outputs[nid] = execute(info.monolithic, node.function, args, gas=10**12,
                                       storage=trial[info.service_id])
        except VMError as exc:
            failures.append((inv.invocation_id, f"{type(exc).__name__}: {exc}"))
            continue
        storage = trial
    return storage, failures


def _visible(storage: dict) -> dict:
    return {k: v for k, v in storage.items() if v != 0}


def audit(network, genesis: dict, endpoints=None) -> AuditReport:
    """Audit ``network`` against ``genesis`` (from :func:`snapshot_states`)."""
    endpoints = endpoints if endpoints is not None else [network.hub, network.coordinator]
    report = AuditReport()
    committed = []
    for ep in endpoints:
        for inv in ep.invocations.values():
            report.checked += 1
            if not inv.finished:
                report.unfinished += 1
                continue
            if inv.status == COMMITTED:
                report.committed += 1
                if len(inv.acks) != len(inv.groups):
                    report.violations.append((inv.invocation_id, "committed without every ack"))
                committed.append((ep, inv))
            elif inv.status == ABORTED:
                report.aborted += 1
            else:
                report.violations.append((inv.invocation_id, f"finished in {inv.status}"))
    if len({id(ep) for ep, _ in committed}) > 1:
        raise ValueError("audit one protocol endpoint per network")
    committed.sort(key=lambda pair: pair[1].exec_order)
    expected, failures = oracle_replay(
        network, genesis, [(inv, ep.dapps[inv.dapp]) for ep, inv in committed])
    for inv_id, why in failures:
        report.violations.append((inv_id, f"oracle rejects a committed invocation: {why}"))
    for sid in network.services:
        actual = _visible(network.state(sid).storage)
        want = _visible(expected[sid])
        if actual != want:
            diff = {k: (want.get(k), actual.get(k)) for k in set(actual) | set(want)
                    if want.get(k) != actual.get(k)}
            report.violations.append((sid, f"state differs from oracle: {diff}"))
    if report.unfinished == 0:
        for sid in network.services:
            st = network.state(sid)
            if any(st.lockpool.values()):
                report.violations.append((sid, "lock pool not empty"))
            if not st.conserved():
                report.violations.append((sid, "slot conservation broken"))
        for cid in network.world.chains:
            if network.world.bridge(cid).staged:
                report.violations.append((cid, "staged baseline writes left behind"))
    return report
