"""Atomic integrated execution: lock, execute once on the execution chain, update.

:class:`IntegrateX` is a contract on the execution chain. Users call
``invoke``; it emits one LOCK_REQ per invoked chain (or per call-tree node
when aggregation is off). When every lock result is in, a single internal
transaction runs the whole call tree against the transported snapshots and
the cloned logic. Its success is the commit point: UPDATE_REQ messages are
then retried until every chain acknowledges. Any lock failure, execution
failure or timeout before that point aborts the invocation and sends abort
updates to every invoked chain. The RESULT event is emitted once all chains
have acknowledged the final outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bridge import LOCK_REQ, RELAY_FEE, RESULT, UPDATE_REQ, Bridge
from .calltree import CallTree, ServiceInfo, StateRequirementSet, eval_arg, lock_requests
from .encoding import digest, encode
from .ledger import Contract, Revert, TxContext, calldata
from .state import ABORT, AMOUNT, COMMIT, READ, WHOLE
from .vm import GasMeter, VMError, execute

INIT = "Init"
LOCKING = "Locking"
EXECUTING = "Executing"
UPDATING = "Updating"
COMMITTED = "Committed"
ABORTED = "Aborted"

LOCK_CONFLICT = "LockConflict"
EXEC_FAILURE = "ExecFailure"
TIMEOUT = "Timeout"

TRANSITIONS = {
    INIT: {LOCKING, EXECUTING},
    LOCKING: {EXECUTING, ABORTED},
    EXECUTING: {UPDATING, ABORTED},
    UPDATING: {COMMITTED},
    COMMITTED: set(),
    ABORTED: set(),
}

EXEC_OVERHEAD_GAS = 2_000_000


class UnverifiedLogic(Revert):
    pass


class InsufficientFee(Revert):
    pass


class StaleInvocation(Revert):
    pass


class BadTransition(RuntimeError):
    pass


@dataclass
class DAppPlan:
    tree: CallTree
    req: StateRequirementSet
    services: dict[str, ServiceInfo]

    @property
    def name(self) -> str:
        return self.tree.name

    def node_info(self, node_id: str) -> ServiceInfo:
        return self.services[self.tree.nodes[node_id].service]

    def node_args(self, node_id: str, inputs: dict, outputs: dict) -> list[int]:
        return [eval_arg(a, inputs, outputs) for _, a in self.tree.nodes[node_id].args]


@dataclass
class Invocation:
    invocation_id: bytes
    dapp: str
    user: str
    inputs: dict
    status: str
    start_height: int
    start_time: int
    deadline_height: int
    exec_gas: int
    escrow: int
    groups: dict = field(default_factory=dict)          # group -> chain id
    group_states: dict = field(default_factory=dict)    # group -> [state_addr]
    lock_results: dict = field(default_factory=dict)    # group -> snapshots
    outputs: dict = field(default_factory=dict)         # node -> outputs
    commit_values: dict = field(default_factory=dict)   # state_addr -> {slot: value}
    acks: set = field(default_factory=set)
    reason: str = ""
    detail: str = ""
    finished: bool = False
    result_height: int = -1
    result_time: int = -1
    exec_order: int = -1
    last_wave: int = -1
    msgs: dict = field(default_factory=dict)
    per_chain: dict = field(default_factory=dict)      # chain -> {topic: count}
    spans: dict = field(default_factory=dict)          # chain -> [first send, last reply] (ms)
    retries: int = 0
    stale: int = 0
    history: list = field(default_factory=list)


def transition(inv: Invocation, new: str, height: int) -> None:
    if new not in TRANSITIONS[inv.status]:
        raise BadTransition(f"{inv.status} -> {new}")
    inv.status = new
    inv.history.append((new, height))


class SnapshotStorage:
    """Storage view over transported values. Unknown keys revert."""

    def __init__(self, values: dict[str, int]):
        self.values = dict(values)
        self.written: dict[str, int] = {}

    def get(self, key: str, default: int = 0) -> int:
        if key not in self.values:
            raise Revert(f"state {key} was not transported")
        return self.values[key]

    def __setitem__(self, key: str, value: int) -> None:
        if key not in self.values:
            raise Revert(f"state {key} was not locked")
        self.values[key] = value
        self.written[key] = value


def merge_snapshots(parts) -> dict[str, dict[str, int]]:
    """Combine per-batch snapshots: amounts add up, whole beats amount beats read."""
    rank = {WHOLE: 2, AMOUNT: 1, READ: 0}
    merged: dict[str, dict[str, list]] = {}
    for snap in parts:
        for addr, slots in snap.items():
            cur = merged.setdefault(addr, {})
            for slot, (value, mode) in slots.items():
                if slot not in cur:
                    cur[slot] = [value, mode]
                    continue
                cv, cm = cur[slot]
                if rank[mode] > rank[cm]:
                    cur[slot] = [value, mode]
                elif mode == cm == AMOUNT:
                    cur[slot] = [cv + value, AMOUNT]
    return {addr: {k: v for k, (v, _) in slots.items()} for addr, slots in merged.items()}


class IntegrateX(Contract):
    STATE = ("invocations", "order_counter")

    def __init__(self, address: str, chain_id: int, world, bridge_addr: str, *,
                 ta: bool = True, fgsl: bool = True, bridge_timeout: int = 20,
                 dapp_timeout: int = 10):
        super().__init__(address)
        self.chain_id = chain_id
        self.world = world
        self.bridge_addr = bridge_addr
        self.ta = ta
        self.fgsl = fgsl
        self.timeout = min(bridge_timeout, dapp_timeout)
        self.dapps: dict[str, DAppPlan] = {}
        self.invocations: dict[bytes, Invocation] = {}
        self.order_counter = 0

    # -- setup and helpers ------------------------------------------------------
    def install_dapp(self, plan: DAppPlan) -> None:
        self.dapps[plan.name] = plan

    @property
    def bridge(self) -> Bridge:
        return self.world.chain(self.chain_id).contract(self.bridge_addr)

    def expiry_blocks(self, dest: int) -> int:
        exec_bt = self.world.chain(self.chain_id).config.block_time
        dest_bt = self.world.chain(dest).config.block_time
        return 3 * self.timeout * max(1, -(-exec_bt // dest_bt))

    def required_fee(self, plan: DAppPlan) -> int:
        groups = len(plan.tree.remote_nodes()) if not self.ta else len(plan.tree.invoked_chains())
        return 4 * RELAY_FEE * groups

    def _count(self, inv: Invocation, topic: str) -> None:
        inv.msgs[topic] = inv.msgs.get(topic, 0) + 1

    def _send(self, ctx: TxContext, inv: Invocation, topic: str, group, body: list,
              retry: bool = False) -> None:
        chain = inv.groups[group]
        self.bridge.outbound(ctx, topic, chain, body)
        if retry:
            inv.retries += 1
        else:
            self._count(inv, topic)
            per = inv.per_chain.setdefault(chain, {})
            per[topic] = per.get(topic, 0) + 1
        inv.spans.setdefault(chain, [ctx.timestamp, ctx.timestamp])

    @staticmethod
    def _replied(ctx: TxContext, inv: Invocation, src: int) -> None:
        if src in inv.spans:
            inv.spans[src][1] = max(inv.spans[src][1], ctx.timestamp)

    def _journal(self, ctx: TxContext, inv_id: bytes) -> None:
        ctx.touch_item(self.invocations, inv_id)

    def _finish(self, ctx: TxContext, inv: Invocation) -> None:
        inv.finished = True
        inv.result_height = ctx.height
        inv.result_time = ctx.timestamp
        ctx.emit(self.address, RESULT, encode([inv.invocation_id, inv.status, inv.reason]))

    # -- entry point ------------------------------------------------------------
    def tx_invoke(self, ctx: TxContext, dapp: str, inputs: dict, exec_gas: int, fee: int) -> bytes:
        plan = self.dapps.get(dapp)
        if plan is None:
            raise Revert(f"unknown dApp {dapp!r}")
        for nid in plan.tree.remote_nodes():
            sid = plan.tree.nodes[nid].service
            if self.bridge.verified_logic(sid) is None:
                raise UnverifiedLogic(f"logic of {sid} is not verified on chain {self.chain_id}")
        if fee < self.required_fee(plan):
            raise InsufficientFee(f"fee {fee} < {self.required_fee(plan)}")
        inputs = dict(inputs)
        missing = [i for i in plan.tree.inputs if i not in inputs]
        if missing:
            raise Revert(f"missing inputs {missing}")
        inv_id = digest("inv", ctx.tx.hash)
        self._journal(ctx, inv_id)
        inv = Invocation(inv_id, dapp, ctx.sender, inputs, INIT, ctx.height, ctx.timestamp,
                         ctx.height + self.timeout, exec_gas, fee)
        self.invocations[inv_id] = inv
        try:
            groups = lock_requests(plan.tree, plan.req, plan.services, inputs,
                                   fgsl=self.fgsl, per_node=not self.ta)
        except (KeyError, ValueError) as exc:
            raise Revert(f"cannot derive lock amounts: {exc}") from None
        ctx.charge(ctx.schedule.storage_write)
        if not groups:
            transition(inv, EXECUTING, ctx.height)
            self._schedule_execute(ctx, inv)
            return inv_id
        transition(inv, LOCKING, ctx.height)
        for group, per_state in groups.items():
            chain = group if self.ta else plan.tree.nodes[group].chain
            inv.groups[group] = chain
            inv.group_states[group] = sorted(per_state)
        for group, per_state in groups.items():
            subs = [[addr, [r.to_wire() for r in reqs], self.expiry_blocks(inv.groups[group])]
                    for addr, reqs in per_state.items()]
            self._send(ctx, inv, LOCK_REQ, group, [inv_id, self.address, group, subs])
        return inv_id

    # -- phase 1 ----------------------------------------------------------------
    def on_lock_result(self, ctx: TxContext, src: int, body) -> None:
        inv_id, _, group, ok, snapshots, reason = body
        inv = self.invocations.get(inv_id)
        if inv is None:
            raise StaleInvocation("unknown invocation")
        self._journal(ctx, inv_id)
        self._replied(ctx, inv, src)
        if inv.status != LOCKING or group in inv.lock_results or inv.groups.get(group) != src:
            inv.stale += 1
            return
        if not ok:
            self._abort(ctx, inv, LOCK_CONFLICT, reason)
            return
        inv.lock_results[group] = snapshots
        if len(inv.lock_results) == len(inv.groups):
            transition(inv, EXECUTING, ctx.height)
            self._schedule_execute(ctx, inv)

    def _schedule_execute(self, ctx: TxContext, inv: Invocation) -> None:
        ctx.followup(self.address, self.address, calldata("execute", inv.invocation_id),
                     inv.exec_gas + EXEC_OVERHEAD_GAS)

    # -- phase 2 ----------------------------------------------------------------
    def tx_execute(self, ctx: TxContext, inv_id: bytes) -> None:
        if ctx.sender != self.address:
            raise Revert("execute is internal")
        inv = self.invocations[inv_id]
        if inv.status != EXECUTING:
            return
        self._journal(ctx, inv_id)
        plan = self.dapps[inv.dapp]
        chain = self.world.chain(self.chain_id)
        snapshots = merge_snapshots(inv.lock_results.values())
        views = {addr: SnapshotStorage(vals) for addr, vals in snapshots.items()}
        local = {}
        meter = GasMeter(inv.exec_gas)
        outputs: dict[str, tuple] = {}
        try:
            for nid in plan.tree.order:
                node = plan.tree.nodes[nid]
                info = plan.node_info(nid)
                args = plan.node_args(nid, inv.inputs, outputs)
                if node.chain == self.chain_id:
                    state = chain.contract(info.state_addr)
                    if info.state_addr not in local:
                        local[info.state_addr] = (state, state.snapshot())
                        ctx.touch(state)
                    storage = state.storage
                    logic = chain.contract(info.logic_addr).program
                else:
                    storage = views.setdefault(info.state_addr, SnapshotStorage({}))
                    logic_addr = self.bridge.verified_logic(info.service_id)
                    if logic_addr is None:
                        raise Revert(f"missing verified logic for {info.service_id}")
                    logic = chain.contract(logic_addr).program
                outputs[nid] = execute(info.state, node.function, args, gas=meter,
                                       schedule=ctx.schedule, storage=storage, logic=logic)
        except (Revert, VMError) as exc:
            for state, snap in local.values():
                state.restore(snap)
            ctx.charge(min(meter.used, inv.exec_gas))
            inv.detail = f"{type(exc).__name__}: {exc}"
            self._abort(ctx, inv, EXEC_FAILURE, inv.detail)
            return
        ctx.charge(meter.used)
        inv.outputs = outputs
        inv.commit_values = {addr: v.written for addr, v in views.items()}
        ctx.touch_attr(self, "order_counter")
        inv.exec_order = self.order_counter
        self.order_counter += 1
        transition(inv, UPDATING, ctx.height)
        if not inv.groups:
            transition(inv, COMMITTED, ctx.height)
            self._finish(ctx, inv)
            return
        self._wave(ctx, inv, COMMIT, list(inv.groups))

    # -- phase 3 ----------------------------------------------------------------
    def _wave(self, ctx: TxContext, inv: Invocation, outcome: str, groups,
              retry: bool = False) -> None:
        for group in groups:
            states = inv.group_states[group]
            values = ({a: inv.commit_values[a] for a in states if a in inv.commit_values}
                      if outcome == COMMIT else {})
            self._send(ctx, inv, UPDATE_REQ, group,
                       [inv.invocation_id, self.address, group, outcome, values, states], retry)
        inv.last_wave = ctx.height

    def _abort(self, ctx: TxContext, inv: Invocation, reason: str, detail: str = "") -> None:
        transition(inv, ABORTED, ctx.height)
        inv.reason = reason
        if detail and not inv.detail:
            inv.detail = detail
        if inv.groups:
            self._wave(ctx, inv, ABORT, list(inv.groups))
        else:
            self._finish(ctx, inv)

    def on_update_ack(self, ctx: TxContext, src: int, body) -> None:
        inv_id, _, group, outcome = body
        inv = self.invocations.get(inv_id)
        if inv is None:
            raise StaleInvocation("unknown invocation")
        self._journal(ctx, inv_id)
        self._replied(ctx, inv, src)
        expected = COMMIT if inv.status in (UPDATING, COMMITTED) else ABORT
        if outcome != expected or inv.finished or group in inv.acks:
            inv.stale += 1
            return
        inv.acks.add(group)
        if len(inv.acks) == len(inv.groups):
            if inv.status == UPDATING:
                transition(inv, COMMITTED, ctx.height)
            self._finish(ctx, inv)

    # -- per-block housekeeping --------------------------------------------------
    def _due(self, height: int):
        for inv in self.invocations.values():
            if inv.status == LOCKING and height > inv.deadline_height:
                yield inv
            elif (inv.status in (UPDATING, ABORTED) and not inv.finished
                  and inv.last_wave >= 0 and height - inv.last_wave >= self.timeout):
                yield inv

    def on_block_start(self, chain, height: int) -> list[bytes]:
        return [calldata("tick")] if any(True for _ in self._due(height)) else []

    def tx_tick(self, ctx: TxContext) -> list[bytes]:
        """Abort invocations past their deadline and re-send unacknowledged updates."""
        if ctx.sender != self.address:
            raise Revert("tick is internal")
        timed_out = []
        for inv in list(self._due(ctx.height)):
            self._journal(ctx, inv.invocation_id)
            if inv.status == LOCKING:
                self._abort(ctx, inv, TIMEOUT, "deadline passed")
                timed_out.append(inv.invocation_id)
            else:
                outcome = COMMIT if inv.status == UPDATING else ABORT
                missing = [g for g in inv.groups if g not in inv.acks]
                self._wave(ctx, inv, outcome, missing, retry=True)
        return timed_out

    # -- reads ------------------------------------------------------------------
    def check_timeouts(self, height: int) -> list[bytes]:
        """Invocations that the next block would abort for timeout (read-only)."""
        return [inv.invocation_id for inv in self._due(height) if inv.status == LOCKING]
