"""Sequential cross-chain execution baseline with whole-contract locks.

A coordinator on the execution chain walks the call tree in execution order.
Each remote node becomes a segment: a SEG_REQ goes to the node's home chain,
which locks the whole contract, runs the node against staged state and sends
back a SEG_RESULT. The next segment starts only when the previous result is in.
Staged writes stay on the home chain until a final commit or abort wave.
"""

from __future__ import annotations

from .bridge import RELAY_FEE, SEG_REQ, SEG_RESULT, Bridge
from .encoding import digest
from .execution import (ABORTED, COMMITTED, EXEC_FAILURE, EXECUTING, INIT, LOCK_CONFLICT, TIMEOUT,
                        UPDATING, DAppPlan, IntegrateX, Invocation, InsufficientFee, transition)
from .ledger import Revert, TxContext
from .state import ABORT, COMMIT, WHOLE, LockError, LockRequest, StateContract
from .vm import GasMeter, VMError, analyze_access, execute, slot_key

SEGMENT_GAS = 5_000_000


class StagedStorage:
    """Reads see this invocation's staged writes over committed values."""

    def __init__(self, state: StateContract, staged: dict[str, int]):
        self.state = state
        self.staged = staged

    def get(self, key: str, default: int = 0) -> int:
        if key in self.staged:
            return self.staged[key]
        return self.state.get(key)

    def __setitem__(self, key: str, value: int) -> None:
        self.staged[key] = value


def whole_contract_locks(state: StateContract, function: str, args: list[int]) -> list[LockRequest]:
    keys = [s.name for s in state.program.slots
            if s.type != "map" and s.name not in ("lock_size", "lockpool")
            and not s.name.startswith("addr_l")]
    acc = analyze_access(state.program, function)
    for slot, idx in list(acc.reads) + list(acc.writes):
        if idx is not None:
            k = slot_key(slot, args[idx])
            if k not in keys:
                keys.append(k)
    return [LockRequest(k, WHOLE) for k in keys]


def execute_segment(ctx: TxContext, bridge: Bridge, inv: bytes, state_addr: str, function: str,
                    args: list[int], expiry_blocks: int, gas: int):
    """Lock and run one node on its home chain. Returns ``(ok, outputs, reason)``."""
    state = bridge.local_state(state_addr)
    chain = bridge.chain()
    ctx.touch(bridge)
    before_state = state.snapshot()
    try:
        state.lock_state(ctx, bridge.address, whole_contract_locks(state, function, args),
                         inv, ctx.height + expiry_blocks)
    except LockError as exc:
        state.restore(before_state)
        return False, [], LOCK_CONFLICT + ":" + type(exc).__name__
    staged_all = bridge.staged.setdefault(inv, {})
    before_staged = dict(staged_all.get(state_addr, {}))
    staged = staged_all.setdefault(state_addr, {})
    logic = chain.contract(state.logic_addr).program
    meter = GasMeter(gas)
    try:
        outs = execute(state.program, function, args, gas=meter, schedule=ctx.schedule,
                       storage=StagedStorage(state, staged), logic=logic)
    except (Revert, VMError) as exc:
        staged_all[state_addr] = before_staged
        state.restore(before_state)
        ctx.charge(min(meter.used, gas))
        return False, [], EXEC_FAILURE + ":" + type(exc).__name__
    ctx.charge(meter.used)
    return True, list(outs), ""


def run_segment(ctx: TxContext, bridge: Bridge, src: int, body) -> None:
    """SEG_REQ body: ``[inv, reply_to, node_id, state_addr, function, args, expiry_blocks, gas]``."""
    inv, reply_to, node_id, state_addr, function, args, expiry_blocks, gas = body
    ok, outs, reason = execute_segment(ctx, bridge, inv, state_addr, function, list(args),
                                       expiry_blocks, gas)
    bridge.outbound(ctx, SEG_RESULT, src, [inv, reply_to, node_id, ok, outs, reason])


class Coordinator(IntegrateX):
    """Baseline driver. Reuses the invocation record and update/ack handling."""

    STATE = IntegrateX.STATE + ("cursor",)

    def __init__(self, address: str, chain_id: int, world, bridge_addr: str, *,
                 bridge_timeout: int = 20, dapp_timeout: int = 10):
        super().__init__(address, chain_id, world, bridge_addr, ta=True, fgsl=False,
                         bridge_timeout=bridge_timeout, dapp_timeout=dapp_timeout)
        self.cursor: dict[bytes, int] = {}

    def _journal(self, ctx: TxContext, inv_id: bytes) -> None:
        super()._journal(ctx, inv_id)
        ctx.touch_item(self.cursor, inv_id)

    def required_fee(self, plan: DAppPlan) -> int:
        return RELAY_FEE * (2 * len(plan.tree.remote_nodes()) + 2 * len(plan.tree.invoked_chains()))

    def _expiry(self, plan: DAppPlan, dest: int) -> int:
        return self.expiry_blocks(dest) * (len(plan.tree.remote_nodes()) + 1)

    def tx_invoke(self, ctx: TxContext, dapp: str, inputs: dict, exec_gas: int, fee: int) -> bytes:
        plan = self.dapps.get(dapp)
        if plan is None:
            raise Revert(f"unknown dApp {dapp!r}")
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
        self.cursor[inv_id] = 0
        ctx.charge(ctx.schedule.storage_write)
        transition(inv, EXECUTING, ctx.height)
        self._advance(ctx, inv)
        return inv_id

    def _advance(self, ctx: TxContext, inv: Invocation) -> None:
        plan = self.dapps[inv.dapp]
        order = plan.tree.order
        while self.cursor[inv.invocation_id] < len(order):
            nid = order[self.cursor[inv.invocation_id]]
            node = plan.tree.nodes[nid]
            info = plan.node_info(nid)
            args = plan.node_args(nid, inv.inputs, inv.outputs)
            states = inv.group_states.setdefault(node.chain, [])
            if info.state_addr not in states:
                states.append(info.state_addr)
                states.sort()
            if node.chain == self.chain_id:
                ok, outs, reason = execute_segment(ctx, self.bridge, inv.invocation_id,
                                                   info.state_addr, node.function, args,
                                                   self._expiry(plan, node.chain), inv.exec_gas)
                if not ok:
                    self._fail(ctx, inv, reason)
                    return
                inv.outputs[nid] = tuple(outs)
                self.cursor[inv.invocation_id] += 1
                continue
            inv.groups[node.chain] = node.chain
            inv.deadline_height = ctx.height + self.timeout
            self._send(ctx, inv, SEG_REQ, node.chain,
                       [inv.invocation_id, self.address, nid, info.state_addr, node.function,
                        args, self._expiry(plan, node.chain), inv.exec_gas])
            return
        # all segments done: commit wave
        ctx.touch_attr(self, "order_counter")
        inv.exec_order = self.order_counter
        self.order_counter += 1
        transition(inv, UPDATING, ctx.height)
        self._settle_local(ctx, inv, COMMIT)
        if not inv.groups:
            transition(inv, COMMITTED, ctx.height)
            self._finish(ctx, inv)
            return
        self._wave(ctx, inv, COMMIT, list(inv.groups))

    def _settle_local(self, ctx: TxContext, inv: Invocation, outcome: str) -> None:
        states = inv.group_states.get(self.chain_id)
        if not states:
            return
        bridge = self.bridge
        ctx.touch(bridge)
        for addr in states:
            state = bridge.local_state(addr)
            if outcome == COMMIT:
                vals = bridge.staged.get(inv.invocation_id, {}).get(addr, {})
                state.update_state(ctx, bridge.address, inv.invocation_id, COMMIT, vals)
            elif inv.invocation_id in state._seen:
                state.update_state(ctx, bridge.address, inv.invocation_id, ABORT)
            else:
                state.cancel(ctx, bridge.address, inv.invocation_id)
        bridge.staged.pop(inv.invocation_id, None)

    def _fail(self, ctx: TxContext, inv: Invocation, reason: str) -> None:
        kind, _, detail = reason.partition(":")
        self._settle_local(ctx, inv, ABORT)
        self._abort(ctx, inv, kind or EXEC_FAILURE, detail)

    def on_seg_result(self, ctx: TxContext, src: int, body) -> None:
        inv_id, _, node_id, ok, outs, reason = body
        inv = self.invocations.get(inv_id)
        if inv is None:
            raise Revert("unknown invocation")
        self._journal(ctx, inv_id)
        self._replied(ctx, inv, src)
        plan = self.dapps[inv.dapp]
        cur = self.cursor[inv_id]
        if (inv.status != EXECUTING or cur >= len(plan.tree.order)
                or plan.tree.order[cur] != node_id):
            inv.stale += 1
            return
        if not ok:
            self._fail(ctx, inv, reason)
            return
        inv.outputs[node_id] = tuple(outs)
        self.cursor[inv_id] += 1
        self._advance(ctx, inv)

    def _due(self, height: int):
        for inv in self.invocations.values():
            if inv.status == EXECUTING and height > inv.deadline_height:
                yield inv
            elif (inv.status in (UPDATING, ABORTED) and not inv.finished
                  and inv.last_wave >= 0 and height - inv.last_wave >= self.timeout):
                yield inv

    def tx_tick(self, ctx: TxContext) -> list[bytes]:
        if ctx.sender != self.address:
            raise Revert("tick is internal")
        timed_out = []
        for inv in list(self._due(ctx.height)):
            self._journal(ctx, inv.invocation_id)
            if inv.status == EXECUTING:
                self._settle_local(ctx, inv, ABORT)
                self._abort(ctx, inv, TIMEOUT, "segment deadline passed")
                timed_out.append(inv.invocation_id)
            else:
                outcome = COMMIT if inv.status == UPDATING else ABORT
                missing = [g for g in inv.groups if g not in inv.acks]
                self._wave(ctx, inv, outcome, missing, retry=True)
        return timed_out

    def check_timeouts(self, height: int) -> list[bytes]:
        return [inv.invocation_id for inv in self._due(height) if inv.status == EXECUTING]

