"""Deployed code contracts and state contracts with a lock pool.

A :class:`StateContract` keeps committed slot values plus a lock pool of
:class:`LockBag` entries keyed by invocation id. Three lock modes exist:

``whole``   exclusive lock on the slot.
``read``    shared lock; compatible only with other reads.
``amount``  reserves part of an unsigned-integer slot. Many invocations can
            hold amount bags on one slot as long as the sum fits.

For every slot, ``committed == available + sum(amount bags)`` holds at all
times. ``lock_state`` and ``update_state`` are only callable by the bridge.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ledger import Contract, Revert, TxContext
from .vm import DEFAULT_GAS, GasMeter, Program, STATE, execute

WHOLE = "whole"
READ = "read"
AMOUNT = "amount"
MODES = (WHOLE, READ, AMOUNT)

COMMIT = "commit"
ABORT = "abort"
EXPIRED = "expired"


class LockError(Revert):
    pass


class Unauthorized(LockError):
    pass


class AlreadyLocked(LockError):
    pass


class InsufficientAvailable(LockError):
    pass


class UnknownInvocation(LockError):
    pass


class InvocationSettled(LockError):
    pass


@dataclass(frozen=True)
class LockBag:
    invocation_id: bytes
    slot: str
    mode: str
    amount: int
    expiry_height: int


@dataclass(frozen=True)
class LockRequest:
    slot: str
    mode: str
    amount: int = 0

    def to_wire(self) -> list:
        return [self.slot, self.mode, self.amount]

    @classmethod
    def from_wire(cls, raw) -> "LockRequest":
        return cls(*raw)


class CodeContract(Contract):
    """Any program deployed as bytecode. Logic programs carry no storage."""

    STATE = ("storage",)

    def __init__(self, address: str, program: Program, deployer: str = "",
                 storage: dict | None = None):
        super().__init__(address)
        self.program = program
        self.deployer = deployer
        self.storage: dict[str, int] = dict(storage or {})

    @property
    def kind(self) -> str:
        return self.program.kind

    @property
    def bytecode(self) -> bytes:
        return self.program.bytecode

    @property
    def code_hash(self) -> bytes:
        return self.program.code_hash

    def run(self, fname: str, args, gas: int | GasMeter = 10**9, schedule=DEFAULT_GAS):
        """Read-only evaluation (a view call or a pure logic call)."""
        scratch = dict(self.storage)
        return execute(self.program, fname, args, gas=gas, schedule=schedule, storage=scratch)

    def tx_call(self, ctx: TxContext, fname: str, args):
        ctx.touch(self)
        return execute(self.program, fname, args, gas=ctx.gas, schedule=ctx.schedule,
                       storage=self.storage)


class LocalView:
    """Storage view for ordinary (non-bridge) calls that respects the lock pool."""

    def __init__(self, contract: "StateContract"):
        self.c = contract

    def get(self, key: str, default: int = 0) -> int:
        modes = self.c.modes_on(key)
        if WHOLE in modes:
            raise Revert(f"{key} is locked")
        return self.c.available(key)

    def __setitem__(self, key: str, value: int) -> None:
        modes = self.c.modes_on(key)
        if modes & {WHOLE, READ}:
            raise Revert(f"{key} is locked")
        self.c.storage[key] = value + self.c.pooled(key)


class StateContract(CodeContract):
    STATE = ("storage", "lockpool", "settled", "lock_size", "_seen")

    def __init__(self, address: str, program: Program, *, logic_addr: str, bridge_addr: str,
                 deployer: str = "", storage: dict | None = None, lock_size: int = 1):
        if program.kind != STATE:
            raise ValueError("state contracts need a state program")
        super().__init__(address, program, deployer, storage)
        self.logic_addr = logic_addr
        self.bridge_addr = bridge_addr
        self.lock_size = lock_size
        self.lockpool: dict[bytes, list[LockBag]] = {}
        self.settled: dict[bytes, str] = {}
        self._seen: set[bytes] = set()

    # -- views ---------------------------------------------------------------
    def slot_type(self, key: str) -> str:
        base = key.split("[", 1)[0]
        for s in self.program.slots:
            if s.name == base:
                return "uint" if s.type == "map" else s.type
        raise Revert(f"unknown slot {key}")

    def get(self, key: str) -> int:
        return self.storage.get(key, 0)

    def bags_on(self, key: str):
        for bags in self.lockpool.values():
            for bag in bags:
                if bag.slot == key:
                    yield bag

    def modes_on(self, key: str, exclude: bytes | None = None) -> set[str]:
        return {b.mode for b in self.bags_on(key) if b.invocation_id != exclude}

    def pooled(self, key: str, invocation_id: bytes | None = None) -> int:
        return sum(b.amount for b in self.bags_on(key)
                   if b.mode == AMOUNT and (invocation_id is None or b.invocation_id == invocation_id))

    def available(self, key: str) -> int:
        return self.get(key) - self.pooled(key)

    def conserved(self) -> bool:
        keys = {b.slot for bags in self.lockpool.values() for b in bags}
        return all(self.available(k) >= 0 for k in keys)

    # -- bridge-gated entry points ---------------------------------------
    def _check_bridge(self, caller: str) -> None:
        if caller != self.bridge_addr:
            raise Unauthorized(f"{caller} is not the registered bridge")

    def lock_state(self, ctx: TxContext | None, caller: str, requests, invocation_id: bytes,
                   expiry_height: int) -> dict[str, int]:
        self._check_bridge(caller)
        if invocation_id in self.settled:
            raise InvocationSettled("invocation already settled here")
        requests = [r if isinstance(r, LockRequest) else LockRequest.from_wire(r) for r in requests]
        # validate everything before mutating
        extra: dict[str, int] = {}
        for r in requests:
            if r.mode not in MODES:
                raise Revert(f"bad lock mode {r.mode!r}")
            others = self.modes_on(r.slot, exclude=invocation_id)
            mine = self.modes_on(r.slot) - others if others else {
                b.mode for b in self.bags_on(r.slot) if b.invocation_id == invocation_id}
            if r.mode == WHOLE:
                if others:
                    raise AlreadyLocked(f"{r.slot} is held by another invocation")
            elif r.mode == READ:
                if others - {READ}:
                    raise AlreadyLocked(f"{r.slot} is held exclusively or partially")
            else:
                if self.slot_type(r.slot) != "uint" or "[" in r.slot:
                    raise Revert(f"{r.slot} cannot be locked by amount")
                if r.amount <= 0:
                    raise Revert("amount locks need a positive amount")
                if others - {AMOUNT}:
                    raise AlreadyLocked(f"{r.slot} is held exclusively")
                if WHOLE in mine:
                    continue
                extra[r.slot] = extra.get(r.slot, 0) + r.amount
                if self.available(r.slot) < extra[r.slot]:
                    raise InsufficientAvailable(
                        f"{r.slot}: need {extra[r.slot]}, available {self.available(r.slot)}")
        if ctx is not None:
            ctx.touch(self)
        bags = self.lockpool.setdefault(invocation_id, [])
        for r in requests:
            mine = {b.mode for b in bags if b.slot == r.slot}
            if r.mode == AMOUNT and WHOLE in mine:
                continue
            if r.mode != AMOUNT and r.mode in mine:
                continue
            if ctx is not None:
                ctx.charge(ctx.schedule.storage_write)
            bags.append(LockBag(invocation_id, r.slot, r.mode,
                                r.amount if r.mode == AMOUNT else 0, expiry_height))
        self._seen.add(invocation_id)
        return self.snapshot_for(invocation_id)

    def snapshot_for(self, invocation_id: bytes) -> dict[str, int]:
        """Values an invocation may compute with: pooled amount or committed value."""
        out = {}
        for bag in self.lockpool.get(invocation_id, []):
            modes = {b.mode for b in self.lockpool[invocation_id] if b.slot == bag.slot}
            if modes & {WHOLE, READ}:
                out[bag.slot] = self.get(bag.slot)
            else:
                out[bag.slot] = self.pooled(bag.slot, invocation_id)
        return out

    def update_state(self, ctx: TxContext | None, caller: str, invocation_id: bytes,
                     outcome: str, values: dict | None = None) -> str:
        self._check_bridge(caller)
        if invocation_id in self.settled:
            return "noop"
        if invocation_id not in self._seen:
            raise UnknownInvocation("no locks were ever taken for this invocation")
        bags = self.lockpool.get(invocation_id, [])
        values = dict(values or {})
        held = {b.slot for b in bags}
        if outcome == COMMIT:
            for key in values:
                if key not in held:
                    raise Revert(f"commit writes unlocked slot {key}")
                modes = {b.mode for b in bags if b.slot == key}
                if WHOLE in modes:
                    continue
                if AMOUNT in modes:
                    if values[key] > self.pooled(key, invocation_id):
                        raise Revert(f"commit of {key} exceeds its pooled amount")
                elif values[key] != self.get(key):
                    raise Revert(f"commit changes read-locked slot {key}")
        elif outcome != ABORT:
            raise Revert(f"bad outcome {outcome!r}")
        if ctx is not None:
            ctx.touch(self)
            ctx.charge(ctx.schedule.storage_write * (len(bags) + len(values)))
        if outcome == COMMIT:
            for key, value in sorted(values.items()):
                modes = {b.mode for b in bags if b.slot == key}
                if WHOLE in modes:
                    self.storage[key] = value
                elif AMOUNT in modes:
                    self.storage[key] = self.get(key) - self.pooled(key, invocation_id) + value
        self.lockpool.pop(invocation_id, None)
        self.settled[invocation_id] = outcome
        return "ack"

    def cancel(self, ctx: TxContext | None, caller: str, invocation_id: bytes) -> None:
        """Tombstone an invocation so a late lock request for it is refused."""
        self._check_bridge(caller)
        if invocation_id in self.settled:
            return
        if ctx is not None:
            ctx.touch(self)
        self.lockpool.pop(invocation_id, None)
        self._seen.add(invocation_id)
        self.settled[invocation_id] = ABORT

    def expire(self, height: int) -> list[bytes]:
        """Release bags whose expiry height has been reached (self-expiry backstop)."""
        gone = [inv for inv, bags in self.lockpool.items()
                if bags and min(b.expiry_height for b in bags) <= height]
        for inv in gone:
            del self.lockpool[inv]
            self.settled[inv] = EXPIRED
        return gone

    def on_block_start(self, chain, height: int) -> list[bytes]:
        self.expire(height)
        return []

    # -- ordinary calls -----------------------------------------------------
    def tx_setLocksize(self, ctx: TxContext, size: int) -> None:
        if ctx.sender != self.deployer:
            raise Unauthorized("only the deployer may set lock_size")
        if size <= 0:
            raise Revert("lock_size must be positive")
        ctx.touch(self)
        ctx.charge(ctx.schedule.storage_write)
        self.lock_size = size

    def tx_call(self, ctx: TxContext, fname: str, args):
        ctx.touch(self)
        logic = ctx.chain.contract(self.logic_addr).program
        return execute(self.program, fname, args, gas=ctx.gas, schedule=ctx.schedule,
                       storage=LocalView(self), logic=logic)
