"""Bridging contract deployed on every chain.

Inbound messages are authenticated in three steps: the source header must be
canonical and final, the receipt must verify against the header's receipts
root, and the message id must be fresh. Accepted messages are dispatched by
topic. Payloads of protocol events are ``encode([dest_chain, body])``; the
body layouts are listed in ``docs/protocol.md``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import merkle
from .encoding import decode, digest, encode, sha256
from .ledger import Block, Contract, NotFound, Receipt, Revert, TxContext, UnknownHeight
from .merkle import ReceiptProof
from .state import ABORT, AMOUNT, COMMIT, CodeContract, LockError, LockRequest, StateContract
from .vm import VMError, from_bytecode

CLONE_REQ = "CLONE_REQ"
VERIFY_OUT = "VERIFY_OUT"
VERIFY_RESULT = "VERIFY_RESULT"
LOCK_REQ = "LOCK_REQ"
LOCK_RESULT = "LOCK_RESULT"
UPDATE_REQ = "UPDATE_REQ"
UPDATE_ACK = "UPDATE_ACK"
SEG_REQ = "SEG_REQ"
SEG_RESULT = "SEG_RESULT"
RESULT = "RESULT"

RELAYED_TOPICS = (VERIFY_OUT, VERIFY_RESULT, LOCK_REQ, LOCK_RESULT, UPDATE_REQ, UPDATE_ACK,
                  SEG_REQ, SEG_RESULT)
REPLY_TOPICS = (LOCK_RESULT, UPDATE_ACK, SEG_RESULT)

RELAY_FEE = 1


class BridgeError(Revert):
    pass


class AlreadyRegistered(BridgeError):
    pass


class NotFinalized(BridgeError):
    """The header is real but not yet deep enough. The relayer may resend."""


class BadProof(BridgeError):
    """Header unknown, proof invalid, or event not from the source bridge."""


class Banned(BridgeError):
    pass


@dataclass(frozen=True)
class CrossChainMessage:
    source_chain: int
    header: Block
    receipt_bytes: bytes
    proof: ReceiptProof
    event_index: int
    relayer: str = ""

    @property
    def message_id(self) -> bytes:
        tx_hash = self.header.tx_hashes[self.proof.leaf_index]
        return message_id(self.source_chain, tx_hash, self.event_index)

    @property
    def receipt(self) -> Receipt:
        return Receipt.decode(self.receipt_bytes)

    def args(self) -> list:
        return [self.source_chain, self.header.to_wire(), self.receipt_bytes,
                self.proof.to_wire(), self.event_index]

    def tampered(self, position: int) -> "CrossChainMessage":
        """Copy with one byte of the receipt flipped (fault injection)."""
        raw = bytearray(self.receipt_bytes)
        raw[position % len(raw)] ^= 0xFF
        return replace(self, receipt_bytes=bytes(raw))


def message_id(source_chain: int, tx_hash: bytes, event_index: int) -> bytes:
    return digest("msg", source_chain, tx_hash, event_index)


@dataclass
class RegistryEntry:
    service_id: str
    logic_addr: str
    origin_chain: int
    origin_addr: str
    cloner: str
    request_id: bytes
    deploy_gas: int
    verified: bool = False


class Bridge(Contract):
    STATE = ("registry", "seen", "fees", "scores", "reimbursed", "requests", "banned",
             "staged", "local_states", "endpoints")

    def __init__(self, address: str, chain_id: int, world=None):
        super().__init__(address)
        self.chain_id = chain_id
        self.world = world
        self.registry: dict[str, RegistryEntry] = {}
        self.seen: set[bytes] = set()
        self.fees: dict[str, int] = {}
        self.scores: dict[str, int] = {}
        self.reimbursed: dict[str, int] = {}
        self.requests: dict[bytes, dict[str, str]] = {}
        self.banned: set[tuple[str, str]] = set()
        self.staged: dict[bytes, dict[str, dict[str, int]]] = {}
        self.local_states: set[str] = set()
        self.endpoints: set[str] = set()
        # survives reverts: used for audits and metrics only
        self.stats = {"accepted": 0, "duplicate": 0, "bad_proof": 0, "not_final": 0,
                      "premature": 0, "verify_ok": 0, "verify_fail": 0}
        self.accepted_log: list[tuple[bytes, str, str, bytes]] = []  # (id, relayer, topic, tx)
        self.rejected_log: list[tuple[bytes, str, str]] = []

    # -- local wiring ---------------------------------------------------------
    def add_state(self, addr: str) -> None:
        self.local_states.add(addr)

    def add_endpoint(self, addr: str) -> None:
        self.endpoints.add(addr)

    def outbound(self, ctx: TxContext, topic: str, dest: int, body: list) -> None:
        ctx.emit(self.address, topic, encode([dest, body]))

    # -- read-only, gas-free queries ---------------------------------------------
    def chain(self):
        return self.world.chain(self.chain_id)

    def getcode(self, addr: str) -> bytes:
        c = self.chain().contract(addr)
        if not isinstance(c, CodeContract):
            raise NotFound(f"{addr} holds no bytecode")
        return c.bytecode

    def bytecode_hash(self, addr: str) -> bytes:
        return sha256(self.getcode(addr))

    def compare_bytes(self, local_addr: str, foreign_hash: bytes) -> bool:
        return self.bytecode_hash(local_addr) == foreign_hash

    def verified_logic(self, service_id: str) -> str | None:
        e = self.registry.get(service_id)
        return e.logic_addr if e is not None and e.verified else None

    # -- registry and cloning ---------------------------------------------------
    def reg_server(self, ctx: TxContext, service_id: str, logic_addr: str, origin_chain: int,
                   origin_addr: str, request_id: bytes, deploy_gas: int) -> None:
        if service_id in self.registry:
            raise AlreadyRegistered(service_id)
        ctx.touch(self)
        ctx.charge(ctx.schedule.storage_write)
        self.registry[service_id] = RegistryEntry(service_id, logic_addr, origin_chain,
                                                  origin_addr, ctx.sender, request_id, deploy_gas)

    def tx_request_clone(self, ctx: TxContext, invoked_chain: int, entries) -> bytes:
        """``entries`` is a list of ``[service_id, origin_addr]`` pairs."""
        entries = [list(e) for e in entries]
        if not entries:
            raise BridgeError("empty clone request")
        ctx.touch(self)
        rid = digest("clone", ctx.tx.hash, len(self.requests))
        self.requests[rid] = {sid: addr for sid, addr in entries}
        ctx.charge(ctx.schedule.storage_write)
        ctx.emit(self.address, CLONE_REQ, encode([self.chain_id, [rid, invoked_chain, entries]]))
        return rid

    def tx_clone(self, ctx: TxContext, service_id: str, bytecode: bytes, abi, name: str,
                 origin_chain: int, origin_addr: str, request_id):
        """Deploy a logic clone and register it in the same transaction."""
        try:
            program = from_bytecode(bytes(bytecode), abi, name)
        except VMError as exc:
            raise BridgeError(f"clone rejected: {exc}") from None
        if program.kind != "logic":
            raise BridgeError("only logic programs may be cloned")
        sender = ctx.sender
        addr = ctx.deploy(lambda a: CodeContract(a, program, deployer=sender), sender, program)
        deploy_gas = ctx.schedule.deploy_cost(program)
        req = self.requests.get(request_id) if request_id is not None else None
        if req is None or req.get(service_id) != origin_addr:
            self.stats["premature"] += 1
            return addr
        if (service_id, sender) in self.banned:
            raise Banned(f"{sender} may not clone {service_id} again")
        self.reg_server(ctx, service_id, addr, origin_chain, origin_addr, request_id, deploy_gas)
        return addr

    def tx_verification(self, ctx: TxContext, service_id: str) -> None:
        entry = self.registry.get(service_id)
        if entry is None or entry.verified:
            raise BridgeError(f"nothing to verify for {service_id}")
        code = self.getcode(entry.logic_addr)
        ctx.charge(ctx.schedule.hash_op * (1 + len(code) // 32))
        self.outbound(ctx, VERIFY_OUT, entry.origin_chain,
                      [service_id, sha256(code), entry.origin_addr, entry.logic_addr])

    def _on_verify_out(self, ctx: TxContext, src: int, body) -> None:
        service_id, foreign_hash, origin_addr, clone_addr = body
        try:
            ok = self.compare_bytes(origin_addr, foreign_hash)
        except NotFound:
            ok = False
        ctx.charge(ctx.schedule.hash_op * 2)
        self.outbound(ctx, VERIFY_RESULT, src, [service_id, ok, clone_addr])

    def _on_verify_result(self, ctx: TxContext, src: int, body) -> None:
        service_id, ok, clone_addr = body
        entry = self.registry.get(service_id)
        if entry is None or entry.verified or entry.logic_addr != clone_addr:
            return
        if entry.origin_chain != src:
            raise BadProof("verification result from the wrong chain")
        if ok:
            self.registry[service_id] = replace(entry, verified=True)
            self.scores[entry.cloner] = self.scores.get(entry.cloner, 0) + 1
            self.reimbursed[entry.cloner] = self.reimbursed.get(entry.cloner, 0) + entry.deploy_gas
            self.stats["verify_ok"] += 1
        else:
            self.scores[entry.cloner] = self.scores.get(entry.cloner, 0) - 1
            self.banned.add((service_id, entry.cloner))
            del self.registry[service_id]
            self.stats["verify_fail"] += 1

    # -- inbound messages -------------------------------------------------------
    def accept_inbound(self, ctx: TxContext, msg: CrossChainMessage):
        """Authenticate ``msg``. Returns ``(topic, body)`` or None for duplicates."""
        src = msg.source_chain
        mid_hint = b""
        try:
            if src == self.chain_id or src not in self.world.bridges:
                raise BadProof(f"unknown source chain {src}")
            source = self.world.chain(src)
            ctx.charge(ctx.schedule.hash_op)
            try:
                canonical = source.block(msg.header.height)
            except UnknownHeight:
                raise BadProof("header not on the source chain") from None
            if canonical.hash != msg.header.hash:
                raise BadProof("header not on the source chain")
            if not source.is_finalized(msg.header.height):
                raise NotFinalized(f"block {msg.header.height} of chain {src} not final")
            ctx.charge(ctx.schedule.hash_op * merkle.proof_hash_ops(msg.proof))
            if not merkle.verify(msg.header.receipts_root, msg.receipt_bytes, msg.proof):
                raise BadProof("receipt proof does not verify")
            mid_hint = msg.message_id
            receipt = msg.receipt
            if receipt.status != "success":
                raise BadProof("reverted transactions carry no events")
            log = receipt.logs[msg.event_index]
            if log.emitter != self.world.bridges[src]:
                raise BadProof("event not emitted by the source bridge")
            dest, body = decode(log.payload)
            if dest != self.chain_id:
                raise BadProof(f"message addressed to chain {dest}")
        except NotFinalized:
            self.stats["not_final"] += 1
            raise
        except BadProof as exc:
            self.stats["bad_proof"] += 1
            self.rejected_log.append((mid_hint, ctx.sender, str(exc)))
            raise
        except (IndexError, ValueError, TypeError) as exc:
            self.stats["bad_proof"] += 1
            self.rejected_log.append((mid_hint, ctx.sender, str(exc)))
            raise BadProof(f"malformed message: {exc}") from None
        mid = msg.message_id
        if mid in self.seen:
            self.stats["duplicate"] += 1
            return None
        ctx.touch(self)
        self.seen.add(mid)
        self.fees[ctx.sender] = self.fees.get(ctx.sender, 0) + RELAY_FEE
        return log.topic, body

    def tx_relay(self, ctx: TxContext, source_chain: int, header, receipt_bytes: bytes,
                 proof, event_index: int) -> str:
        try:
            msg = CrossChainMessage(source_chain, Block.from_wire(header), bytes(receipt_bytes),
                                    ReceiptProof.from_wire(proof), event_index, ctx.sender)
        except (ValueError, TypeError) as exc:
            self.stats["bad_proof"] += 1
            raise BadProof(f"malformed message: {exc}") from None
        accepted = self.accept_inbound(ctx, msg)
        if accepted is None:
            return "duplicate"
        topic, body = accepted
        self._dispatch(ctx, source_chain, topic, body)
        # dispatch did not revert, so the message is in for good
        self.stats["accepted"] += 1
        self.accepted_log.append((msg.message_id, ctx.sender, topic, ctx.tx.hash))
        return "accepted"

    def _dispatch(self, ctx: TxContext, src: int, topic: str, body) -> None:
        if topic == LOCK_REQ:
            dispatch_lock(ctx, self, src, body)
        elif topic == UPDATE_REQ:
            dispatch_update(ctx, self, src, body)
        elif topic == SEG_REQ:
            from .baseline import run_segment
            run_segment(ctx, self, src, body)
        elif topic == VERIFY_OUT:
            self._on_verify_out(ctx, src, body)
        elif topic == VERIFY_RESULT:
            self._on_verify_result(ctx, src, body)
        elif topic in REPLY_TOPICS:
            reply_to = body[1]
            if reply_to not in self.endpoints:
                raise BadProof(f"{reply_to} is not a protocol endpoint here")
            handler = self.chain().contract(reply_to)
            getattr(handler, "on_" + topic.lower())(ctx, src, body)
        else:
            raise BadProof(f"unroutable topic {topic}")

    def local_state(self, addr: str) -> StateContract:
        if addr not in self.local_states:
            raise BridgeError(f"{addr} is not a state contract served by this bridge")
        return self.chain().contract(addr)


# ---------------------------------------------------------------- lock / update batches

def dispatch_lock(ctx: TxContext, bridge: Bridge, src: int, body) -> None:
    """LOCK_REQ body: ``[inv, reply_to, key, [[state_addr, requests, expiry_blocks], ...]]``.

    All sub-requests succeed together or none keeps its lock. The result
    carries ``{state_addr: {slot: [value, mode]}}``: the committed value for
    whole and read locks, the amount granted by this batch for amount locks.
    """
    inv, reply_to, key, subs = body
    touched = []
    snapshots: dict[str, dict] = {}
    try:
        for state_addr, requests, expiry_blocks in subs:
            state = bridge.local_state(state_addr)
            if all(c is not state for c, _ in touched):
                touched.append((state, state.snapshot()))
            reqs = [LockRequest.from_wire(r) for r in requests]
            state.lock_state(ctx, bridge.address, reqs, inv, ctx.height + expiry_blocks)
            snapshots[state_addr] = {r.slot: [r.amount if r.mode == AMOUNT else state.get(r.slot),
                                              r.mode] for r in reqs}
    except LockError as exc:
        for state, snap in touched:
            state.restore(snap)
        bridge.outbound(ctx, LOCK_RESULT, src, [inv, reply_to, key, False, {}, type(exc).__name__])
        return
    bridge.outbound(ctx, LOCK_RESULT, src, [inv, reply_to, key, True, snapshots, ""])


def dispatch_update(ctx: TxContext, bridge: Bridge, src: int, body) -> None:
    """UPDATE_REQ body: ``[inv, reply_to, key, outcome, {state_addr: values}, [state_addr...]]``."""
    inv, reply_to, key, outcome, values, states = body
    if outcome not in (COMMIT, ABORT):
        raise BridgeError(f"bad outcome {outcome!r}")
    staged = bridge.staged.get(inv, {})
    for state_addr in states:
        state = bridge.local_state(state_addr)
        if outcome == COMMIT:
            vals = values.get(state_addr, staged.get(state_addr, {}))
            state.update_state(ctx, bridge.address, inv, COMMIT, vals)
        elif inv in state._seen:
            state.update_state(ctx, bridge.address, inv, ABORT)
        else:
            state.cancel(ctx, bridge.address, inv)
    if inv in bridge.staged:
        ctx.touch(bridge)
        del bridge.staged[inv]
    bridge.outbound(ctx, UPDATE_ACK, src, [inv, reply_to, key, outcome])
