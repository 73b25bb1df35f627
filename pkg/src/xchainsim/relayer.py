"""Off-chain relayers: poll finalized events, carry them with proofs, clone logic.

Behaviours:

* ``honest``: relays every protocol event once it is final, resends if the
  destination has not accepted it after a while, races to clone on CLONE_REQ.
* ``drop``: like honest but silently skips each event with probability ``p``.
* ``tamper``: like honest but, with probability ``p``, flips one receipt byte
  of a relayed message or alters one instruction of a cloned program.
* ``premature_clone``: clones every known remote logic program before any
  request exists and relays nothing.

All random draws come from a generator seeded by (scenario seed, relayer id).
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from .bridge import CLONE_REQ, RELAYED_TOPICS, CrossChainMessage, message_id
from .encoding import decode, digest
from .ledger import BadNonce, Block, InsufficientBalance, Receipt, Transaction, calldata
from .sim import PRIO_RELAYER
from .vm import Instr, Program, replace_instruction

log = logging.getLogger(__name__)

HONEST = "honest"
DROP = "drop"
TAMPER = "tamper"
PREMATURE = "premature_clone"
BEHAVIOURS = (HONEST, DROP, TAMPER, PREMATURE)

RELAY_GAS = 5_000_000
CLONE_GAS = 20_000_000


@dataclass(frozen=True)
class RelayerConfig:
    relayer_id: str
    behavior: str = HONEST
    p: float = 0.0
    poll_interval: int | None = None
    balance: int = 10**15

    def __post_init__(self):
        if self.behavior not in BEHAVIOURS:
            raise ValueError(f"unknown relayer behaviour {self.behavior!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be within [0, 1]")

    @property
    def account(self) -> str:
        return f"relayer:{self.relayer_id}"


@dataclass
class SentTx:
    chain: int
    tx_hash: bytes
    kind: str
    message: bytes = b""
    tampered: bool = False


def tamper_program(program: Program) -> Program | None:
    """Alter the first ``push`` constant of the first function that has one."""
    for f in program.functions:
        for pc, ins in enumerate(f.code):
            if ins.op == "push":
                return replace_instruction(program, f.name, pc, Instr("push", ins.arg + 1))
    return None


@dataclass
class Relayer:
    world: object
    config: RelayerConfig
    seed: int = 0
    phase: int = 0
    cursors: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)
    sent: list = field(default_factory=list)
    dropped: int = 0
    tampered: int = 0
    errors: int = 0
    cloned_early: bool = False

    def __post_init__(self):
        self.rng = random.Random(digest("relayer", self.seed, self.config.relayer_id))
        self.account = self.config.account
        for chain in self.world.chains.values():
            chain.fund(self.account, self.config.balance)
            self.cursors[chain.chain_id] = 0

    @property
    def interval(self) -> int:
        return self.config.poll_interval or max(1, self.world.min_block_time // 2)

    def start(self) -> None:
        self.world.sched.every(self.interval, self.poll, self.world.now + self.phase, PRIO_RELAYER)

    # -- submission ---------------------------------------------------------------
    def _submit(self, chain_id: int, target: str, method: str, args: list, gas: int):
        chain = self.world.chain(chain_id)
        tx = Transaction(chain_id, self.account, chain.next_nonce(self.account), target,
                         calldata(method, *args), gas)
        try:
            return chain.submit_tx(tx)
        except (InsufficientBalance, BadNonce) as exc:
            self.errors += 1
            log.info("relayer %s could not submit on chain %s: %s", self.config.relayer_id,
                     chain_id, exc)
            return None

    # -- main loop --------------------------------------------------------------------
    def poll(self) -> list[bytes]:
        submitted: list[bytes] = []
        if self.config.behavior == PREMATURE:
            if not self.cloned_early:
                self.cloned_early = True
                submitted += self._premature_clones()
            return submitted
        for cid in sorted(self.world.chains):
            chain = self.world.chain(cid)
            final_head = chain.height - chain.config.confirmation_depth
            for h in range(self.cursors[cid] + 1, final_head + 1):
                submitted += self._scan_block(chain, h)
                self.cursors[cid] = h
        submitted += self._resend()
        return submitted

    def _scan_block(self, chain, height: int) -> list[bytes]:
        out = []
        bridge_addr = self.world.bridges.get(chain.chain_id)
        header: Block = chain.block(height)
        for i, receipt in enumerate(chain.receipts[height]):
            if receipt.status != "success":
                continue
            for ev, lg in enumerate(receipt.logs):
                if lg.emitter != bridge_addr:
                    continue
                if lg.topic == CLONE_REQ:
                    out += self._on_clone_req(chain.chain_id, lg.payload)
                elif lg.topic in RELAYED_TOPICS:
                    res = self._relay(chain, header, i, receipt, ev, lg)
                    if res is not None:
                        out.append(res)
        return out

    def _relay(self, chain, header: Block, index: int, receipt: Receipt, ev: int, lg):
        dest, _ = decode(lg.payload)
        if dest not in self.world.bridges:
            return None
        mid = message_id(chain.chain_id, receipt.tx_hash, ev)
        if mid in self.world.bridge(dest).seen:
            return None
        if self.config.behavior == DROP and self.rng.random() < self.config.p:
            self.dropped += 1
            return None
        _, rcpt, proof = chain.get_receipt_proof(receipt.tx_hash)
        msg = CrossChainMessage(chain.chain_id, header, rcpt.encode(), proof, ev,
                                self.config.relayer_id)
        tampered = self.config.behavior == TAMPER and self.rng.random() < self.config.p
        if tampered:
            msg = msg.tampered(self.rng.randrange(len(msg.receipt_bytes)))
            self.tampered += 1
        else:
            self.pending[mid] = (msg, dest, self.world.now)
        return self._send(msg, dest, mid, tampered)

    def _send(self, msg: CrossChainMessage, dest: int, mid: bytes, tampered: bool):
        h = self._submit(dest, self.world.bridges[dest], "relay", msg.args(), RELAY_GAS)
        if h is not None:
            self.sent.append(SentTx(dest, h, "relay", mid, tampered))
        return h

    def _resend(self) -> list[bytes]:
        out = []
        for mid, (msg, dest, when) in list(self.pending.items()):
            bridge = self.world.bridge(dest)
            if mid in bridge.seen:
                del self.pending[mid]
                continue
            patience = 4 * self.world.chain(dest).config.block_time
            if self.world.now - when >= patience:
                self.pending[mid] = (msg, dest, self.world.now)
                h = self._send(msg, dest, mid, False)
                if h is not None:
                    out.append(h)
        return out

    # -- cloning ------------------------------------------------------------------------
    def _clone_args(self, sid: str, invoked_chain: int, origin_addr: str, request_id,
                    allow_tamper: bool):
        source = self.world.chain(invoked_chain)
        contract = source.contract(origin_addr)
        program = contract.program
        code = self.world.bridge(invoked_chain).getcode(origin_addr)
        tampered = False
        if allow_tamper and self.config.behavior == TAMPER and self.rng.random() < self.config.p:
            altered = tamper_program(program)
            if altered is not None:
                program, code, tampered = altered, altered.bytecode, True
        return [sid, code, program.abi, program.name, invoked_chain, origin_addr, request_id], tampered

    def _on_clone_req(self, exec_chain: int, payload: bytes) -> list[bytes]:
        _, (rid, invoked_chain, entries) = decode(payload)
        bridge = self.world.bridge(exec_chain)
        out = []
        for sid, origin_addr in entries:
            if sid in bridge.registry or (sid, self.account) in bridge.banned:
                continue
            if self.config.behavior == DROP and self.rng.random() < self.config.p:
                self.dropped += 1
                continue
            args, tampered = self._clone_args(sid, invoked_chain, origin_addr, rid, True)
            if tampered:
                self.tampered += 1
            h = self._submit(exec_chain, self.world.bridges[exec_chain], "clone", args, CLONE_GAS)
            if h is not None:
                self.sent.append(SentTx(exec_chain, h, "clone", digest(sid), tampered))
                out.append(h)
        return out

    def _premature_clones(self) -> list[bytes]:
        out = []
        catalog = getattr(self.world, "services", {})
        exec_chain = getattr(self.world, "exec_chain", None)
        for sid in sorted(catalog):
            info = catalog[sid]
            if exec_chain is None or info.chain == exec_chain:
                continue
            args, _ = self._clone_args(sid, info.chain, info.logic_addr, None, False)
            h = self._submit(exec_chain, self.world.bridges[exec_chain], "clone", args, CLONE_GAS)
            if h is not None:
                self.sent.append(SentTx(exec_chain, h, "premature", digest(sid)))
                out.append(h)
        return out

    # -- ledger -------------------------------------------------------------------------
    def gas_spent(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for s in self.sent:
            chain = self.world.chain(s.chain)
            if s.tx_hash in chain.tx_index:
                out[s.chain] = out.get(s.chain, 0) + chain.receipt(s.tx_hash).gas_used
        return out
