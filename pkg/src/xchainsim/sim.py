"""Discrete-event scheduler and the multi-chain world it drives."""

from __future__ import annotations

import heapq
import random
from typing import Callable

from .ledger import Chain, ChainConfig
from .vm import DEFAULT_GAS, GasSchedule

# same-timestamp ordering: blocks first, then relayers, then users/providers
PRIO_BLOCK = 0
PRIO_RELAYER = 1
PRIO_ACTOR = 2


class Scheduler:
    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def at(self, time: int, fn: Callable[[], None], priority: int = PRIO_ACTOR) -> None:
        if time < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (time, priority, self._seq, fn))
        self._seq += 1

    def every(self, interval: int, fn: Callable[[], object], start: int,
              priority: int = PRIO_ACTOR) -> None:
        """Call ``fn`` at ``start`` and every ``interval`` after, until it returns False."""
        def tick():
            if fn() is not False:
                self.at(self.now + interval, tick, priority)
        self.at(start, tick, priority)

    def step(self) -> bool:
        if not self._heap:
            return False
        time, _, _, fn = heapq.heappop(self._heap)
        self.now = time
        fn()
        return True

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def run(self, until: int, stop: Callable[[], bool] | None = None) -> int:
        while self._heap and self._heap[0][0] <= until:
            self.step()
            if stop is not None and stop():
                break
        return self.now


def default_offsets(configs: list[ChainConfig], exec_chain: int) -> list[ChainConfig]:
    """Stagger invoked chains by half a block relative to the execution chain."""
    out = []
    for c in configs:
        if c.offset or c.chain_id == exec_chain:
            out.append(c)
        else:
            out.append(ChainConfig(c.chain_id, c.block_time, c.max_txs_per_block,
                                   c.confirmation_depth, c.fault_threshold_note,
                                   c.block_time // 2))
    return out


class World:
    """All chains plus the shared clock. Actors register periodic callbacks."""

    def __init__(self, configs: list[ChainConfig], gas: GasSchedule = DEFAULT_GAS, seed: int = 0):
        self.sched = Scheduler()
        self.gas = gas
        self.seed = seed
        self.rng = random.Random(seed)
        self.chains: dict[int, Chain] = {c.chain_id: Chain(c, gas) for c in configs}
        self.bridges: dict[int, str] = {}
        self.block_listeners: list[Callable[[Chain], None]] = []
        self._started = False

    @property
    def now(self) -> int:
        return self.sched.now

    def chain(self, chain_id: int) -> Chain:
        return self.chains[chain_id]

    def bridge(self, chain_id: int):
        return self.chains[chain_id].contract(self.bridges[chain_id])

    @property
    def min_block_time(self) -> int:
        return min(c.config.block_time for c in self.chains.values())

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for cid in sorted(self.chains):
            chain = self.chains[cid]
            bt = chain.config.block_time

            def produce(chain=chain):
                chain.produce_block(self.now)
                for fn in self.block_listeners:
                    fn(chain)

            self.sched.every(bt, produce, chain.config.offset + bt, PRIO_BLOCK)

    def run_until(self, time: int, stop: Callable[[], bool] | None = None) -> int:
        self.start()
        return self.sched.run(time, stop)

    def run_for(self, duration: int, stop: Callable[[], bool] | None = None) -> int:
        return self.run_until(self.now + duration, stop)
