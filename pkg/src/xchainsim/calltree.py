"""Call trees and state requirements of cross-chain dApps.

A dApp descriptor names its nodes explicitly::

    {"name": "train-hotel", "exec_chain": 1, "inputs": ["user", "n"], "root": "agency",
     "nodes": {
        "agency": {"service": "agency", "function": "settle", "order": "post",
                   "args": {"user": "input:user", "a": "out:train.0", ...},
                   "calls": ["train"]},
        "train": {"service": "train", "function": "book",
                  "args": {"num": "input:n", "klass": "const:0"},
                  "amounts": {"seats": "arg:num"}}}}

Argument expressions are ``input:NAME``, ``const:N`` (or a bare integer) and
``out:NODE.INDEX``. Amount expressions are ``arg:PARAM``, ``lock_size`` and
``lock_size:PARAM`` (the argument rounded up to a multiple of lock_size).
Read and write sets come from static analysis of each node's state function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .state import AMOUNT, READ, WHOLE, LockRequest
from .vm import Program, ValidationFailed, analyze_access, slot_key

PRE = "pre"
POST = "post"
SHELL_SLOTS = ("lock_size", "lockpool")


class DescriptorError(ValueError):
    pass


class UnknownService(DescriptorError):
    pass


class CyclicCalls(DescriptorError):
    pass


class MissingLogic(RuntimeError):
    pass


@dataclass(frozen=True)
class ServiceInfo:
    """A decoupled service as deployed on its home chain."""
    service_id: str
    chain: int
    monolithic: Program
    logic: Program
    state: Program
    logic_addr: str
    state_addr: str
    lock_size: int = 1

    def scalar_slots(self) -> list[str]:
        return [s.name for s in self.state.slots
                if s.type != "map" and s.name not in SHELL_SLOTS
                and not s.name.startswith("addr_l")]


@dataclass(frozen=True)
class Node:
    node_id: str
    service: str
    chain: int
    function: str
    args: tuple[tuple[str, object], ...]
    amounts: tuple[tuple[str, str], ...]
    order: str
    calls: tuple[str, ...]


@dataclass(frozen=True)
class LockTemplate:
    node_id: str
    chain: int
    state_addr: str
    slot: str
    key_param: str | None
    mode: str
    amount_expr: str | None


@dataclass
class CallTree:
    name: str
    exec_chain: int
    inputs: tuple[str, ...]
    root: str
    nodes: dict[str, Node]
    edges: list[tuple[str, str]]
    depth: int
    order: list[str]

    def remote_nodes(self) -> list[str]:
        return [n for n in self.order if self.nodes[n].chain != self.exec_chain]

    def invoked_chains(self) -> list[int]:
        return sorted({self.nodes[n].chain for n in self.remote_nodes()})


@dataclass
class StateRequirementSet:
    per_chain: dict[int, list[LockTemplate]] = field(default_factory=dict)

    def chains(self) -> list[int]:
        return sorted(c for c, ts in self.per_chain.items() if ts)

    def templates(self):
        for chain in sorted(self.per_chain):
            yield from self.per_chain[chain]


def parse_arg(expr) -> tuple[str, object]:
    if isinstance(expr, bool):
        raise DescriptorError(f"bad argument expression {expr!r}")
    if isinstance(expr, int):
        return ("const", expr)
    if not isinstance(expr, str) or ":" not in expr:
        raise DescriptorError(f"bad argument expression {expr!r}")
    kind, _, rest = expr.partition(":")
    if kind == "const":
        return ("const", int(rest))
    if kind == "input":
        return ("input", rest)
    if kind == "out":
        node, _, idx = rest.rpartition(".")
        if not node or not idx.isdigit():
            raise DescriptorError(f"bad output reference {expr!r}")
        return ("out", (node, int(idx)))
    raise DescriptorError(f"bad argument expression {expr!r}")


def eval_arg(parsed, inputs: dict, outputs: dict) -> int:
    kind, val = parsed
    if kind == "const":
        return val
    if kind == "input":
        return inputs[val]
    node, idx = val
    return outputs[node][idx]


def _parse_node(node_id: str, raw: dict, services: dict[str, ServiceInfo]) -> Node:
    if not isinstance(raw, dict):
        raise DescriptorError(f"node {node_id} must be a mapping")
    sid = raw.get("service")
    if sid not in services:
        raise UnknownService(f"node {node_id}: unknown service {sid!r}")
    info = services[sid]
    chain = raw.get("chain", info.chain)
    if chain != info.chain:
        raise UnknownService(f"node {node_id}: service {sid} lives on chain {info.chain}, not {chain}")
    fname = raw.get("function")
    try:
        fn = info.state.function(fname)
    except Exception:
        raise UnknownService(f"node {node_id}: {sid} has no function {fname!r}") from None
    args_raw = raw.get("args", {}) or {}
    params = [p for p, _ in fn.params]
    if set(args_raw) != set(params):
        raise DescriptorError(f"node {node_id}: args {sorted(args_raw)} do not match {params}")
    args = tuple((p, parse_arg(args_raw[p])) for p in params)
    amounts = tuple(sorted((raw.get("amounts") or {}).items()))
    for slot, expr in amounts:
        if expr != "lock_size" and not (isinstance(expr, str) and
                                        expr.split(":", 1)[0] in ("arg", "lock_size")):
            raise DescriptorError(f"node {node_id}: bad amount expression {expr!r}")
        if ":" in expr and expr.split(":", 1)[1] not in params:
            raise DescriptorError(f"node {node_id}: amount refers to unknown param {expr!r}")
    order = raw.get("order", PRE)
    if order not in (PRE, POST):
        raise DescriptorError(f"node {node_id}: order must be pre or post")
    calls = tuple(raw.get("calls", []) or [])
    return Node(node_id, sid, chain, fname, args, amounts, order, calls)


def _exec_order(root: str, nodes: dict[str, Node]) -> list[str]:
    out: list[str] = []

    def walk(n: str):
        node = nodes[n]
        if node.order == PRE:
            out.append(n)
        for c in node.calls:
            walk(c)
        if node.order == POST:
            out.append(n)

    walk(root)
    return out


def build_tree(descriptor: dict, services: dict[str, ServiceInfo]) -> CallTree:
    try:
        name = descriptor["name"]
        exec_chain = descriptor["exec_chain"]
        root = descriptor["root"]
        raw_nodes = descriptor["nodes"]
    except (KeyError, TypeError) as exc:
        raise DescriptorError(f"descriptor lacks {exc}") from None
    nodes = {nid: _parse_node(nid, raw, services) for nid, raw in raw_nodes.items()}
    if root not in nodes:
        raise DescriptorError(f"root {root!r} is not a node")
    edges = []
    for nid, node in nodes.items():
        for c in node.calls:
            if c not in nodes:
                raise DescriptorError(f"node {nid} calls unknown node {c!r}")
            edges.append((nid, c))

    # cycle check and depth (in edges)
    state: dict[str, int] = {}
    depth_of: dict[str, int] = {}

    def visit(n: str) -> int:
        if state.get(n) == 1:
            raise CyclicCalls(f"call cycle through {n}")
        if state.get(n) == 2:
            return depth_of[n]
        state[n] = 1
        d = max((1 + visit(c) for c in nodes[n].calls), default=0)
        state[n] = 2
        depth_of[n] = d
        return d

    for nid in sorted(nodes):
        visit(nid)
    parents: dict[str, int] = {}
    for _, c in edges:
        parents[c] = parents.get(c, 0) + 1
    if parents.get(root):
        raise CyclicCalls(f"root {root} is called by another node")
    shared = [n for n, k in parents.items() if k > 1]
    if shared:
        raise DescriptorError(f"nodes {shared} have several callers; the call structure must be a tree")
    unreachable = set(nodes) - set(_exec_order(root, nodes))
    if unreachable:
        raise DescriptorError(f"nodes {sorted(unreachable)} are unreachable from the root")

    order = _exec_order(root, nodes)
    pos = {n: i for i, n in enumerate(order)}
    inputs = tuple(descriptor.get("inputs", []))
    for n in order:
        for p, (kind, val) in nodes[n].args:
            if kind == "input" and val not in inputs:
                raise DescriptorError(f"node {n}: input {val!r} is not declared")
            if kind == "out":
                src, idx = val
                if src not in nodes or pos[src] >= pos[n]:
                    raise DescriptorError(f"node {n}: output of {src} is not available yet")
                nret = len(services[nodes[src].service].state.function(nodes[src].function).returns)
                if idx >= nret:
                    raise DescriptorError(f"node {n}: {src} has only {nret} outputs")
    return CallTree(name, exec_chain, inputs, root, nodes, edges, depth_of[root], order)


def requirements(tree: CallTree, services: dict[str, ServiceInfo]) -> StateRequirementSet:
    """Lock templates for every remote node, derived from the state wrapper's access sets."""
    req = StateRequirementSet()
    for nid in tree.remote_nodes():
        node = tree.nodes[nid]
        info = services[node.service]
        try:
            acc = analyze_access(info.state, node.function)
        except ValidationFailed as exc:
            raise DescriptorError(f"node {nid}: {exc}") from None
        params = [p for p, _ in info.state.function(node.function).params]
        amounts = dict(node.amounts)
        writes = set(acc.writes)
        for entry in list(acc.reads) + [w for w in acc.writes if w not in acc.reads]:
            slot, key_idx = entry
            key_param = params[key_idx] if key_idx is not None else None
            if key_param is not None and dict(node.args)[key_param][0] == "out":
                raise DescriptorError(f"node {nid}: map key {key_param} must be known before execution")
            if entry in writes:
                if slot in amounts and key_param is None:
                    mode, amount = AMOUNT, amounts[slot]
                else:
                    mode, amount = WHOLE, None
            else:
                mode, amount = READ, None
            req.per_chain.setdefault(node.chain, []).append(
                LockTemplate(nid, node.chain, info.state_addr, slot, key_param, mode, amount))
    return req


def analyze(descriptor: dict, services: dict[str, ServiceInfo], registered=frozenset()):
    """Return ``(CallTree, StateRequirementSet, clone_list)``.

    ``clone_list`` holds the remote services whose logic is not yet registered
    on the execution chain, in first-use order.
    """
    tree = build_tree(descriptor, services)
    req = requirements(tree, services)
    clone_list: list[str] = []
    for nid in tree.remote_nodes():
        sid = tree.nodes[nid].service
        if sid not in registered and sid not in clone_list:
            clone_list.append(sid)
    return tree, req, clone_list


def _amount(expr: str, args: dict[str, int], lock_size: int) -> int:
    if expr == "lock_size":
        return lock_size
    kind, _, param = expr.partition(":")
    need = args[param]
    if kind == "arg":
        return need
    return -(-need // lock_size) * lock_size


def lock_requests(tree: CallTree, req: StateRequirementSet, services: dict[str, ServiceInfo],
                  inputs: dict, fgsl: bool = True, per_node: bool = False):
    """Concrete lock requests: ``{group: {state_addr: [LockRequest]}}``.

    ``group`` is a chain id, or a node id when ``per_node`` is set. Within a
    group, requests on one key are merged: whole beats amount beats read, and
    amounts add up.
    """
    groups: dict[object, dict[str, dict[str, list]]] = {}
    for t in req.templates():
        node = tree.nodes[t.node_id]
        info = services[node.service]
        args = {p: eval_arg(a, inputs, {}) for p, a in node.args if a[0] != "out"}
        key = slot_key(t.slot, args[t.key_param]) if t.key_param else t.slot
        mode, amount = t.mode, 0
        if mode == AMOUNT:
            if fgsl:
                amount = _amount(t.amount_expr, args, info.lock_size)
                if amount <= 0:
                    # nothing to reserve for this node; still read the slot
                    mode = READ
            else:
                mode = WHOLE
        if mode == READ and not fgsl:
            mode = WHOLE
        group = t.node_id if per_node else t.chain
        cur = groups.setdefault(group, {}).setdefault(t.state_addr, {}).get(key)
        if cur is None:
            merged = [mode, amount]
        else:
            cm, ca = cur
            if WHOLE in (cm, mode):
                merged = [WHOLE, 0]
            elif AMOUNT in (cm, mode):
                merged = [AMOUNT, ca + amount]
            else:
                merged = [READ, 0]
        groups[group][t.state_addr][key] = merged
    out = {}
    for group, per_state in groups.items():
        out[group] = {addr: [LockRequest(k, m, a) for k, (m, a) in sorted(keys.items())]
                      for addr, keys in sorted(per_state.items())}
    return out
