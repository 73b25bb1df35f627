"""Scenario files: chains, services, relayers, a dApp, a workload and assertions.

A scenario is YAML. Every key is optional except ``name``::

    name: my-run
    seed: 7
    chains: 3                 # or a list of {id, block_time, confirmation_depth, max_txs}
    block_time: 5000          # ms, used when chains is a count
    confirmation_depth: 1
    exec_chain: 1
    protocols: [integratex, baseline]
    ta: on
    fgsl: on
    bridge_timeout: 20
    dapp_timeout: 10
    deploy: preinstalled      # or "protocol" to run clone + verification first
    restart_cap: 3
    services:                 # default: agency on the exec chain, train on 2, hotel on 3
      - {id: train, chain: 2, program: train, lock_size: 1, storage: {seats: 100}}
    relayers:                 # default: one honest relayer
      - {id: r0, behavior: honest}
    dapp: train-hotel         # or {builtin: linear, depth: 4} / {builtin: random, seed: 1}
                              # or a full descriptor (name, exec_chain, inputs, root, nodes)
    workload: {clients: 1, requests: 1, n: 1, exec_gas: 5000000, duration: null}
    sweep: {block_time: [2000, 5000]}     # cartesian product over the listed keys
    assertions:
      - {left: integratex.mean_latency_ms, op: "<=", right: baseline.mean_latency_ms, factor: 0.6}

Runs are labelled ``protocol`` plus the sweep values, e.g. ``baseline/block_time=2000``.
"""

from __future__ import annotations

import copy
import itertools
import random
from dataclasses import dataclass, field, replace

import yaml

from . import samples
from .calltree import DescriptorError, ServiceInfo, build_tree
from .ledger import ChainConfig
from .lsd import lsd_transform
from .relayer import BEHAVIOURS, HONEST
from .samples import PROGRAMS, load_program

PROTOCOL_NAMES = ("integratex", "baseline")
SWEEP_KEYS = ("block_time", "depth", "concurrency", "ta", "fgsl", "dapp_timeout", "n")
OPS = ("<", "<=", ">", ">=", "==", "!=")
TOP_KEYS = {"name", "seed", "chains", "block_time", "confirmation_depth", "max_txs", "exec_chain",
            "protocols", "ta", "fgsl", "bridge_timeout", "dapp_timeout", "deploy", "restart_cap",
            "services", "relayers", "dapp", "workload", "sweep", "assertions", "description"}


class ConfigError(ValueError):
    """A scenario problem with the offending field and, for files, its line."""

    def __init__(self, message: str, field_path: str = "", line: int | None = None):
        self.field = field_path
        self.line = line
        where = field_path or "<scenario>"
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    chain: int
    program: str
    lock_size: int = 1
    storage: dict | None = None


@dataclass(frozen=True)
class RelayerSpec:
    id: str
    behavior: str = HONEST
    p: float = 0.0
    poll_interval: int | None = None


@dataclass(frozen=True)
class Workload:
    clients: int = 1
    requests: int = 1
    n: int = 1
    exec_gas: int = 5_000_000
    duration: int | None = None
    retry: bool = True
    max_attempts: int = 50
    horizon: int | None = None


@dataclass(frozen=True)
class Assertion:
    left: object
    op: str
    right: object
    factor: float = 1.0
    text: str = ""


@dataclass
class RunSpec:
    """One fully resolved simulation run."""
    label: str
    protocol: str
    seed: int
    chains: list[ChainConfig]
    exec_chain: int
    ta: bool
    fgsl: bool
    bridge_timeout: int
    dapp_timeout: int
    deploy: str
    restart_cap: int
    services: list[ServiceSpec]
    relayers: list[RelayerSpec]
    dapp: dict
    workload: Workload
    depth: int | None = None
    params: dict = field(default_factory=dict)

    @property
    def block_time(self) -> int:
        return next(c.block_time for c in self.chains if c.chain_id == self.exec_chain)


@dataclass
class Scenario:
    name: str
    runs: list[RunSpec]
    assertions: list[Assertion]
    description: str = ""


# ------------------------------------------------------------------------- YAML plumbing

def _line_index(node, path=(), out=None) -> dict:
    """Map key paths to 1-based line numbers using the composed YAML node tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            _line_index(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, lines: dict | None):
        self.lines = lines or {}

    def err(self, path: tuple, message: str) -> ConfigError:
        line = None
        p = tuple(path)
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        name = "".join(f"[{x}]" if isinstance(x, int) else f".{x}" for x in path).lstrip(".")
        return ConfigError(message, name, line)


def _flag(ctx: _Ctx, path, value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "off"):
        return value.lower() == "on"
    raise ctx.err(path, f"expected on/off, got {value!r}")


def _int(ctx: _Ctx, path, value, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ctx.err(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ctx.err(path, f"must be at least {minimum}")
    return value


def _mapping(ctx: _Ctx, path, value, allowed) -> dict:
    if not isinstance(value, dict):
        raise ctx.err(path, "expected a mapping")
    extra = sorted(set(value) - set(allowed))
    if extra:
        raise ctx.err(path + (extra[0],), f"unknown field {extra[0]!r}")
    return value


# ------------------------------------------------------------------------- parsing

def _chains(ctx: _Ctx, raw: dict) -> list[ChainConfig]:
    spec = raw.get("chains", 3)
    bt = _int(ctx, ("block_time",), raw.get("block_time", 5_000), 1)
    depth = _int(ctx, ("confirmation_depth",), raw.get("confirmation_depth", 1), 0)
    cap = _int(ctx, ("max_txs",), raw.get("max_txs", 4096), 1)
    if isinstance(spec, int) and not isinstance(spec, bool):
        if spec < 1:
            raise ctx.err(("chains",), "need at least one chain")
        return [ChainConfig(i, bt, cap, depth) for i in range(1, spec + 1)]
    if not isinstance(spec, list) or not spec:
        raise ctx.err(("chains",), "expected a chain count or a non-empty list")
    out, seen = [], set()
    for i, c in enumerate(spec):
        path = ("chains", i)
        c = _mapping(ctx, path, c, {"id", "block_time", "confirmation_depth", "max_txs"})
        if "id" not in c:
            raise ctx.err(path, "chain needs an id")
        cid = _int(ctx, path + ("id",), c["id"], 0)
        if cid in seen:
            raise ctx.err(path + ("id",), f"duplicate chain id {cid}")
        seen.add(cid)
        try:
            out.append(ChainConfig(cid, _int(ctx, path + ("block_time",), c.get("block_time", bt)),
                                   _int(ctx, path + ("max_txs",), c.get("max_txs", cap)),
                                   _int(ctx, path + ("confirmation_depth",),
                                        c.get("confirmation_depth", depth))))
        except ValueError as exc:
            raise ctx.err(path, str(exc)) from None
    return out


def _services(ctx: _Ctx, raw, chain_ids, exec_chain) -> list[ServiceSpec]:
    if raw is None:
        others = [c for c in sorted(chain_ids) if c != exec_chain]
        if len(others) < 2:
            raise ctx.err(("services",), "default services need two chains besides the exec chain")
        return [ServiceSpec("agency", exec_chain, "agency"), ServiceSpec("train", others[0], "train"),
                ServiceSpec("hotel", others[1], "hotel")]
    if not isinstance(raw, list) or not raw:
        raise ctx.err(("services",), "expected a non-empty list")
    out, ids = [], set()
    for i, s in enumerate(raw):
        path = ("services", i)
        s = _mapping(ctx, path, s, {"id", "chain", "program", "lock_size", "storage"})
        for key in ("id", "chain", "program"):
            if key not in s:
                raise ctx.err(path, f"service needs {key!r}")
        if s["id"] in ids:
            raise ctx.err(path + ("id",), f"duplicate service {s['id']!r}")
        ids.add(s["id"])
        if s["chain"] not in chain_ids:
            raise ctx.err(path + ("chain",), f"unknown chain {s['chain']!r}")
        if s["program"] not in PROGRAMS:
            raise ctx.err(path + ("program",), f"unknown program {s['program']!r}; "
                                               f"choose from {', '.join(PROGRAMS)}")
        storage = s.get("storage")
        if storage is not None:
            if not isinstance(storage, dict) or not all(
                    isinstance(v, int) and not isinstance(v, bool) and v >= 0
                    for v in storage.values()):
                raise ctx.err(path + ("storage",), "storage maps slot names to unsigned integers")
            storage = {**samples.genesis_storage(s["program"]), **storage}
        out.append(ServiceSpec(str(s["id"]), s["chain"], s["program"],
                               _int(ctx, path + ("lock_size",), s.get("lock_size", 1), 1), storage))
    return out


def _relayers(ctx: _Ctx, raw) -> list[RelayerSpec]:
    if raw is None:
        return [RelayerSpec("r0")]
    if not isinstance(raw, list) or not raw:
        raise ctx.err(("relayers",), "expected a non-empty list")
    out = []
    for i, r in enumerate(raw):
        path = ("relayers", i)
        r = _mapping(ctx, path, r, {"id", "behavior", "p", "poll_interval"})
        beh = r.get("behavior", HONEST)
        if beh not in BEHAVIOURS:
            raise ctx.err(path + ("behavior",), f"unknown behaviour {beh!r}")
        p = r.get("p", 0.0)
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 <= p <= 1:
            raise ctx.err(path + ("p",), "p must be a number in [0, 1]")
        poll = r.get("poll_interval")
        if poll is not None:
            _int(ctx, path + ("poll_interval",), poll, 1)
        out.append(RelayerSpec(str(r.get("id", f"r{i}")), beh, float(p), poll))
    if not any(r.behavior == HONEST for r in out):
        raise ctx.err(("relayers",), "at least one relayer must be honest")
    return out


def _workload(ctx: _Ctx, raw) -> Workload:
    raw = _mapping(ctx, ("workload",), raw or {}, set(Workload.__dataclass_fields__))
    kw = {}
    for key in ("clients", "requests", "n", "exec_gas", "max_attempts"):
        if key in raw:
            kw[key] = _int(ctx, ("workload", key), raw[key], 1)
    for key in ("duration", "horizon"):
        if raw.get(key) is not None:
            kw[key] = _int(ctx, ("workload", key), raw[key], 1)
    if "retry" in raw:
        kw["retry"] = _flag(ctx, ("workload", "retry"), raw["retry"])
    return Workload(**kw)


def _operand(ctx: _Ctx, path, value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value
    if isinstance(value, str) and "." in value:
        return value
    raise ctx.err(path, f"operand must be a number or run.metric, got {value!r}")


def _assertions(ctx: _Ctx, raw) -> list[Assertion]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ctx.err(("assertions",), "expected a list")
    out = []
    for i, a in enumerate(raw):
        path = ("assertions", i)
        a = _mapping(ctx, path, a, {"left", "op", "right", "factor", "text"})
        if a.get("op") not in OPS:
            raise ctx.err(path + ("op",), f"op must be one of {' '.join(OPS)}")
        factor = a.get("factor", 1.0)
        if isinstance(factor, bool) or not isinstance(factor, (int, float)):
            raise ctx.err(path + ("factor",), "factor must be a number")
        out.append(Assertion(_operand(ctx, path + ("left",), a.get("left")), a["op"],
                             _operand(ctx, path + ("right",), a.get("right")), float(factor),
                             str(a.get("text", ""))))
    return out


def resolve_dapp(spec, exec_chain: int, services: dict | None = None, depth: int | None = None,
                 seed: int = 0) -> dict:
    """Turn a dApp spec (builtin name, builtin mapping or descriptor) into a descriptor."""
    if isinstance(spec, str):
        spec = {"builtin": spec}
    if "builtin" not in spec:
        return copy.deepcopy(spec)
    kind = spec["builtin"]
    if kind == "train-hotel":
        return samples.train_hotel(exec_chain)
    if kind == "linear":
        return samples.linear(depth if depth is not None else spec.get("depth", 3), exec_chain)
    if kind == "random":
        rng = random.Random(spec.get("seed", seed))
        return samples.random_dapp(rng, services or {}, exec_chain,
                                   spec.get("max_nodes", 8), name=spec.get("name", "random"))
    raise KeyError(kind)


def _check_dapp(ctx: _Ctx, raw, exec_chain, services: list[ServiceSpec]):
    spec = raw if raw is not None else "train-hotel"
    if isinstance(spec, str):
        if spec not in ("train-hotel", "linear"):
            raise ctx.err(("dapp",), f"unknown builtin dApp {spec!r}")
        return spec
    if not isinstance(spec, dict):
        raise ctx.err(("dapp",), "expected a builtin name or a mapping")
    if "builtin" in spec:
        _mapping(ctx, ("dapp",), spec, {"builtin", "depth", "seed", "max_nodes", "name"})
        if spec["builtin"] not in ("train-hotel", "linear", "random"):
            raise ctx.err(("dapp", "builtin"), f"unknown builtin dApp {spec['builtin']!r}")
        if "depth" in spec:
            _int(ctx, ("dapp", "depth"), spec["depth"], 1)
        return spec
    if spec.get("exec_chain", exec_chain) != exec_chain:
        raise ctx.err(("dapp", "exec_chain"), "dApp must run on the scenario's exec chain")
    return {**spec, "exec_chain": exec_chain}


def _validate_descriptor(ctx: _Ctx, descriptor: dict, services: list[ServiceSpec]) -> int:
    infos = {}
    for s in services:
        mono = load_program(s.program)
        logic, state = lsd_transform(mono)
        infos[s.id] = ServiceInfo(s.id, s.chain, mono, logic, state, "", "", s.lock_size)
    try:
        return build_tree(descriptor, infos).depth
    except (DescriptorError, KeyError) as exc:
        raise ctx.err(("dapp",), str(exc)) from None


def parse(raw: dict, lines: dict | None = None) -> Scenario:
    """Validate a scenario mapping and expand it into runs."""
    ctx = _Ctx(lines)
    _mapping(ctx, (), raw, TOP_KEYS)
    if "name" not in raw:
        raise ctx.err((), "scenario needs a name")
    seed = _int(ctx, ("seed",), raw.get("seed", 0), 0)
    chains = _chains(ctx, raw)
    chain_ids = {c.chain_id for c in chains}
    exec_chain = raw.get("exec_chain", min(chain_ids))
    if exec_chain not in chain_ids:
        raise ctx.err(("exec_chain",), f"unknown chain {exec_chain!r}")
    protocols = raw.get("protocols", ["integratex"])
    if isinstance(protocols, str):
        protocols = [protocols]
    for i, p in enumerate(protocols):
        if p not in PROTOCOL_NAMES:
            raise ctx.err(("protocols", i), f"unknown protocol {p!r}")
    ta = _flag(ctx, ("ta",), raw.get("ta", True))
    fgsl = _flag(ctx, ("fgsl",), raw.get("fgsl", True))
    bto = _int(ctx, ("bridge_timeout",), raw.get("bridge_timeout", 20), 1)
    dto = _int(ctx, ("dapp_timeout",), raw.get("dapp_timeout", 10), 1)
    deploy = raw.get("deploy", "preinstalled")
    if deploy not in ("preinstalled", "protocol"):
        raise ctx.err(("deploy",), "deploy must be preinstalled or protocol")
    cap = _int(ctx, ("restart_cap",), raw.get("restart_cap", 3), 0)
    services = _services(ctx, raw.get("services"), chain_ids, exec_chain)
    relayers = _relayers(ctx, raw.get("relayers"))
    workload = _workload(ctx, raw.get("workload"))
    dapp = _check_dapp(ctx, raw.get("dapp"), exec_chain, services)
    sweep = _mapping(ctx, ("sweep",), raw.get("sweep") or {}, SWEEP_KEYS)
    for key, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ctx.err(("sweep", key), "sweep values must be a non-empty list")
    if isinstance(dapp, dict) and "builtin" not in dapp:
        _validate_descriptor(ctx, dapp, services)

    base = RunSpec("", "", seed, chains, exec_chain, ta, fgsl, bto, dto, deploy, cap, services,
                   relayers, {}, workload)
    keys = sorted(sweep)
    runs = []
    for protocol in protocols:
        for combo in itertools.product(*(sweep[k] for k in keys)):
            params = dict(zip(keys, combo))
            run = replace(base, protocol=protocol, params=params)
            for k, v in params.items():
                path = ("sweep", k)
                if k == "block_time":
                    v = _int(ctx, path, v, 1)
                    run.chains = [replace(c, block_time=v) for c in run.chains]
                elif k == "concurrency":
                    run.workload = replace(run.workload, clients=_int(ctx, path, v, 1))
                elif k == "n":
                    run.workload = replace(run.workload, n=_int(ctx, path, v, 1))
                elif k in ("ta", "fgsl"):
                    setattr(run, k, _flag(ctx, path, v))
                elif k == "dapp_timeout":
                    run.dapp_timeout = _int(ctx, path, v, 1)
                elif k == "depth":
                    run.depth = _int(ctx, path, v, 1)
            run.dapp = dapp if isinstance(dapp, dict) else {"builtin": dapp}
            if run.dapp.get("builtin") == "linear" and run.depth is None:
                run.depth = run.dapp.get("depth", 3)
            suffix = ",".join(f"{k}={_show(v)}" for k, v in params.items())
            run.label = protocol + (f"/{suffix}" if suffix else "")
            runs.append(run)
    return Scenario(str(raw["name"]), runs, _assertions(ctx, raw.get("assertions")),
                    str(raw.get("description", "")))


def _show(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


def loads_raw(text: str) -> tuple[dict, dict]:
    """YAML text to ``(mapping, line index)`` without validating it."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}", "",
                          mark.line + 1 if mark else None) from None
    if node is None or not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping", "", 1)
    return raw, _line_index(node)


def load_raw(path) -> tuple[dict, dict]:
    with open(path, encoding="utf-8") as fh:
        return loads_raw(fh.read())


def loads(text: str) -> Scenario:
    """Parse scenario YAML text. Errors carry the line of the offending field."""
    return parse(*loads_raw(text))


def load(path) -> Scenario:
    return parse(*load_raw(path))
