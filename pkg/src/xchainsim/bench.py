"""Scenario runner, metrics, CSV export and CSV comparison."""

from __future__ import annotations

import csv
import io
import operator
import os
from dataclasses import dataclass, field

from . import faults
from .audit import audit, snapshot_states
from .bridge import LOCK_REQ, SEG_REQ, UPDATE_REQ, VERIFY_OUT, VERIFY_RESULT
from .deploy import VERIFIED
from .encoding import account_key, short_hex
from .execution import COMMITTED, EXEC_FAILURE, LOCK_CONFLICT, TIMEOUT
from .ledger import calldata
from .network import Client, Network, run_clients
from .samples import load_program
from .lsd import lsd_transform
from .scenario import RunSpec, Scenario, load, parse, resolve_dapp
from .vm import DEFAULT_GAS, GasSchedule

SUMMARY_COLUMNS = [
    "run", "scenario", "protocol", "seed", "block_time_ms", "depth", "concurrency", "ta", "fgsl",
    "requests", "committed", "aborted", "rejected", "attempts", "lock_conflicts",
    "exec_failures", "timeouts", "mean_latency_ms", "max_latency_ms", "rounds",
    "throughput_per_s", "total_gas", "lock_msgs", "update_msgs", "seg_msgs", "retries",
    "relays_accepted", "relays_duplicate", "relays_bad_proof", "deploy_phase", "audit_ok",
    "violations",
]
INVOCATION_COLUMNS = [
    "run", "protocol", "client", "request", "attempt", "invocation", "status", "reason",
    "request_submit_ms", "start_height", "start_ms", "result_height", "result_ms",
    "request_latency_ms", "lock_msgs", "update_msgs", "seg_msgs", "retries", "state_rounds",
    "timeline",
]
CHAIN_COLUMNS = [
    "run", "protocol", "chain", "block_time_ms", "blocks", "txs", "reverted", "gas_used",
    "accepted", "duplicate", "bad_proof", "not_final", "state_rounds", "busy_ms",
]
RELAYER_COLUMNS = [
    "run", "protocol", "relayer", "behavior", "submitted", "accepted", "fees", "score",
    "reimbursed", "dropped", "tampered", "gas_spent",
]
DEPLOY_COLUMNS = ["run", "job", "operation", "chain", "txs", "gas", "latency_ms"]
LSD_COLUMNS = ["contract", "monolithic_gas", "lsd_gas", "saving_pct"]

TABLES = {
    "summary": SUMMARY_COLUMNS,
    "invocations": INVOCATION_COLUMNS,
    "chains": CHAIN_COLUMNS,
    "relayers": RELAYER_COLUMNS,
    "deploy": DEPLOY_COLUMNS,
    "lsd": LSD_COLUMNS,
}


class SchemaMismatch(ValueError):
    pass


@dataclass
class RunResult:
    spec: RunSpec | None
    summary: dict
    invocations: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    relayers: list = field(default_factory=list)
    deploy: list = field(default_factory=list)
    network: Network | None = None
    report: object = None


@dataclass
class ScenarioResult:
    name: str
    tables: dict
    runs: list
    assertions: list        # (text, ok, detail)

    @property
    def ok(self) -> bool:
        audits = all(r.get("audit_ok", True) in (True, "true") for r in self.tables["summary"])
        return audits and all(ok for _, ok, _ in self.assertions)

    def metric(self, label: str, name: str):
        for row in self.tables["summary"]:
            if row["run"] == label:
                return row[name]
        raise KeyError(f"no run {label!r}")


# ------------------------------------------------------------------------- one run

def build_network(run: RunSpec) -> Network:
    net = Network(run.chains, run.exec_chain, seed=run.seed, ta=run.ta, fgsl=run.fgsl,
                  bridge_timeout=run.bridge_timeout, dapp_timeout=run.dapp_timeout)
    for s in run.services:
        net.add_service(s.id, s.chain, s.program, s.storage, s.lock_size)
    for i in range(run.workload.clients):
        net.add_user(f"user:{i}")
    for r in run.relayers:
        net.add_relayer(r.id, r.behavior, r.p, r.poll_interval)
    return net


def execute_run(run: RunSpec, scenario: str = "") -> RunResult:
    """Build the network, deploy, drive the workload and audit."""
    net = build_network(run)
    descriptor = resolve_dapp(run.dapp, run.exec_chain, net.services, run.depth, run.seed)
    job = net.deploy(descriptor, restart_cap=run.restart_cap,
                     preinstalled=run.deploy == "preinstalled")
    w = run.workload
    genesis = snapshot_states(net)
    t0 = net.world.now
    clients = []
    if job.phase == VERIFIED:
        for user in net.users:
            clients.append(Client(net, user, descriptor["name"],
                                  {"user": account_key(user), "n": w.n}, protocol=run.protocol,
                                  exec_gas=w.exec_gas, requests=w.requests, retry=w.retry,
                                  max_attempts=w.max_attempts, start=t0, duration=w.duration))
        horizon = w.horizon or 4_000 * run.block_time
        run_clients(net, clients, t0 + horizon)
    endpoint = net.endpoint(run.protocol)
    report = audit(net, genesis, [endpoint])
    res = RunResult(run, {}, network=net, report=report)
    _collect(res, net, run, scenario, clients, t0, job, report)
    return res


def _collect(res: RunResult, net: Network, run: RunSpec, scenario: str, clients, t0, job,
             report) -> None:
    endpoint = net.endpoint(run.protocol)
    requests = [r for c in clients for r in c.done]
    committed = [r for r in requests if r.status == COMMITTED]
    latencies = [r.latency for r in committed]
    invs = list(endpoint.invocations.values())
    by_reason = {k: sum(1 for i in invs if i.reason == k) for k in (LOCK_CONFLICT, EXEC_FAILURE,
                                                                     TIMEOUT)}
    msgs = {t: sum(i.msgs.get(t, 0) for i in invs) for t in (LOCK_REQ, UPDATE_REQ, SEG_REQ)}
    end = max((r.end_time for r in requests), default=t0)
    window_s = (end - t0) / 1000
    gas = {cid: sum(b.gas_used for b in ch.blocks if b.timestamp > t0)
           for cid, ch in net.world.chains.items()}
    stats = {k: sum(net.world.bridge(c).stats[k] for c in net.world.chains)
             for k in ("accepted", "duplicate", "bad_proof")}
    mean = sum(latencies) / len(latencies) if latencies else 0.0
    res.summary = {
        "run": run.label, "scenario": scenario, "protocol": run.protocol, "seed": run.seed,
        "block_time_ms": run.block_time, "depth": run.depth if run.depth is not None else "",
        "concurrency": run.workload.clients, "ta": _onoff(run.ta), "fgsl": _onoff(run.fgsl),
        "requests": len(requests), "committed": len(committed),
        "aborted": sum(1 for r in requests if r.status == "Aborted"),
        "rejected": sum(1 for r in requests if r.status == "Rejected"),
        "attempts": len(invs), "lock_conflicts": by_reason[LOCK_CONFLICT],
        "exec_failures": by_reason[EXEC_FAILURE], "timeouts": by_reason[TIMEOUT],
        "mean_latency_ms": round(mean, 3), "max_latency_ms": max(latencies, default=0),
        "rounds": round(mean / run.block_time, 3),
        "throughput_per_s": round(len(committed) / window_s, 6) if window_s > 0 else 0.0,
        "total_gas": sum(gas.values()), "lock_msgs": msgs[LOCK_REQ],
        "update_msgs": msgs[UPDATE_REQ], "seg_msgs": msgs[SEG_REQ],
        "retries": sum(i.retries for i in invs), "relays_accepted": stats["accepted"],
        "relays_duplicate": stats["duplicate"], "relays_bad_proof": stats["bad_proof"],
        "deploy_phase": job.phase, "audit_ok": _tf(report.ok),
        "violations": len(report.violations),
    }
    for ci, c in enumerate(clients):
        for r in c.done:
            for ai, inv_id in enumerate(r.attempts):
                inv = endpoint.invocations[inv_id]
                last = ai == len(r.attempts) - 1
                res.invocations.append({
                    "run": run.label, "protocol": run.protocol, "client": ci,
                    "request": r.request_id, "attempt": ai, "invocation": short_hex(inv_id),
                    "status": inv.status, "reason": inv.reason,
                    "request_submit_ms": r.submit_time, "start_height": inv.start_height,
                    "start_ms": inv.start_time, "result_height": inv.result_height,
                    "result_ms": inv.result_time,
                    "request_latency_ms": r.latency if last else "",
                    "lock_msgs": inv.msgs.get(LOCK_REQ, 0),
                    "update_msgs": inv.msgs.get(UPDATE_REQ, 0),
                    "seg_msgs": inv.msgs.get(SEG_REQ, 0), "retries": inv.retries,
                    "state_rounds": ";".join(f"{ch}:{_rounds(per)}"
                                             for ch, per in sorted(inv.per_chain.items())),
                    "timeline": ";".join(f"{s}@{h}" for s, h in inv.history),
                })
    for cid in sorted(net.world.chains):
        ch = net.world.chain(cid)
        st = net.world.bridge(cid).stats
        blocks = [b for b in ch.blocks if b.timestamp > t0]
        rcpts = [rc for h, rs in enumerate(ch.receipts) if ch.blocks[h].timestamp > t0 for rc in rs]
        spans = [i.spans[cid] for i in invs if cid in i.spans]
        res.chains.append({
            "run": run.label, "protocol": run.protocol, "chain": cid,
            "block_time_ms": ch.config.block_time, "blocks": len(blocks), "txs": len(rcpts),
            "reverted": sum(1 for rc in rcpts if rc.status != "success"), "gas_used": gas[cid],
            "accepted": st["accepted"], "duplicate": st["duplicate"], "bad_proof": st["bad_proof"],
            "not_final": st["not_final"],
            "state_rounds": sum(_rounds(i.per_chain.get(cid, {})) for i in invs),
            "busy_ms": round(sum(b - a for a, b in spans) / len(spans), 3) if spans else 0,
        })
    exec_bridge = net.world.bridge(run.exec_chain)
    for r in net.relayers:
        acct = r.account
        res.relayers.append({
            "run": run.label, "protocol": run.protocol, "relayer": r.config.relayer_id,
            "behavior": r.config.behavior, "submitted": len(r.sent),
            "accepted": sum(1 for c in net.world.chains
                            for e in net.world.bridge(c).accepted_log if e[1] == acct),
            "fees": sum(net.world.bridge(c).fees.get(acct, 0) for c in net.world.chains),
            "score": exec_bridge.scores.get(acct, 0),
            "reimbursed": exec_bridge.reimbursed.get(acct, 0), "dropped": r.dropped,
            "tampered": r.tampered, "gas_spent": sum(r.gas_spent().values()),
        })
    if run.deploy == "protocol":
        res.deploy = deploy_rows(net, job, run.label)


def _rounds(per: dict) -> int:
    return per.get(LOCK_REQ, 0) + per.get(SEG_REQ, 0)


def _onoff(b: bool) -> str:
    return "on" if b else "off"


def _tf(b: bool) -> str:
    return "true" if b else "false"


def deploy_rows(net: Network, job, label: str) -> list[dict]:
    """Per-operation gas and latency of one deployment job."""
    rows = []

    def gas_of(chain_id, hashes):
        ch = net.world.chain(chain_id)
        return sum(ch.receipt(h).gas_used for h in hashes if h in ch.tx_index)

    def add(op, chain_id, hashes, latency=""):
        rows.append({"run": label, "job": job.job_id, "operation": op, "chain": chain_id,
                     "txs": len(hashes), "gas": gas_of(chain_id, hashes), "latency_ms": latency})

    times = {}
    for phase, t, _ in job.timeline:
        times.setdefault(phase, []).append(t)
    clone_lat = _phase_gap(job.timeline, "CloneRequested", "Registered")
    verify_lat = _phase_gap(job.timeline, "Verifying", "Verified")
    ex = job.execution_chain
    add("request_clone", ex, [h for _, h in job.txs.get("request_clone", [])])
    clone_ok, clone_bad = [], []
    ch = net.world.chain(ex)
    for r in net.relayers:
        for s in r.sent:
            if s.kind in ("clone", "premature") and s.tx_hash in ch.tx_index:
                (clone_ok if ch.receipt(s.tx_hash).status == "success" else clone_bad).append(
                    s.tx_hash)
    add("deploy_and_register", ex, clone_ok, clone_lat)
    add("clone_reverted", ex, clone_bad)
    add("verification", ex, [h for _, h in job.txs.get("verification", [])], verify_lat)
    for cid in sorted(net.world.chains):
        log = net.world.bridge(cid).accepted_log
        for topic, op in ((VERIFY_OUT, "compare_bytes"), (VERIFY_RESULT, "mark_verified")):
            hashes = [e[3] for e in log if e[2] == topic]
            if hashes:
                add(op, cid, hashes)
    return rows


def _phase_gap(timeline, a: str, b: str):
    start = None
    for phase, t, _ in timeline:
        if phase == a and start is None:
            start = t
        elif phase == b and start is not None:
            return t - start
    return ""


# ------------------------------------------------------------------------- special kinds

def clone_tx_gas(program, gas: GasSchedule = DEFAULT_GAS, service_id: str = "svc") -> int:
    """Gas of a clone transaction carrying ``program`` (deploy, register, calldata)."""
    data = calldata("clone", service_id, program.bytecode, program.abi, program.name, 0,
                    "0" * 40, b"\x00" * 32)
    return (gas.tx_base + gas.calldata_byte * len(data) + gas.deploy_cost(program)
            + gas.storage_write)


def lsd_rows(gas: GasSchedule = DEFAULT_GAS) -> list[dict]:
    rows = []
    for name in ("train", "hotel"):
        mono = load_program(name)
        logic, _ = lsd_transform(mono)
        a, b = clone_tx_gas(mono, gas, name), clone_tx_gas(logic, gas, name)
        rows.append({"contract": mono.name, "monolithic_gas": a, "lsd_gas": b,
                     "saving_pct": round(100 * (a - b) / a, 3)})
    return rows


# ------------------------------------------------------------------------- builtins

def _both(**kw):
    return {"protocols": ["integratex", "baseline"], **kw}


BUILTINS: dict[str, dict] = {
    "train-hotel": _both(
        name="train-hotel", dapp="train-hotel",
        assertions=[{"left": "integratex.mean_latency_ms", "op": "<=",
                     "right": "baseline.mean_latency_ms", "factor": 0.6}]),
    "depth-sweep": _both(
        name="depth-sweep", dapp={"builtin": "linear"}, sweep={"depth": [2, 3, 4]},
        workload={"requests": 1000, "duration": 600_000},
        assertions=[{"left": f"baseline/depth={d}.mean_latency_ms", "op": ">",
                     "right": f"integratex/depth={d}.mean_latency_ms"} for d in (2, 3, 4)]
        + [{"left": "integratex/depth=4.throughput_per_s", "op": ">=",
            "right": "baseline/depth=4.throughput_per_s", "factor": 2.0}]),
    "blocktime-sweep": _both(
        name="blocktime-sweep", dapp="train-hotel",
        sweep={"block_time": [2000, 5000, 8000, 12000]},
        assertions=[{"left": f"integratex/block_time={b}.mean_latency_ms", "op": "<",
                     "right": f"baseline/block_time={b}.mean_latency_ms"}
                    for b in (2000, 5000, 8000, 12000)]),
    "concurrency-sweep": {
        "name": "concurrency-sweep", "dapp": "train-hotel", "protocols": ["integratex"],
        "sweep": {"concurrency": [1, 2, 3, 4, 5, 6], "fgsl": [True, False]},
        "assertions": [
            {"left": "integratex/concurrency=6,fgsl=on.mean_latency_ms", "op": "<=",
             "right": "integratex/concurrency=1,fgsl=on.mean_latency_ms", "factor": 1.2},
            {"left": "integratex/concurrency=6,fgsl=off.mean_latency_ms", "op": ">=",
             "right": "integratex/concurrency=1,fgsl=on.mean_latency_ms", "factor": 3.0}]},
    "ta-ablation": {
        "name": "ta-ablation", "dapp": {"builtin": "linear"}, "protocols": ["integratex"],
        "sweep": {"depth": [1, 2, 3, 4], "ta": [True, False]},
        "assertions": [{"left": "integratex/depth=4,ta=on.total_gas", "op": "<=",
                        "right": "integratex/depth=4,ta=off.total_gas", "factor": 0.9}]},
    "deploy-phase": {
        "name": "deploy-phase", "dapp": "train-hotel", "protocols": ["integratex"],
        "deploy": "protocol", "relayers": [{"id": f"r{i}"} for i in range(4)]},
    "lsd-gas": {"name": "lsd-gas"},
    "fault-suite": {"name": "fault-suite"},
}
SPECIAL = {"lsd-gas", "fault-suite"}


def builtin(name: str) -> Scenario:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin scenario {name!r}")
    return parse(dict(BUILTINS[name]))


def apply_overrides(raw: dict, *, protocol=None, ta=None, fgsl=None, block_times=None,
                    depth=None, concurrency=None, seed=None) -> dict:
    """Command-line overrides on a raw scenario mapping."""
    raw = dict(raw)
    sweep = dict(raw.get("sweep") or {})
    if protocol:
        raw["protocols"] = [protocol]
    if seed is not None:
        raw["seed"] = seed
    if ta is not None:
        raw["ta"] = ta
        sweep.pop("ta", None)
    if fgsl is not None:
        raw["fgsl"] = fgsl
        sweep.pop("fgsl", None)
    if block_times:
        if len(block_times) == 1:
            raw["block_time"] = block_times[0]
            sweep.pop("block_time", None)
        else:
            sweep["block_time"] = list(block_times)
    if depth is not None:
        dapp = raw.get("dapp", "train-hotel")
        if not (isinstance(dapp, dict) and dapp.get("builtin") == "linear"):
            raw["dapp"] = {"builtin": "linear"}
        sweep["depth"] = [depth]
    if concurrency is not None:
        sweep["concurrency"] = [concurrency]
    raw["sweep"] = sweep
    # assertions refer to run labels of the unmodified sweep
    if any(v is not None for v in (protocol, ta, fgsl, depth, concurrency)) or block_times:
        raw["assertions"] = []
    return raw


def _check(assertion, summary_by_run) -> tuple[str, bool, str]:
    ops = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
           "==": operator.eq, "!=": operator.ne}

    def value(x):
        if isinstance(x, (int, float)):
            return float(x)
        label, _, metric = x.rpartition(".")
        return float(summary_by_run[label][metric])

    text = assertion.text or (f"{assertion.left} {assertion.op} "
                              f"{assertion.factor:g} * {assertion.right}")
    try:
        lv, rv = value(assertion.left), value(assertion.right)
    except KeyError as exc:
        return text, False, f"missing {exc}"
    ok = ops[assertion.op](lv, assertion.factor * rv)
    return text, ok, f"{lv:g} vs {assertion.factor * rv:g}"


def run_scenario(scenario, seed: int | None = None, out_dir: str | None = None,
                 schedules: int = 50) -> ScenarioResult:
    """Run a builtin name, a YAML path or a parsed :class:`Scenario`; write CSVs to ``out_dir``."""
    if isinstance(scenario, str):
        if scenario in SPECIAL:
            return _run_special(scenario, seed, out_dir, schedules)
        raw = BUILTINS.get(scenario)
        if raw is not None:
            raw = dict(raw)
            if seed is not None:
                raw["seed"] = seed
            scenario = parse(raw)
        else:
            scenario = load(scenario)
            if seed is not None:
                for r in scenario.runs:
                    r.seed = seed
    tables = {k: [] for k in TABLES}
    runs = []
    for spec in scenario.runs:
        res = execute_run(spec, scenario.name)
        res.network = None
        runs.append(res)
        tables["summary"].append(res.summary)
        tables["invocations"] += res.invocations
        tables["chains"] += res.chains
        tables["relayers"] += res.relayers
        tables["deploy"] += res.deploy
    by_run = {r["run"]: r for r in tables["summary"]}
    checks = [_check(a, by_run) for a in scenario.assertions]
    result = ScenarioResult(scenario.name, tables, runs, checks)
    if out_dir:
        write_tables(result, out_dir)
    return result


def _run_special(name: str, seed, out_dir, schedules: int) -> ScenarioResult:
    tables = {k: [] for k in TABLES}
    checks = []
    if name == "lsd-gas":
        rows = lsd_rows()
        tables["lsd"] = rows
        by = {r["contract"]: r for r in rows}
        checks.append(("LSD clone gas below monolithic for every contract",
                       all(r["lsd_gas"] < r["monolithic_gas"] for r in rows), ""))
        checks.append(("Hotel saving exceeds Train saving",
                       by["Hotel"]["saving_pct"] > by["Train"]["saving_pct"],
                       f"{by['Hotel']['saving_pct']} vs {by['Train']['saving_pct']}"))
    else:
        base = 0 if seed is None else seed
        for s in range(base, base + schedules):
            outcome = faults.fault_run(s)
            row = {c: "" for c in SUMMARY_COLUMNS}
            row.update(outcome.summary_row())
            tables["summary"].append(row)
        bad = [r["run"] for r in tables["summary"] if r["audit_ok"] != "true"]
        checks.append(("atomicity audit passes on every schedule", not bad,
                       f"{len(bad)} failing" if bad else f"{schedules} schedules"))
    result = ScenarioResult(name, tables, [], checks)
    if out_dir:
        write_tables(result, out_dir)
    return result


# ------------------------------------------------------------------------- CSV

def table_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


def write_tables(result: ScenarioResult, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, columns in TABLES.items():
        rows = result.tables.get(name, [])
        if not rows and name in ("deploy", "lsd"):
            continue
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(table_csv(rows, columns))
        paths.append(path)
    return paths


def read_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


KEY_COLUMNS = ("run", "scenario", "protocol", "client", "request", "attempt", "chain", "relayer",
               "job", "operation", "contract")


@dataclass
class Delta:
    key: str
    metric: str
    a: object
    b: object

    @property
    def change(self):
        x, y = _num(self.a), _num(self.b)
        if x is None or y is None:
            return None
        return y - x

    @property
    def pct(self):
        x, y = _num(self.a), _num(self.b)
        if x is None or y is None or x == 0:
            return None
        return 100.0 * (y - x) / x


def _pair_rows(csv_a: str, csv_b: str):
    cols_a, rows_a = read_csv(csv_a)
    cols_b, rows_b = read_csv(csv_b)
    if cols_a != cols_b:
        raise SchemaMismatch(f"columns differ: {cols_a} vs {cols_b}")
    keys = [c for c in cols_a if c in KEY_COLUMNS]

    def index(rows):
        out = {}
        for r in rows:
            k = "|".join(r[c] for c in keys)
            if k in out:
                return None
            out[k] = r
        return out

    ia, ib = index(rows_a), index(rows_b)
    if keys and ia is not None and ib is not None and set(ia) == set(ib):
        pairs = [(k, ia[k], ib[k]) for k in ia]
    else:
        # positional; the key shown is that of the first file
        n = max(len(rows_a), len(rows_b))
        pairs = []
        for j in range(n):
            ra = rows_a[j] if j < len(rows_a) else {}
            rb = rows_b[j] if j < len(rows_b) else {}
            label = "|".join(ra.get(c, "") for c in keys) if keys and ra else str(j)
            pairs.append((label, ra, rb))
    return cols_a, keys, pairs


def compare(csv_a: str, csv_b: str) -> list[Delta]:
    """Per-row, per-metric differences between two CSV files with the same schema.

    Rows are matched on their key columns when both files carry the same
    keys, otherwise by position. Identical files give an empty list.
    """
    cols, keys, pairs = _pair_rows(csv_a, csv_b)
    deltas = []
    for k, ra, rb in pairs:
        for c in cols:
            if c not in keys and ra.get(c) != rb.get(c):
                deltas.append(Delta(k, c, ra.get(c), rb.get(c)))
    return deltas


TRENDS = {"increase": operator.gt, "decrease": operator.lt, "equal": operator.eq,
          "nondecrease": operator.ge, "nonincrease": operator.le}


def check_trend(csv_a: str, csv_b: str, metric: str, direction: str) -> list[str]:
    """Rows where ``metric`` does not move from ``csv_a`` to ``csv_b`` as ``direction`` says."""
    cols, _, pairs = _pair_rows(csv_a, csv_b)
    if metric not in cols:
        raise SchemaMismatch(f"no column {metric!r}")
    test = TRENDS[direction]
    failures = []
    for k, ra, rb in pairs:
        x, y = _num(ra.get(metric)), _num(rb.get(metric))
        if x is None or y is None or not test(y, x):
            failures.append(f"{k}: {metric} {ra.get(metric)} -> {rb.get(metric)}")
    return failures


def format_deltas(deltas: list[Delta]) -> str:
    lines = []
    for d in deltas:
        pct = d.pct
        extra = f" ({d.change:+g}, {pct:+.2f}%)" if pct is not None else (
            f" ({d.change:+g})" if d.change is not None else "")
        lines.append(f"{d.key}  {d.metric}: {d.a} -> {d.b}{extra}")
    return "\n".join(lines)
