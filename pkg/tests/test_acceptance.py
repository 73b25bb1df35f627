"""Acceptance criteria 1-12. Each test records one PASS/FAIL line."""
import random
import statistics

import pytest

from conftest import invoke_once, make_network, record
from xchainsim.audit import oracle_replay, snapshot_states
from xchainsim.bench import run_scenario
from xchainsim.calltree import analyze
from xchainsim.deploy import run_deployment
from xchainsim.encoding import account_key, digest
from xchainsim.faults import fault_run
from xchainsim.network import Client, run_clients
from xchainsim.samples import linear, random_dapp, train_hotel

#: IntegrateX stage count in block rounds, derived from the simulator pipeline
#: (invoke, relay lock, lock, relay result + execute, relay update, update, relay ack + result)
GOLDEN_ROUNDS = 7


def _first_inv(net, client, protocol="integratex"):
    return net.endpoint(protocol).invocations[client.done[0].attempts[-1]]


@pytest.fixture(scope="module")
def scenarios():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_scenario(name)
        return cache[name]
    return get


# -- exact structural laws ---------------------------------------------------------------

def test_c01_aggregation_law():
    bad, checked, sizes = [], 0, set()
    for seed in range(150):
        net = make_network(seed=seed)
        d = random_dapp(random.Random(seed), net.services, max_nodes=8)
        tree, _, _ = analyze(d, net.services)
        chains = tree.invoked_chains()
        sizes.add(len(tree.nodes))
        clients, report = invoke_once(net, d, retry=False, n=1 + seed % 3)
        for inv in net.hub.invocations.values():
            checked += 1
            per = {c: dict(v) for c, v in inv.per_chain.items()}
            want = len(chains)
            ok = (inv.msgs.get("LOCK_REQ", 0) == want and inv.msgs.get("UPDATE_REQ", 0) == want
                  and sorted(per) == chains
                  and all(v.get("LOCK_REQ") == 1 and v.get("UPDATE_REQ") == 1 for v in per.values()))
            if not ok or not report.ok:
                bad.append((seed, inv.msgs, chains))
    ok = not bad and checked == 150 and max(sizes) == 8
    record(1, "aggregation law", ok,
           f"{checked} invocations, trees of {min(sizes)}-{max(sizes)} contracts, {len(bad)} mismatches")
    assert ok, bad[:5]


def test_c02_round_count_constancy():
    ix, base = {}, {}
    for d in range(1, 7):
        for protocol, out in (("integratex", ix), ("baseline", base)):
            net = make_network()
            clients, report = invoke_once(net, linear(d), protocol=protocol)
            req = clients[0].done[0]
            assert req.status == "Committed" and report.ok
            out[d] = req.latency / net.world.min_block_time
    slopes = {base[d + 1] - base[d] for d in range(1, 6)}
    ok = (all(r == GOLDEN_ROUNDS for r in ix.values())
          and len(slopes) == 1 and next(iter(slopes)) > 0)
    record(2, "round-count constancy", ok,
           f"IntegrateX rounds {sorted(set(ix.values()))} (golden {GOLDEN_ROUNDS}); "
           f"baseline {[base[d] for d in range(1, 7)]} slope {sorted(slopes)}")
    assert ok


def test_c03_exactly_once_clone():
    failures = []
    for seed in range(100):
        rng = random.Random(seed)
        net = make_network(relayers=(), seed=seed)
        for i in range(4):
            net.add_relayer(f"r{i}", "honest", phase=rng.randrange(net.world.min_block_time // 2))
        job = run_deployment(net, train_hotel(), 1)
        bridge = net.world.bridge(1)
        for sid in ("train", "hotel"):
            entry = bridge.registry.get(sid)
            wins = [s for r in net.relayers for s in r.sent if s.kind == "clone"
                    and net.exec.receipt(s.tx_hash).status == "success"
                    and s.message == digest(sid)]
            if (job.phase != "Verified" or entry is None or not entry.verified or len(wins) != 1
                    or not bridge.compare_bytes(entry.logic_addr, net.services[sid].logic.code_hash)):
                failures.append((seed, sid, job.phase, len(wins)))
    ok = not failures
    record(3, "exactly-once clone", ok, f"100 schedules x 4 racing relayers, {len(failures)} failures")
    assert ok, failures[:5]


# -- trend reproduction ------------------------------------------------------------------

def test_c04_train_hotel_latency(scenarios):
    res = scenarios("train-hotel")
    ix = float(res.metric("integratex", "mean_latency_ms"))
    base = float(res.metric("baseline", "mean_latency_ms"))
    rounds = {r["run"]: int(r["state_rounds"]) for r in res.tables["chains"] if str(r["chain"]) == "2"}
    ok = ix <= 0.6 * base and rounds["integratex"] == 1 and rounds["baseline"] >= 2 and res.ok
    record(4, "train-and-hotel latency", ok,
           f"{ix:.0f} vs {base:.0f} ms ({100 * (1 - ix / base):.1f}% reduction); "
           f"train-chain rounds {rounds['integratex']} vs {rounds['baseline']}")
    assert ok


def _r2(xs, ys):
    fit = statistics.linear_regression(xs, ys)
    pred = [fit.slope * x + fit.intercept for x in xs]
    mean = statistics.fmean(ys)
    ss_res = sum((y - p) ** 2 for y, p in zip(ys, pred))
    ss_tot = sum((y - mean) ** 2 for y in ys)
    return 1 - ss_res / ss_tot


def test_c05_block_time_sweep(scenarios):
    res = scenarios("blocktime-sweep")
    bts = [2000, 5000, 8000, 12000]
    lat = {p: [float(res.metric(f"{p}/block_time={bt}", "mean_latency_ms")) for bt in bts]
           for p in ("integratex", "baseline")}
    r2 = {p: _r2(bts, ys) for p, ys in lat.items()}
    below = all(a < b for a, b in zip(lat["integratex"], lat["baseline"]))
    ok = all(v >= 0.99 for v in r2.values()) and below and res.ok
    record(5, "block-time sweep", ok,
           f"R2 integratex {r2['integratex']:.4f}, baseline {r2['baseline']:.4f}; "
           f"IntegrateX below baseline at every point: {below}")
    assert ok


def test_c06_depth_sweep(scenarios):
    depth = scenarios("depth-sweep")
    ix = float(depth.metric("integratex/depth=4", "mean_latency_ms"))
    base = float(depth.metric("baseline/depth=4", "mean_latency_ms"))
    tput = (float(depth.metric("integratex/depth=4", "throughput_per_s"))
            / float(depth.metric("baseline/depth=4", "throughput_per_s")))
    ta = scenarios("ta-ablation")
    on = int(ta.metric("integratex/depth=4,ta=on", "total_gas"))
    off = int(ta.metric("integratex/depth=4,ta=off", "total_gas"))
    reduction, saving = 1 - ix / base, 1 - on / off
    ok = reduction >= 0.5 and tput >= 2.0 and on < off and saving >= 0.10 and depth.ok and ta.ok
    record(6, "depth sweep at d=4", ok,
           f"latency reduction {100 * reduction:.1f}%, throughput ratio {tput:.2f}, "
           f"TA gas saving {100 * saving:.1f}%")
    assert ok


def test_c07_fgsl_concurrency(scenarios):
    res = scenarios("concurrency-sweep")
    single = float(res.metric("integratex/concurrency=1,fgsl=on", "mean_latency_ms"))
    on = float(res.metric("integratex/concurrency=6,fgsl=on", "mean_latency_ms"))
    off = float(res.metric("integratex/concurrency=6,fgsl=off", "mean_latency_ms"))
    ok = on <= 1.2 * single and off >= 3 * single and res.ok
    record(7, "FGSL concurrency", ok,
           f"6 concurrent: on {on / single:.2f}x, off {off / single:.2f}x single ({single:.0f} ms)")
    assert ok


def test_c08_lsd_deployment_gas(scenarios):
    rows = {r["contract"]: r for r in scenarios("lsd-gas").tables["lsd"]}
    train, hotel = rows["Train"], rows["Hotel"]
    ok = (int(train["lsd_gas"]) < int(train["monolithic_gas"])
          and int(hotel["lsd_gas"]) < int(hotel["monolithic_gas"])
          and float(hotel["saving_pct"]) > float(train["saving_pct"]))
    record(8, "LSD deployment gas", ok,
           f"Hotel saving {hotel['saving_pct']}% > Train saving {train['saving_pct']}%")
    assert ok


# -- property suites -----------------------------------------------------------------------

def test_c09_atomicity_audit():
    outcomes = [fault_run(seed) for seed in range(1000)]
    bad = [o for o in outcomes if not o.ok]
    kinds = set()
    for o in outcomes:
        kinds.update(o.injected)
    reasons = {k: sum(int(o.summary.get(k, 0)) for o in outcomes)
               for k in ("lock_conflicts", "exec_failures", "timeouts")}
    covered = all(reasons.values())
    ok = not bad and covered
    record(9, "atomicity audit", ok,
           f"1000 fault schedules, {len(bad)} violations; aborts by kind {reasons}")
    assert ok, [(o.seed, o.violations[:2]) for o in bad[:5]]


def test_c10_verifiability():
    tampered = rejected = honest = false_reject = clones_bad = clones_bad_rejected = 0
    replays = replay_dup = 0
    for seed in range(100):
        rng = random.Random(seed)
        half = 2_500
        net = make_network(relayers=(), seed=seed)
        net.add_relayer("h", "honest", phase=rng.randrange(half))
        net.add_relayer("t1", "tamper", 1.0, phase=rng.randrange(half))
        net.add_relayer("t5", "tamper", 0.5, phase=rng.randrange(half))
        net.deploy(train_hotel())
        invoke_once(net, users=2, n=1 + seed % 2)
        for r in net.relayers:
            for s in r.sent:
                ch = net.world.chain(s.chain)
                if s.tx_hash not in ch.tx_index:
                    continue
                status = ch.receipt(s.tx_hash).status
                if s.kind == "relay":
                    if s.tampered:
                        tampered += 1
                        rejected += status == "revert"
                    else:
                        honest += 1
                elif s.kind == "clone" and s.tampered and status == "success":
                    clones_bad += 1
        for cid in net.world.chains:
            b = net.world.bridge(cid)
            false_reject += b.stats["not_final"]
            false_reject += sum(1 for _, who, _ in b.rejected_log if who == "relayer:h")
            clones_bad_rejected += b.stats["verify_fail"]
            for e in b.registry.values():
                if e.verified and not b.compare_bytes(e.logic_addr, net.services[e.service_id].logic.code_hash):
                    false_reject += 1000            # a tampered clone slipped through
        # replay every accepted message once more
        replayer = "replayer"
        for cid in net.world.chains:
            ch = net.world.chain(cid)
            ch.fund(replayer, 10**15)
            b = net.world.bridge(cid)
            before = b.stats["accepted"]
            for _, _, _, tx in list(b.accepted_log):
                method, args = ch.txs[tx].call()
                ch.send(replayer, b.address, method, *args, gas_limit=5_000_000)
                replays += 1
            dup0 = b.stats["duplicate"]
            ch.produce_block(net.world.now + 1)
            replay_dup += b.stats["duplicate"] - dup0
            assert b.stats["accepted"] == before
    ok = (tampered > 0 and rejected == tampered and false_reject == 0
          and clones_bad > 0 and clones_bad_rejected == clones_bad and replay_dup == replays)
    record(10, "verifiability", ok,
           f"tampered messages rejected {rejected}/{tampered}, tampered clones rejected "
           f"{clones_bad_rejected}/{clones_bad}, honest false rejections {false_reject}, "
           f"replays dispatched again {replays - replay_dup}/{replays}")
    assert ok


def test_c11_liveness():
    failures = []
    adversaries = ("drop", "tamper", "premature_clone")
    for seed in range(100):
        rng = random.Random(seed)
        roles = ["honest"] + [rng.choice(adversaries) for _ in range(3)]
        rng.shuffle(roles)
        net = make_network(relayers=(), seed=seed)
        for i, role in enumerate(roles):
            p = 1.0 if role == "drop" else rng.choice((0.5, 1.0))
            net.add_relayer(f"r{i}", role, p)
        job = net.deploy(train_hotel())
        clients, report = invoke_once(net, retry=False)
        inv = _first_inv(net, clients[0])
        locked = dict(inv.history).get("Executing", 10**9)
        if (job.phase != "Verified" or inv.status != "Committed" or not report.ok
                or locked > inv.deadline_height):
            failures.append((seed, roles, job.phase, inv.status, inv.reason))
    ok = not failures
    record(11, "liveness with one honest relayer of four", ok,
           f"100 seeds, {len(failures)} jobs or invocations not completed")
    assert ok, failures[:5]


def test_c12_differential_correctness():
    compared = mismatches = 0
    for seed in range(200):
        ends = {}
        for protocol in ("integratex", "baseline"):
            net = make_network(seed=seed)
            d = random_dapp(random.Random(seed), net.services, max_nodes=8)
            net.deploy(d, preinstalled=True)
            user = net.add_user("u")
            genesis = snapshot_states(net)
            client = Client(net, user, d["name"], {"user": account_key(user), "n": 1 + seed % 3},
                            protocol=protocol, retry=False)
            run_clients(net, [client], 10**7)
            inv = _first_inv(net, client, protocol)
            state = {sid: {k: v for k, v in net.state(sid).storage.items() if v}
                     for sid in net.services}
            oracle, fails = oracle_replay(net, genesis, [(inv, net.endpoint(protocol).dapps[d["name"]])])
            oracle = {sid: {k: v for k, v in s.items() if v} for sid, s in oracle.items()}
            ends[protocol] = (inv.status, state, oracle, fails)
        if all(e[0] == "Committed" for e in ends.values()):
            compared += 1
            (_, s1, o1, f1), (_, s2, _, f2) = ends["integratex"], ends["baseline"]
            if not (s1 == s2 == o1) or f1 or f2:
                mismatches += 1
    ok = mismatches == 0 and compared >= 100
    record(12, "differential correctness", ok,
           f"{compared}/200 random dApps committed under both protocols, {mismatches} mismatches")
    assert ok
