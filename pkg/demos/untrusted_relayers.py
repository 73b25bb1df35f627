# %% [markdown]
# # Relayers that lie, drop or race
#
# Relayers are untrusted. Here one honest relayer shares the network with a
# tamperer and a dropper. Tampered receipts fail their Merkle proofs, a
# tampered clone fails verification and is banned, and the job restarts.

# %%
from xchainsim.audit import audit, snapshot_states
from xchainsim.encoding import account_key
from xchainsim.faults import fault_run
from xchainsim.network import Client, Network, default_chains, run_clients
from xchainsim.samples import train_hotel

net = Network(default_chains(3), seed=3)
net.add_service("agency", 1, "agency")
net.add_service("train", 2, "train")
net.add_service("hotel", 3, "hotel")
net.add_relayer("liar", "tamper", 1.0, phase=0)
net.add_relayer("lazy", "drop", 1.0, phase=1)
net.add_relayer("good", "honest", phase=2)

job = net.deploy(train_hotel())
bridge = net.world.bridge(1)
print("deployment:", job.phase, "restarts:", job.restart_count)
print("scores:", bridge.scores)
print("banned:", sorted(bridge.banned))

# %%
user = net.add_user("carol")
genesis = snapshot_states(net)
client = Client(net, user, "train-hotel", {"user": account_key(user), "n": 1})
run_clients(net, [client], net.world.now + 1_000_000)
print("invocation:", client.done[0].status, client.done[0].latency, "ms")
for cid in sorted(net.world.chains):
    print(f"chain {cid}:", net.world.bridge(cid).stats)
print("audit ok:", audit(net, genesis, [net.hub]).ok)

# %% [markdown]
# ## Randomised fault schedules
# Each seed mixes relayer faults, lock conflicts, failing executions and
# timeouts. The audit replays committed work on a single chain and compares.

# %%
for seed in range(5):
    out = fault_run(seed)
    print(seed, out.injected, "ok" if out.ok else out.violations)
