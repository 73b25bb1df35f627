# %% [markdown]
# # A train-and-hotel booking across three chains
#
# The agency contract lives on chain 1, the train on chain 2 and the hotel on
# chain 3. We clone the remote logic onto chain 1, then book one trip with
# IntegrateX. A second network books the same trip with the sequential baseline.

# %%
from xchainsim.audit import audit, snapshot_states
from xchainsim.encoding import account_key
from xchainsim.network import Client, Network, default_chains, run_clients
from xchainsim.samples import train_hotel


def network(seed=1):
    net = Network(default_chains(3, block_time=5_000), seed=seed)
    net.add_service("agency", 1, "agency")
    net.add_service("train", 2, "train")
    net.add_service("hotel", 3, "hotel")
    net.add_relayer("r0", "honest")
    return net


net = network()

# %% [markdown]
# ## Deployment
# The provider asks chain 2 and chain 3 for clones; a relayer deploys them on
# chain 1 and the bridge verifies their bytecode hashes against the originals.

# %%
job = net.deploy(train_hotel())
for phase, t, height in job.timeline:
    print(f"{phase:15s} t={t:>7d} ms  height={height}")

# %% [markdown]
# ## One invocation per protocol


# %%
def book(net, protocol):
    user = net.add_user("alice")
    genesis = snapshot_states(net)
    client = Client(net, user, "train-hotel", {"user": account_key(user), "n": 2},
                    protocol=protocol)
    run_clients(net, [client], net.world.now + 1_000_000)
    req = client.done[0]
    inv = client.endpoint.invocations[req.attempts[-1]]
    print(f"{protocol:10s} {req.status:9s} latency={req.latency} ms  messages={inv.msgs}")
    print("           per chain:", inv.per_chain)
    print("           seats left:", net.state("train").storage["seats"],
          " rooms left:", net.state("hotel").storage["remain"],
          " audit ok:", audit(net, genesis, [client.endpoint]).ok)


book(net, "integratex")
other = network()
other.deploy(train_hotel())
book(other, "baseline")

# %% [markdown]
# IntegrateX sends one lock and one update message per invoked chain no matter
# how deep the call tree is. The baseline visits the train chain twice, once
# per train leg, and holds whole-contract locks while it does.
