# %% [markdown]
# # Fine-grained locks under contention
#
# Six travellers book the same train and hotel at once. With fine-grained
# state locks (FGSL) each one reserves only the seats it needs; without them
# every invocation locks whole slots and the rest abort and retry.

# %%
from xchainsim.bench import run_scenario

res = run_scenario("concurrency-sweep")
single = float(res.metric("integratex/concurrency=1,fgsl=on", "mean_latency_ms"))
print(f"{'clients':>7s} {'fgsl on':>10s} {'fgsl off':>10s}")
for k in range(1, 7):
    on = float(res.metric(f"integratex/concurrency={k},fgsl=on", "mean_latency_ms"))
    off = float(res.metric(f"integratex/concurrency={k},fgsl=off", "mean_latency_ms"))
    print(f"{k:7d} {on / single:9.2f}x {off / single:9.2f}x")

# %% [markdown]
# Aborts under coarse locks show up as lock conflicts in the summary table.

# %%
for fgsl in ("on", "off"):
    label = f"integratex/concurrency=6,fgsl={fgsl}"
    print(label, "attempts:", res.metric(label, "attempts"),
          "lock conflicts:", res.metric(label, "lock_conflicts"))
