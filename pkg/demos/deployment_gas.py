# %% [markdown]
# # What logic-state decoupling saves at clone time
#
# Cloning a monolithic contract copies its storage layout too. After the split
# only the pure logic program travels; the state stays at home.

# %%
from xchainsim.bench import lsd_rows
from xchainsim.lsd import lsd_transform
from xchainsim.samples import load_program

for row in lsd_rows():
    print(f"{row['contract']:8s} monolithic={row['monolithic_gas']:>8} "
          f"lsd={row['lsd_gas']:>8}  saving={row['saving_pct']}%")

# %%
logic, state = lsd_transform(load_program("hotel"))
print("state slots:", [s.name for s in state.slots])
print("logic slots:", [s.name for s in logic.slots])
print("logic functions:", [f.name for f in logic.functions])
