# %% [markdown]
# # Driving a sweep from the command line
#
# `purcell_scenario.json` next to this file describes the mirror emitter
# as a scenario: materials, a stack, an emitter, one log sweep over height
# and the observable to record. Equivalent shell commands:
#
#     fluctua run demos/purcell_scenario.json --check
#     fluctua run demos/purcell_scenario.json -o out/ --tol 1e-7
#
# Here we call the same entry point from Python.

# %%
import csv
import json
import pathlib
import tempfile

from fluctua.cli import main

here = pathlib.Path(__file__).resolve().parent
scenario = str(here / "purcell_scenario.json")
out = pathlib.Path(tempfile.mkdtemp()) / "run"

assert main(["run", scenario, "--check"]) == 0
status = main(["run", scenario, "-o", str(out)])
print("exit status", status)

# %%
with open(out / "00_purcell_factor.csv") as fh:
    rows = list(csv.reader(fh))
print(rows[0])
for r in rows[1::6]:
    print(r)

# %% [markdown]
# The manifest records the resolved inputs and per-observable status.

# %%
man = json.loads((out / "manifest.json").read_text())
print(json.dumps(man["observables"], indent=1))
