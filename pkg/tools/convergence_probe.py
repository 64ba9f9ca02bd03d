"""Developer probe: acceptance-scale manufactured convergence runs.

Writes one line per run to stdout; used to pin expectations before the
acceptance suite was frozen.
"""
import sys
import time

from thmfrac.scenarios import fit_orders, run_manufactured

mode = sys.argv[1] if len(sys.argv) > 1 else "centred1"

if mode == "centred1":
    jobs = [("H", "centred", 1.0), ("S", "centred", 1.0)]
elif mode == "upwind":
    jobs = [("H", "upwind", 1.0), ("H", "upwind", 100.0), ("H", "centred", 100.0)]
else:
    raise SystemExit(f"unknown mode {mode}")

for scheme, convection, k in jobs:
    rows = []
    for m in (3, 4, 5):
        t0 = time.time()
        r = run_manufactured(m, scheme=scheme, convection=convection,
                             permeability=k, t_final=0.05, dt=1e-4)
        if r.completed:
            print(f"{scheme}/{convection}/k={k} m={m}: {time.time()-t0:.0f}s",
                  {kk: f"{v:.3e}" for kk, v in r.errors.items()},
                  f"minslack {r.min_slack:.1e}", flush=True)
        else:
            print(f"{scheme}/{convection}/k={k} m={m}: FAILED {r.failure_message}",
                  flush=True)
        rows.append(r)
    print(f"{scheme}/{convection}/k={k} orders:",
          {kk: f"{v:.2f}" for kk, v in fit_orders(rows).items()}, flush=True)
