"""Adaptive degree of declustering.

The master trims idle capacity: when no slave is a supplier, one consumer
gives up its partition-groups and deactivates each reorganization. Under
overload it grows the pool: whenever suppliers outnumber beta times the
consumers, an inactive slave is activated and absorbs groups through the
regular supplier-to-consumer moves.
"""

from streamjoin import RunConfig, run_simulation


def timeline(record):
    events = []
    for row in record:
        if row[1] in ("activate", "deactivate", "supplier"):
            events.append((row[0], row[1], row[2]))
    return events


print("== idle cluster: shrink to a single node ==")
cfg = RunConfig(lambda_tps=0, n_slaves=4, w_minutes=0.05, t_d_sec=0.5,
                t_r_sec=2.0, duration_sec=10, warmup_sec=0, measure_sec=10,
                n_part=12, theta_mb=0.01, block_kb=1, adaptive=True, seed=8)
art = run_simulation(cfg)
for epoch, kind, sid in timeline(art.master.record):
    if kind == "deactivate":
        print(f"  epoch {epoch:>3}: deactivate slave {sid}")
print(f"  active slaves at the end: {len(art.master.active_ids())}")

print("\n== overloaded pair with four spares: grow the pool ==")
cfg = RunConfig(lambda_tps=400, n_slaves=6, n_active_init=2, w_minutes=0.05,
                key_domain=100_000, t_d_sec=0.5, t_r_sec=2.0, duration_sec=12,
                warmup_sec=0, measure_sec=12, n_part=12, theta_mb=0.002,
                block_kb=1, map_cost_ns=5_000_000, cmp_cost_ns=1000,
                adaptive=True, b=0.5, seed=3, buffer_mb=0.05)
art = run_simulation(cfg)
for epoch, kind, sid in timeline(art.master.record):
    label = {"activate": "activate slave", "supplier": "supplier"}.get(kind)
    if label:
        print(f"  epoch {epoch:>3}: {label} {sid}")
print(f"  active slaves at the end: {len(art.master.active_ids())} "
      f"(moves executed: {art.metrics.moves})")
