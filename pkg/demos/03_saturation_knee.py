"""Average production delay versus arrival rate, by slave population.

Below the system's capacity the delay curve is near-flat: the load
diffuser keeps every node inside its epoch budget. Past the saturation
point, backlog accumulates every epoch and the delay rises sharply. Adding
slaves moves the knee to the right.

Writes out/knee/knee.png when matplotlib is available.
"""

import os

from streamjoin import RunConfig, run_simulation

RATES = (40, 90, 180, 360, 720)

curves = {}
for k in (1, 2, 4):
    row = []
    for lam in RATES:
        cfg = RunConfig(lambda_tps=lam, n_slaves=k, w_minutes=2 / 60,
                        key_domain=max(200, 30 * lam), t_d_sec=0.5, t_r_sec=2.0,
                        duration_sec=10, warmup_sec=4, measure_sec=6, n_part=12,
                        theta_mb=0.002, block_kb=1, map_cost_ns=5_000_000,
                        cmp_cost_ns=1000, adaptive=False, b=0.5, seed=1)
        art = run_simulation(cfg)
        row.append(art.metrics.avg_delay_ms)
    curves[k] = row
    print(f"slaves={k}: " + "  ".join(
        f"{lam}t/s:{d:8.0f}ms" for lam, d in zip(RATES, row)))

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping the plot")
else:
    os.makedirs("out/knee", exist_ok=True)
    fig, ax = plt.subplots()
    for k, row in curves.items():
        ax.plot(RATES, row, marker="o", label=f"{k} slave{'s' if k > 1 else ''}")
    ax.set_xlabel("arrival rate (tuples/sec/stream)")
    ax.set_ylabel("avg production delay (ms)")
    ax.set_xscale("log")
    ax.legend()
    fig.savefig("out/knee/knee.png", dpi=120, bbox_inches="tight")
    print("wrote out/knee/knee.png")
