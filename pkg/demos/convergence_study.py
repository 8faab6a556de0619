"""Temporal and spatial convergence on the shrinking sphere.

Halves the step size on a fixed mesh, then refines the mesh at a fixed step,
and prints the error table with experimental orders of convergence. The
tables are also written as CSV next to the working directory.

Run with ``python3 demos/convergence_study.py`` (several minutes on one core).
"""
from mcflow import convergence_study

for protocol in ("temporal", "spatial"):
    table, _ = convergence_study(protocol, q=3, k=2, R0=2.0, T=0.6,
                                 taus=(0.2, 0.1, 0.05, 0.025, 0.0125),
                                 subdivisions=(2, 3, 4) if protocol == "spatial" else (3,))
    print(f"\n{protocol} study")
    header = ["tau", "h"] + [f"{c}_{q}" for q in ("x", "nu", "H") for c in ("err", "eoc")]
    print(" ".join(f"{c:>9}" for c in header))
    for row in table.rows:
        values = [row["tau"], row["h"]] + [row[f"{c}_{q}"] for q in ("x", "nu", "H")
                                          for c in ("err", "eoc")]
        print(" ".join(f"{v:9.3g}" for v in values))
    table.write_csv(f"{protocol}_eoc.csv")
