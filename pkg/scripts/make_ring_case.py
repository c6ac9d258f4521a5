#!/usr/bin/env python3
"""Generate the synthetic 120-bus ring benchmark case (deterministic).

A 120-bus ring with meshing chords, ten generators, distributed loads, a
couple of tap transformers and one shunt bank.  Written as a Matpower file
so the bundled corpus gets one case large enough for runtime comparisons.
"""

import pathlib

N = 120
GEN_BUSES = list(range(1, N + 1, 12))  # 1, 13, ..., 109
CHORDS = [(i, (i + 16) % N + 1) for i in range(1, N + 1, 10)]


def main() -> None:
    bus_rows = []
    for i in range(1, N + 1):
        btype = 3 if i == 1 else (2 if i in GEN_BUSES else 1)
        pd, qd = (0.0, 0.0) if i in GEN_BUSES else (8.0, 2.5)
        bs = 10.0 if i == 60 else 0.0
        bus_rows.append(
            f"\t{i}\t{btype}\t{pd}\t{qd}\t0\t{bs}\t1\t1.00\t0\t138\t1\t1.06\t0.94;"
        )
    gen_rows = []
    for k, i in enumerate(GEN_BUSES):
        pg = 96.0 if i == 1 else 88.0
        vg = 1.03 if i == 1 else 1.02
        gen_rows.append(f"\t{i}\t{pg}\t10\t60\t-60\t{vg}\t100\t1\t120\t0;")
    branch_rows = []
    for i in range(1, N + 1):
        j = i % N + 1
        r = 0.008 + 0.004 * ((i * 7) % 3)
        x = 0.035 + 0.010 * ((i * 5) % 4)
        b = 0.010
        tap, shift = (0.98, 1.0) if i % 30 == 0 else (0, 0)
        branch_rows.append(
            f"\t{i}\t{j}\t{r:.4f}\t{x:.4f}\t{b:.3f}\t60\t0\t0\t{tap}\t{shift}\t1\t-18\t18;"
        )
    for i, j in CHORDS:
        branch_rows.append(
            f"\t{i}\t{j}\t0.0150\t0.0900\t0.012\t40\t0\t0\t0\t0\t1\t-18\t18;"
        )
    cost_rows = [f"\t2\t0\t0\t3\t0.05\t{15 + 2 * k}\t0;" for k in range(len(GEN_BUSES))]

    text = "\n".join(
        [
            "function mpc = case120_ring",
            "% Synthetic 120-bus ring network with chords (generated file).",
            "mpc.version = '2';",
            "mpc.baseMVA = 100;",
            "",
            "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
            "mpc.bus = [",
            *bus_rows,
            "];",
            "",
            "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
            "mpc.gen = [",
            *gen_rows,
            "];",
            "",
            "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
            "mpc.branch = [",
            *branch_rows,
            "];",
            "",
            "%\tmodel\tstartup\tshutdown\tn\tc2\tc1\tc0",
            "mpc.gencost = [",
            *cost_rows,
            "];",
            "",
        ]
    )
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "cases" / "case120_ring.m"
    out.write_text(text)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
