"""Write the constant-action NEDC reference trace used by the test suite.

This is a deliberately separate scalar implementation of the vehicle
recurrence (plain Python floats, no package imports) so the vectorized
environment can be checked against it.

Usage: python scripts/make_golden.py [out.csv]
"""
import csv
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
ACTION = 0.3

# default vehicle
M, CD, AREA, CR, RHO, ETA_DL = 1500.0, 0.26, 2.0, 0.01, 1.2, 1.0
CAP_AH, VOLT = 6.5, 202.0
P_ENG_MAX, IDLE, ETA_ENG, LHV, P_MOT = 56000.0, 0.15, 0.36, 43000.0, 50000.0
V_MAX = 34.0
G = 9.81


def read_speeds():
    rows = []
    with open(ROOT / "src/robust_cofc/data/nedc.csv") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    for r in csv.DictReader(lines):
        rows.append(float(r["speed_kmh"]) / 3.6)
    return rows


def limits(t, ts, H=0.7, L=0.5, B=0.6):
    bl, br = math.ceil(0.1 * ts), math.floor(0.9 * ts)
    out = []
    for X in (H, L):
        if t <= bl:
            out.append((X - B) / bl * t + B)
        elif t > br:
            out.append((X - B) / (br - ts) * (t - ts) + B)
        else:
            out.append(X)
    return out


def main(out):
    v = read_speeds()
    ts = len(v) - 1
    soc = 0.6
    energy = CAP_AH * 3600.0 * VOLT
    rows = []
    for t in range(ts):
        vm = 0.5 * (v[t] + v[t + 1])
        acc = v[t + 1] - v[t]
        demand = (M * acc * vm + 0.5 * RHO * CD * AREA * vm**3 + M * G * CR * vm) / ETA_DL
        p_eng = ACTION * P_ENG_MAX
        p_bat = min(max(demand - p_eng, -P_MOT), P_MOT)
        soc_next = min(max(soc - p_bat / energy, 0.0), 1.0)
        fuel = IDLE + p_eng / (ETA_ENG * LHV) if p_eng > 0 else 0.0
        up, low = limits(t + 1, ts)
        cost = max(soc_next - up, 0.0) + max(low - soc_next, 0.0)
        rows.append((t, soc, v[t] / V_MAX, ACTION, -fuel, cost))
        soc = soc_next
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "soc", "velocity", "action", "reward", "cost"])
        for r in rows:
            w.writerow([r[0]] + [repr(x) for x in r[1:]])
    print(f"{out}: {len(rows)} steps, fuel {-sum(r[4] for r in rows):.3f} g, cost {sum(r[5] for r in rows):.4f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ROOT / "tests/data/golden_nedc_const03.csv")
