"""Regenerate the bundled NEDC speed table from its piecewise-linear phase list.

Phases follow UNECE Regulation 83 (ECE-15 urban cycle x4, then EUDC), with
gear-shift pauses folded into the neighbouring ramps.
"""
import sys
from pathlib import Path

import numpy as np

# (duration_s, end_speed_kmh); speed ramps linearly from the previous end speed
ECE15 = [
    (11, 0), (4, 15), (8, 15), (5, 0), (21, 0), (12, 32), (24, 32), (11, 0),
    (21, 0), (26, 50), (12, 50), (8, 35), (13, 35), (12, 0), (7, 0),
]
EUDC = [
    (20, 0), (41, 70), (50, 70), (8, 50), (69, 50), (13, 70), (50, 70),
    (35, 100), (30, 100), (20, 120), (10, 120), (34, 0), (20, 0),
]


def build():
    speeds = [0.0]
    for duration, end in ECE15 * 4 + EUDC:
        start = speeds[-1]
        speeds.extend(np.linspace(start, end, duration + 1)[1:].tolist())
    return np.asarray(speeds)


def main(out):
    v = build()
    with open(out, "w") as fh:
        fh.write("# NEDC (UNECE R83): 4x ECE-15 urban + EUDC, 1 Hz, 1180 s\n")
        fh.write("# shift pauses merged into the adjacent ramps\n")
        fh.write("time_s,speed_kmh\n")
        for t, s in enumerate(v):
            fh.write(f"{t},{s:.4f}\n")
    print(len(v) - 1, "s", np.trapezoid(v / 3.6) / 1000.0, "km")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("nedc.csv"))
