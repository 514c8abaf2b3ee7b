#!/usr/bin/env python3
"""Generates the 6-link pipeline fixture and its expected outputs.

The expected outputs are computed here with numpy/scipy, independently of
the C++ code. Run from any directory; files are written next to this script:

    trips.csv, segments.csv         inputs
    expected_speed.csv              speed matrix, 6 decimals
    expected_edges.csv, expected_nodes.txt
"""

import math
import os

import numpy as np
from scipy.ndimage import gaussian_filter1d

HERE = os.path.dirname(os.path.abspath(__file__))

INTERVAL = 300
TAU = 1000
FACTOR = 3
LOOKBACK = 4
SIGMA = 1.0
START = 1704067200  # Monday 00:00 UTC
DAYS = 14

SEGMENTS = [
    ("L1", "A", "B"),
    ("L2", "B", "C"),
    ("L3", "C", "D"),
    ("L4", "D", "E"),
    ("L5", "X", "Y"),
    ("L6", "Z", "C"),
]


def generate():
    rng = np.random.default_rng(20240101)
    end = START + DAYS * 86400
    trips = []
    for idx, (link, _, _) in enumerate(SEGMENTS):
        base = 45.0 + 5.0 * idx
        t = START + int(rng.integers(0, 600))
        if link == "L1":
            t = START
        while t < end - 1800:
            hour = ((t - START) % 86400) / 3600.0
            busy = 6.0 <= hour < 22.0
            gap_mean = 420.0 if busy else 2400.0
            if link == "L4":
                gap_mean *= 3.0  # sparse link: many empty 15-minute cells
            dur = int(rng.integers(40, 1300))
            dip = 15.0 * math.exp(-((hour - 8.0) ** 2) / 2.0) + 12.0 * math.exp(-((hour - 17.5) ** 2) / 2.5)
            speed = round(max(3.0, base - dip + rng.normal(0.0, 4.0)), 2)
            in_outage = link == "L5" and START + 4 * 86400 <= t < START + 8 * 86400
            if not in_outage:
                trips.append((link, t, t + dur, speed))
            t += 1 + int(rng.exponential(gap_mean))
    # Records on a link with no segment metadata.
    for k in range(25):
        s = START + 3600 * k
        trips.append(("L99", s, s + 200, 30.0))
    trips.sort(key=lambda r: (r[1], r[0]))
    return trips


def write_inputs(trips):
    with open(os.path.join(HERE, "trips.csv"), "w") as f:
        f.write("link_id,start_time,end_time,speed\n")
        for link, s, e, v in trips:
            f.write(f"{link},{s},{e},{v:.2f}\n")
    with open(os.path.join(HERE, "segments.csv"), "w") as f:
        f.write("link_id,origin_id,destination_id\n")
        for seg in SEGMENTS:
            f.write(",".join(seg) + "\n")


def read_inputs():
    trips = []
    with open(os.path.join(HERE, "trips.csv")) as f:
        next(f)
        for line in f:
            link, s, e, v = line.strip().split(",")
            trips.append((link, int(s), int(e), float(v)))
    segs = []
    with open(os.path.join(HERE, "segments.csv")) as f:
        next(f)
        for line in f:
            segs.append(tuple(line.strip().split(",")))
    return trips, segs


def expected_outputs(trips, segs):
    links = [s[0] for s in segs]
    trips = [t for t in trips if t[0] in links]

    pieces = []
    for link, s, e, v in trips:
        while e - s > INTERVAL:
            pieces.append((link, s, s + INTERVAL, v))
            s += INTERVAL
        pieces.append((link, s, e, v))

    origin = (min(p[1] for p in pieces) // INTERVAL) * INTERVAL
    last_end = max(p[2] for p in pieces)
    T = -((origin - last_end) // INTERVAL)
    grid = np.full((len(links), T), np.nan)
    row = {l: i for i, l in enumerate(links)}
    for link, s, e, v in pieces:
        a = (s - origin) // INTERVAL
        b = -((origin - e) // INTERVAL)  # exclusive
        cells = grid[row[link], a:b]
        grid[row[link], a:b] = np.where(np.isnan(cells), v, np.maximum(cells, v))

    def longest_nan_run(x):
        best = run = 0
        for missing in np.isnan(x):
            run = run + 1 if missing else 0
            best = max(best, run)
        return best

    keep = [i for i in range(len(links)) if longest_nan_run(grid[i]) <= TAU]
    grid = grid[keep]
    kept = [links[i] for i in keep]
    kept_segs = [segs[i] for i in keep]

    edges = []
    for i in range(len(kept_segs)):
        for j in range(i + 1, len(kept_segs)):
            if {kept_segs[i][1], kept_segs[i][2]} & {kept_segs[j][1], kept_segs[j][2]}:
                edges.append((kept[i], kept[j]))

    groups = T // FACTOR
    coarse = np.full((len(kept), groups), np.nan)
    for i in range(len(kept)):
        for g in range(groups):
            block = grid[i, g * FACTOR:(g + 1) * FACTOR]
            if not np.all(np.isnan(block)):
                coarse[i, g] = np.nanmax(block)

    period = 604800 // (INTERVAL * FACTOR)
    filled = coarse.copy()
    for i in range(len(kept)):
        for s in range(groups):
            if not np.isnan(coarse[i, s]):
                continue
            lags = [coarse[i, s - k * period] for k in range(1, LOOKBACK + 1) if s - k * period >= 0]
            lags = [v for v in lags if not np.isnan(v)]
            if lags:
                filled[i, s] = float(np.mean(lags))
        series = filled[i]
        first = int(np.argmax(~np.isnan(series)))
        for s in range(groups):
            if np.isnan(series[s]):
                series[s] = series[first] if s < first else series[s - 1]

    smooth = gaussian_filter1d(filled, sigma=SIGMA, axis=1, mode="reflect", truncate=4.0)
    return origin, kept, edges, smooth


def write_expected(origin, kept, edges, smooth):
    step = INTERVAL * FACTOR
    with open(os.path.join(HERE, "expected_speed.csv"), "w") as f:
        f.write("node_id," + ",".join(str(origin + k * step) for k in range(smooth.shape[1])) + "\n")
        for link, values in zip(kept, smooth):
            f.write(link + "," + ",".join(f"{v:.6f}" for v in values) + "\n")
    with open(os.path.join(HERE, "expected_edges.csv"), "w") as f:
        f.write("src_id,dst_id\n")
        for a, b in edges:
            f.write(f"{a},{b}\n")
    with open(os.path.join(HERE, "expected_nodes.txt"), "w") as f:
        for link in kept:
            f.write(link + "\n")


if __name__ == "__main__":
    write_inputs(generate())
    trips, segs = read_inputs()
    write_expected(*expected_outputs(trips, segs))
