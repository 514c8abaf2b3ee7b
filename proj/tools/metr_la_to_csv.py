#!/usr/bin/env python3
"""Convert the public METR-LA release into an mls2s data directory.

Inputs are the files distributed with DCRNN:
    metr-la.h5     pandas HDF5 frame, rows = 5-minute timestamps, columns = sensor ids
    adj_mx.pkl     (sensor_ids, sensor_id_to_ind, weighted adjacency)

Outputs in OUT_DIR:
    speed.csv      node_id,<unix timestamps>; one row per sensor (zeros kept,
                   train/eval with mask_zeros = true)
    nodes.txt      sensor ids in row order
    edges.csv      undirected 0/1 edges: weight > 0 in either direction

Usage: metr_la_to_csv.py metr-la.h5 adj_mx.pkl OUT_DIR
"""

import argparse
import os
import pickle

import numpy as np
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("h5")
    ap.add_argument("adj_pkl")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    frame = pd.read_hdf(args.h5)
    with open(args.adj_pkl, "rb") as f:
        sensor_ids, id_to_index, weights = pickle.load(f, encoding="latin1")
    sensor_ids = [str(s) for s in sensor_ids]
    frame.columns = [str(c) for c in frame.columns]
    frame = frame[sensor_ids]

    stamps = (frame.index.astype("int64") // 10**9).to_numpy()
    steps = np.diff(stamps)
    if len(steps) and not np.all(steps == steps[0]):
        raise SystemExit("timestamps are not evenly spaced")

    os.makedirs(args.out_dir, exist_ok=True)
    values = frame.to_numpy(dtype=float).T
    with open(os.path.join(args.out_dir, "speed.csv"), "w") as f:
        f.write("node_id," + ",".join(str(s) for s in stamps) + "\n")
        for sid, row in zip(sensor_ids, values):
            f.write(sid + "," + ",".join("NaN" if np.isnan(v) else repr(float(v)) for v in row) + "\n")
    with open(os.path.join(args.out_dir, "nodes.txt"), "w") as f:
        f.writelines(s + "\n" for s in sensor_ids)
    w = np.asarray(weights)
    n = len(sensor_ids)
    with open(os.path.join(args.out_dir, "edges.csv"), "w") as f:
        f.write("src_id,dst_id\n")
        for i in range(n):
            for j in range(i + 1, n):
                if w[i, j] > 0 or w[j, i] > 0:
                    f.write(f"{sensor_ids[i]},{sensor_ids[j]}\n")
    print(f"{n} sensors x {values.shape[1]} slots -> {args.out_dir}")


if __name__ == "__main__":
    main()
