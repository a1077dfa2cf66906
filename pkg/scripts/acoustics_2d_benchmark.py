#!/usr/bin/env python3
"""Benchmark adjoint-flagging against difference-flagging on the three 2D
acoustics scenarios. Prints cell-step economies and gauge agreement."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
from adjamr.config import parse_config
from adjamr.driver import run_adjoint, run_forward
from adjamr.runio import compare_gauges

CONFIGS = ["2d-walls-timepoint.cfg", "2d-walls-timerange.cfg", "2d-mixed-bc.cfg"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config-dir",
                    default=os.path.join(os.path.dirname(__file__), "..", "configs"))
    args = ap.parse_args()

    print(f"{'scenario':28s} {'adj fine steps':>14s} {'diff fine steps':>15s} "
          f"{'economy':>8s} {'gauge maxabs':>12s}")
    for name in CONFIGS:
        with open(os.path.join(args.config_dir, name)) as f:
            cfg = parse_config(f.read())
        store, adj_wall = run_adjoint(cfg)
        adj = run_forward(cfg, strategy_name="adjoint", store=store)
        diff = run_forward(cfg, strategy_name="difference")
        max_abs, _ = compare_gauges(diff.gauges[1], adj.gauges[1])
        fa, fd = adj.timing.fine_cell_steps(), diff.timing.fine_cell_steps()
        print(f"{name:28s} {fa:14d} {fd:15d} {fa / fd:8.1%} {np.max(max_abs):12.5f}")


if __name__ == "__main__":
    main()
