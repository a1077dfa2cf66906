#!/usr/bin/env python3
"""Check the inner-product time invariance on the 1D interface problem and
emit the x-t threshold masks."""

import argparse
import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
from adjamr.adjoint import evaluate_J
from adjamr.config import parse_config
from adjamr.driver import run_adjoint, run_forward, run_xt_map, write_xt_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="identity_out")
    ap.add_argument("--threshold", type=float, default=0.1)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    path = os.path.join(os.path.dirname(__file__), "..", "configs", "1d-interface.cfg")
    with open(path) as f:
        cfg = parse_config(f.read())
    cfg = replace(cfg, output_times=tuple(np.linspace(0.0, 20.0, 21)))

    store, _ = run_adjoint(cfg)
    Js = {}
    run_forward(cfg, strategy_name="difference",
                on_output=lambda t, h: Js.update({t: evaluate_J(h, store, t)}))
    j_final = Js[20.0]
    print("t      J(t)        drift")
    for t, j in sorted(Js.items()):
        print(f"{t:5.1f}  {j:+.6f}  {abs(j - j_final) / abs(j_final):7.3%}")

    xs, times, mq, mqh, mi = run_xt_map(cfg, store, args.threshold)
    for name, mask in (("xt_q.txt", mq), ("xt_qhat.txt", mqh), ("xt_inner.txt", mi)):
        write_xt_table(os.path.join(args.out, name), xs, times, mask)
    print(f"x-t masks written to {args.out}/")


if __name__ == "__main__":
    main()
