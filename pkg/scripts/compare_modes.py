"""Run every pipeline mode on synthetic benchmarks over several seeds and print F1 per snapshot."""

import argparse
import statistics
import tempfile
import time

from contea.config import RunConfig
from contea.continual import run_modes
from contea.snapgen import GenSpec, write_benchmark

MODES = ("full", "no_ta", "no_ta_no_asa", "retrain")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--entities", type=int, default=500)
    ap.add_argument("--overlap", type=float, default=0.8)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--snapshots", type=int, default=3)
    ap.add_argument("--degree", type=float, default=GenSpec.avg_degree)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("overrides", nargs="*", help="RunConfig key=value overrides")
    args = ap.parse_args()
    config = RunConfig().with_overrides(args.overrides)
    f1 = {m: {} for m in MODES}
    times = {m: {} for m in MODES}
    for seed in range(args.seeds):
        spec = GenSpec(args.entities, 20, avg_degree=args.degree, overlap_ratio=args.overlap, structural_noise=args.noise,
                       n_snapshots=args.snapshots, seed=seed)
        with tempfile.TemporaryDirectory() as tmp:
            dirs = write_benchmark(spec, tmp)
            start = time.time()
            records = run_modes(dirs, config.replace(seed=seed), MODES)
        print(f"seed {seed} ({time.time() - start:.1f}s)")
        for mode, rec in records.items():
            for snap in rec.snapshots:
                f1[mode].setdefault(snap.t, []).append(snap.metrics.f1)
                times[mode].setdefault(snap.t, []).append(snap.train_time_s)
            print(f"  {mode:13s}", " ".join(
                f"t{s.t}:F1={s.metrics.f1:.3f}/ta={s.ta_size}/train={s.train_time_s:.2f}s" for s in rec.snapshots))
    print("median F1 / train time")
    for mode in MODES:
        print(f"  {mode:13s}", " ".join(
            f"t{t}:{statistics.median(v):.3f}/{statistics.median(times[mode][t]):.2f}s" for t, v in f1[mode].items()))


if __name__ == "__main__":
    main()
