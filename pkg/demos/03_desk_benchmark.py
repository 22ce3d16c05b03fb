"""Full desk-scale benchmark through the library entry points.

Equivalent to running ``specklebench prepare/train/bench --preset desk``.
Expect several minutes on a single core; outputs land in ./desk_run.

Run:  python3 demos/03_desk_benchmark.py [out_dir]
"""

import sys

from specklebench import bench

out = sys.argv[1] if len(sys.argv) > 1 else "desk_run"
cfg = bench.load_config(None, "desk", {"out": out, "seed": 0})

print("manifest:", bench.cmd_prepare(cfg))
for method, path in bench.cmd_train(cfg).items():
    print(f"{method} checkpoint: {path}")
bundle = bench.cmd_bench(cfg)
print(bundle["markdown"].read_text())
print("SSIM curves:", bundle["curves"])
print("panel:", bundle["panel"])
