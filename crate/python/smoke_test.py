"""Smoke test for the `vip_py` extension module.

Build the library first (`cargo build -p vip-py --release --features extension-module`),
then run `python python/smoke_test.py`. The script copies the compiled library
next to a temporary `vip_py.so` so no packaging step is needed.
"""

import importlib
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("release", "debug"):
        for name in ("libvip_py.so", "libvip_py.dylib", "vip_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = Path(tempfile.mkdtemp())
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                shutil.copy(lib, tmp / f"vip_py{suffix}")
                sys.path.insert(0, str(tmp))
                return importlib.import_module("vip_py")
    sys.exit("vip_py library not found; run cargo build -p vip-py first")


def main():
    vip = load_module()

    # Exact mutual information of a class indicator over ten classes.
    table = [[0.0, 1.0] if y == 0 else [1.0, 0.0] for y in range(10)]
    indicator = vip.TaskModel([0.1] * 10, [table])
    mi = indicator.mutual_information(0)
    assert abs(mi - (math.log(10) - 0.9 * math.log(9))) < 1e-12, mi

    task, train, test, roles = vip.synthetic_task(seed=0, n_train=400, n_test=100)
    assert task.n_queries == len(roles) == train.n_queries == 14
    assert roles.count("informative") == 10
    exact = task.run(test.row(0), 0.99, 7)
    assert 1 <= len(exact) <= 7

    model = vip.Model.train(train, seed=1, width=32, stage1_epochs=5, stage2_epochs=2)
    trajectory = model.infer(test.row(0), 0.9)
    assert abs(sum(trajectory.steps[-1][2]) - 1.0) < 1e-9
    assert vip.Trajectory.from_json(trajectory.to_json()) == trajectory

    same = model.intervene(trajectory, 0, trajectory.steps[0][1], 0.9)
    assert same == trajectory

    acc, avg = model.evaluate(test, 0.9)
    points = model.sweep(test, [0.6, 0.8, 0.9, 0.99])
    assert all(a[1] <= b[1] for a, b in zip(points, points[1:]))

    path = vip.elastic_net_path(train, test, [1e-3, 1e-1, 1e3])
    assert path[-1][1] == 0

    print(f"vip_py ok: accuracy {acc:.3f} with {avg:.2f} queries on average; {trajectory!r}")


if __name__ == "__main__":
    main()
