"""Smoke test for the bpmi extension module.

Build first with `cargo build -p bpmi-py --release`, then run
`python3 python/smoke_test.py` from the repository root. Pass a path to load
a specific shared library instead of target/release/libbpmi.so.
"""

import importlib.machinery
import importlib.util
import json
import math
import random
import sys
from pathlib import Path


def load(path):
    loader = importlib.machinery.ExtensionFileLoader("bpmi", str(path))
    spec = importlib.util.spec_from_file_location("bpmi", str(path), loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    root = Path(__file__).resolve().parent.parent
    lib = Path(sys.argv[1]) if len(sys.argv) > 1 else root / "target" / "release" / "libbpmi.so"
    bpmi = load(lib)
    print("bpmi", bpmi.__version__)

    rng = random.Random(0)
    lf_x = [[rng.random(), rng.random()] for _ in range(50)]
    hf_x = [[rng.random(), rng.random()] for _ in range(25)]
    lf_y = bpmi.toy_labels(lf_x, "L", "linear", 1)
    hf_y = bpmi.toy_labels(hf_x, "H", "linear", 2)
    assert set(lf_y) <= {0, 1} and len(hf_y) == 25

    training = json.dumps({"learning_rate": 0.01, "steps": 300, "restarts": 1})
    model = bpmi.Model.fit(lf_x, lf_y, hf_x, hf_y, training=training)
    print(model)

    grid = [[(i + 0.5) / 10, (j + 0.5) / 10] for i in range(10) for j in range(10)]
    p_hat = model.predict_proba(grid)
    p_true = bpmi.toy_probability(grid, "H", "linear")
    mse = sum((a - b) ** 2 for a, b in zip(p_hat, p_true)) / len(grid)
    print(f"grid MSE against the true field: {mse:.4f}")
    assert all(0.0 <= p <= 1.0 for p in p_hat)
    assert mse < 0.1

    mean, var = model.predict_latent(grid[:3], "L")
    assert len(mean) == 3 and all(v >= 0.0 for v in var)

    clone = bpmi.Model.from_json(model.to_json())
    assert clone.predict_proba(grid) == p_hat

    tests = grid[::7]
    lfmi = model.score("LFMI", [([0.5, 0.5], "H")], tests)
    bpmi_value = model.score("BPMI", [([0.5, 0.5], "H")], tests)
    assert lfmi >= 0.0 and bpmi_value >= 0.0 and math.isfinite(lfmi)

    batch = model.suggest("BPMI", json.dumps({"budget": 5.0, "candidate_count": 64, "seed": 3}))
    print(f"BPMI batch: {len(batch['queries'])} queries, total cost {batch['total_cost']:.2f}")
    assert batch["total_cost"] > 5.0 and batch["queries"]
    q = batch["queries"][0]
    assert q["fidelity"] in ("L", "H") and len(q["samples"]) == q["repeats"]

    try:
        model.score("RANDOM", [([0.5, 0.5], "H")], tests)
    except ValueError:
        pass
    else:
        raise AssertionError("RANDOM is not a mutual-information score")

    config = json.dumps({
        "strategy": "RANDOM",
        "init_lf": 10,
        "init_hf": 5,
        "rounds": 2,
        "round_budget": 3.0,
        "n_repeats_of_experiment": 2,
        "test_set_size": 100,
        "training": {"steps": 30, "restarts": 1, "learning_rate": 0.02},
        "acquisition": {"candidate_count": 16, "test_point_count": 10},
    })
    runs, summary = bpmi.run_toy(config)
    assert len(runs) == 2 and all(len(r) == 3 for r in runs)
    assert [s["round"] for s in summary] == [0, 1, 2]
    print(f"toy run: final mean ELPP {summary[-1]['elpp_mean']:.4f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
