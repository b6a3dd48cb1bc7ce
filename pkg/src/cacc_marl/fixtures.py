"""Brute-force oracles and golden test vectors.

Golden files are rebuilt only on request::

    python -m cacc_marl.fixtures regenerate [--out DIR]

Otherwise tests compare against them bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quantizer as qz
from .env import PlatoonEnv, ScenarioSpec

DATA_DIR = Path(__file__).with_name("data")
GOLDEN_DIR = DATA_DIR / "golden"
QUANT_VECTORS = DATA_DIR / "quantizer_vectors.json"


def finite_difference_oracle(f, p, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a parameter vector."""
    p = np.array(p, dtype=float)
    g = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + eps
        hi = f(p)
        p[i] = old - eps
        lo = f(p)
        p[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def exhaustive_quantizer_expectation(x: float, r: float, n: int) -> float:
    """E[q] by summing over the two-point support of the randomized rounding."""
    if not r > 0 or abs(x) > r:
        raise ValueError("need r > 0 and |x| <= r")
    a = n * abs(x) / r
    m = min(int(np.floor(a)), n - 1)
    p_up = (n * abs(x) - m * r) / r
    support = [(m + 1, p_up), (m, 1.0 - p_up)]
    return float(np.sign(x) * sum(r * lvl / n * p for lvl, p in support))


# --- golden trajectories ---------------------------------------------------

@dataclass(frozen=True)
class GoldenCase:
    name: str
    scenario: ScenarioSpec
    seed: int
    action: int


GOLDEN_CASES = [
    GoldenCase("equilibrium", ScenarioSpec(catchup_gap_factor_range=(1.0, 1.0)), 0, 3),
    GoldenCase("forced_collision", ScenarioSpec(kind="slowdown"), 3, 0),
    GoldenCase("catchup_action3", ScenarioSpec(), 7, 3),
]


def trajectory_rows(case: GoldenCase) -> list[list[str]]:
    """Per-step state and reward rows under a constant-action policy, floats as hex."""
    env = PlatoonEnv(case.scenario)
    env.reset(case.seed)
    n = case.scenario.platoon_size
    rows, done = [], False
    while not done:
        _, rewards, done = env.step(np.full(n, case.action))
        s = env.state
        rows.append([str(s.step_index)]
                    + [float(x).hex() for x in (*s.headways, *s.velocities, *s.accelerations, *rewards)]
                    + [str(int(done)), str(int(s.collided))])
    return rows


def trajectory_header(n: int) -> list[str]:
    cols = ["step"]
    for key in ("h", "v", "u", "r"):
        cols += [f"{key}{i}" for i in range(n)]
    return cols + ["done", "collided"]


def read_golden(name: str, directory: Path = GOLDEN_DIR) -> list[list[str]]:
    with open(directory / f"{name}.csv", newline="") as fh:
        return list(csv.reader(fh))[1:]


def decode_row(row: list[str], n: int) -> dict:
    vals = [float.fromhex(x) for x in row[1:1 + 4 * n]]
    return {"step": int(row[0]), "h": vals[:n], "v": vals[n:2 * n], "u": vals[2 * n:3 * n],
            "r": vals[3 * n:], "done": row[-2] == "1", "collided": row[-1] == "1"}


# --- quantizer wire vectors ------------------------------------------------

def quantizer_vector_cases() -> list[dict]:
    rng = np.random.default_rng(20240601)
    cases = []
    for n, d in [(1, 8), (2, 5), (4, 16), (3, 1), (1, 64), (0, 4)]:
        x = rng.uniform(-1, 1, d)
        x[rng.random(d) < 0.3] = 0.0
        q = qz.quantize(x, n, rng)
        for mode in ("dense", "sparse"):
            cases.append({
                "name": f"n{n}_d{d}_{mode}",
                "x": [float(v).hex() for v in x],
                "r": float(q.r).hex(),
                "n": n,
                "levels": [float(v).hex() for v in q.levels] if n == 0 else [int(v) for v in q.levels],
                "mode": mode,
                "bits": qz.message_bits(q, mode),
                "hex": qz.encode(q, mode).hex(),
            })
    return cases


def message_from_case(case: dict) -> qz.QuantizedMessage:
    if case["n"] == 0:
        levels = np.array([float.fromhex(v) for v in case["levels"]])
    else:
        levels = np.array(case["levels"], dtype=np.int64)
    return qz.QuantizedMessage(float.fromhex(case["r"]), levels, case["n"])


def regenerate(out: Path = DATA_DIR) -> None:
    golden = out / "golden"
    golden.mkdir(parents=True, exist_ok=True)
    for case in GOLDEN_CASES:
        with open(golden / f"{case.name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trajectory_header(case.scenario.platoon_size))
            w.writerows(trajectory_rows(case))
    doc = {
        "format": "see cacc_marl.quantizer module docstring; floats are float.hex strings",
        "cases": quantizer_vector_cases(),
    }
    (out / "quantizer_vectors.json").write_text(json.dumps(doc, indent=1) + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m cacc_marl.fixtures")
    sub = ap.add_subparsers(dest="cmd", required=True)
    regen = sub.add_parser("regenerate", help="rewrite golden trajectories and quantizer vectors")
    regen.add_argument("--out", type=Path, default=DATA_DIR)
    args = ap.parse_args(argv)
    regenerate(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
