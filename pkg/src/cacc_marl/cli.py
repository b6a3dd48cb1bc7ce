"""Command-line entry point.

Subcommands::

    cacc-marl train [--config FILE] [--set key=value ...] [--seed N ...] [--out DIR]
    cacc-marl eval CHECKPOINT_DIR [--config FILE] [--set ...] [--episodes N] [--out FILE]
    cacc-marl quantbench [--d 64] [--n 0,1,2,4,8] [--trials 2000]
    cacc-marl consensus-demo [--agents 8] [--epsilon 0.1] [--lam 0.01] [--n 0] [--iters 5000]
    cacc-marl config [--config FILE] [--set ...]      # print the resolved config

Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import quantizer as qz
from .consensus import ConsensusConfig, LoopbackTransport, chain_graph, consensus_round, disagreement
from .errors import CaccError, ConfigError, Malformed, NonFinite
from .trainer import EVAL_COLUMNS, eval_csv, evaluate, load_learners, save_learners, train, write_jsonl

log = logging.getLogger("cacc_marl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this CLI reserves 2 for runtime aborts.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_help() -> str:
    lines = ["configuration keys (file lines 'key = value', or --set key=value):"]
    for key, (default, text) in cfgmod.DEFAULTS.items():
        lines.append(f"  {key} = {cfgmod._format(default)}    # {text}")
    return "\n".join(lines)


def _flat_config(args) -> dict:
    if args.config is not None:
        return cfgmod.load_flat(args.config, args.set)
    return cfgmod.apply_overrides(cfgmod.defaults(), args.set)


# --- train / eval ----------------------------------------------------------

SUMMARY_COLUMNS = ["seed", "phase"] + EVAL_COLUMNS


def cmd_train(args) -> int:
    flat = _flat_config(args)
    if args.seed:
        flat["train.seeds"] = list(args.seed)
    if args.out is not None:
        flat["output_dir"] = str(args.out)
    flat = cfgmod.resolve(flat)
    cfg = cfgmod.build(flat)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfgmod.to_text(flat))
    rows = []
    for seed in cfg.seeds:
        log.info("training seed %d for %d steps", seed, cfg.total_steps)
        res = train(cfg, seed)
        write_jsonl(out / f"train_seed{seed}.jsonl", res.records)
        (out / f"eval_seed{seed}.csv").write_text(eval_csv(res.evals))
        save_learners(out / "checkpoints" / f"seed{seed}", res.learners)
        for phase, (step, m) in (("initial", res.evals[0]), ("final", res.evals[-1])):
            rows.append([seed, phase, step, m.mean_episode_reward, m.mean_episode_return, m.avg_headway,
                         m.avg_velocity, m.collision_count, m.episodes, m.bits_sent_total,
                         m.bits_per_param_per_round])
        f = res.final_eval
        print(f"seed {seed}: final mean_episode_reward {f.mean_episode_reward:.2f} "
              f"(initial {res.initial_eval.mean_episode_reward:.2f}), collisions {f.collision_count}/{f.episodes}")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows([[repr(v) if isinstance(v, float) else v for v in r] for r in rows])
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = cfgmod.build(cfgmod.resolve(_flat_config(args)))
    learners = load_learners(args.checkpoint, cfg.gamma, cfg.entropy_coef)
    if len(learners) != cfg.scenario.platoon_size:
        raise ConfigError(f"checkpoint holds {len(learners)} agents but scenario.platoon_size is "
                          f"{cfg.scenario.platoon_size}")
    episodes = args.episodes or cfg.eval_episodes
    seed_base = cfg.eval_seed_base if args.seed_base is None else args.seed_base
    m = evaluate(learners, cfg.scenario, episodes, seed_base, cfg.weights)
    text = eval_csv([(0, m)])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- quantbench ------------------------------------------------------------

QUANTBENCH_COLUMNS = ["n", "trials", "max_abs_bias", "max_bias_z", "max_abs_error", "error_bound",
                      "dense_bits_per_param", "sparse_bits_per_param", "dense_message_bits",
                      "sparse_message_bits"]


def _quant_std(x: np.ndarray, r: float, n: int) -> np.ndarray:
    """Exact per-entry standard deviation of the randomized rounding."""
    if n == 0 or r == 0:
        return np.zeros_like(x)
    a = n * np.abs(x) / r
    f = a - np.minimum(np.floor(a), n - 1)
    return (r / n) * np.sqrt(f * (1.0 - f))


def quantbench(d: int, ns, trials: int, seed: int = 0) -> list[dict]:
    """Empirical bias, worst error and wire cost of the quantizer on one random vector.

    Bits per parameter exclude the fixed header (and the sparse count field).
    ``max_bias_z`` is the largest |bias| in units of the Monte Carlo standard error
    computed from the exact two-point variance (floored at 1e-12 r for entries on the grid).
    """
    if d < 1 or trials < 1:
        raise ConfigError("quantbench needs d >= 1 and trials >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, d)
    r = float(np.max(np.abs(x)))
    rows = []
    for n in ns:
        draws = np.empty((trials, d))
        sparse_bits = 0
        for t in range(trials):
            q = qz.quantize(x, n, rng)
            draws[t] = qz.dequantize(q)
            sparse_bits += qz.message_bits(q, "sparse")
        bias = draws.mean(axis=0) - x
        se = _quant_std(x, r, n) / np.sqrt(trials)
        # entries on a grid point are deterministic; the floor keeps float rounding from reading as a huge z
        z = np.abs(bias) / np.maximum(se, 1e-12 * max(r, 1.0))
        sparse_mean = sparse_bits / trials
        rows.append({
            "n": n, "trials": trials,
            "max_abs_bias": float(np.max(np.abs(bias))),
            "max_bias_z": float(np.max(z)),
            "max_abs_error": float(np.max(np.abs(draws - x))),
            "error_bound": r / n if n else 0.0,
            "dense_bits_per_param": qz.dense_width(n),
            "sparse_bits_per_param": (sparse_mean - qz.HEADER_BITS - qz.COUNT_BITS) / d,
            "dense_message_bits": qz.message_bits(qz.QuantizedMessage(r, np.zeros(d), n), "dense"),
            "sparse_message_bits": sparse_mean,
        })
    return rows


def _write_rows(rows, columns, dest):
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    if dest:
        Path(dest).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def cmd_quantbench(args) -> int:
    _write_rows(quantbench(args.d, args.n, args.trials, args.seed), QUANTBENCH_COLUMNS, args.out)
    return EXIT_OK


# --- consensus demo --------------------------------------------------------

@dataclass
class DemoResult:
    xs: np.ndarray            # (V, dim) final parameters
    centers: np.ndarray       # (V, dim) local minimizers c_i
    disagreement: np.ndarray  # per iteration, after the update
    mean_drift: np.ndarray    # per iteration, |mean_t - mean_0|_inf
    bits_sent: int

    @property
    def distance_to_mean(self) -> np.ndarray:
        """Per-agent Euclidean distance to the minimizer of the average objective."""
        return np.linalg.norm(self.xs - self.centers.mean(axis=0), axis=1)


def consensus_demo(agents: int = 8, epsilon: float = 0.1, lam: float = 0.01, n: int = 0,
                   iters: int = 5000, dim: int = 4, seed: int = 0, wire: str = "auto") -> DemoResult:
    """Quantized consensus on local quadratics f_i(x) = 0.5 |x - c_i|^2 over a chain.

    ``lam = 0`` runs pure averaging (the gradient step is switched off).
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, (agents, dim))
    xs = list(rng.normal(size=(agents, dim)))
    graph = chain_graph(agents)
    # ConsensusConfig insists on lambda > 0; the pure-averaging case passes a zero gradient instead
    cfg = ConsensusConfig(epsilon=epsilon, lam=lam if lam > 0 else 1.0, mode="macacc", resolution=n, wire=wire)
    grad_on = lam > 0
    quant_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 1]).spawn(agents)]
    transport = LoopbackTransport()
    mean0 = np.mean(xs, axis=0)
    dis, drift = np.empty(iters), np.empty(iters)
    for k in range(iters):
        gs = [x - c if grad_on else np.zeros(dim) for x, c in zip(xs, centers)]
        xs = consensus_round(xs, gs, graph, cfg, quant_rngs, transport, k)
        dis[k] = disagreement(xs)
        drift[k] = np.max(np.abs(np.mean(xs, axis=0) - mean0))
    return DemoResult(np.array(xs), centers, dis, drift, transport.bits_sent)


def cmd_consensus_demo(args) -> int:
    if args.agents < 2:
        raise ConfigError("consensus-demo needs at least 2 agents")
    res = consensus_demo(args.agents, args.epsilon, args.lam, args.n, args.iters, args.dim, args.seed)
    rows = [{"iter": k + 1, "disagreement": float(d), "mean_drift": float(m)}
            for k, (d, m) in enumerate(zip(res.disagreement, res.mean_drift))]
    _write_rows(rows, ["iter", "disagreement", "mean_drift"], args.out)
    far = res.distance_to_mean
    print(f"final distance to mean(c): max {far.max():.3e}, per agent "
          + " ".join(f"{v:.3e}" for v in far), file=sys.stderr)
    print(f"final disagreement {res.disagreement[-1]:.3e}, bits sent {res.bits_sent}", file=sys.stderr)
    return EXIT_OK


def cmd_config(args) -> int:
    flat = cfgmod.resolve(_flat_config(args))
    cfgmod.build(flat)
    sys.stdout.write(cfgmod.to_text(flat))
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cacc-marl", description=__doc__.split("\n\n")[0],
                 epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(p):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("train", help="train all seeds and write the artifact tree",
                       epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    config_args(p)
    p.add_argument("--seed", type=int, action="append", help="train this seed (repeatable; replaces train.seeds)")
    p.add_argument("--out", type=Path, help="output directory (replaces output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint directory, CSV output")
    p.add_argument("checkpoint", type=Path, help="directory holding agent<i>_actor.ckpt files")
    config_args(p)
    p.add_argument("--episodes", type=int, default=None, help="episodes (default train.eval_episodes)")
    p.add_argument("--seed-base", type=int, default=None, help="episode e uses seed seed_base + e")
    p.add_argument("--out", type=Path, help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantbench", help="quantizer bias, error and bits per parameter")
    p.add_argument("--d", type=int, default=64, help="vector dimension (default 64)")
    p.add_argument("--n", type=_int_list, default=[0, 1, 2, 4, 8], help="resolutions (default 0,1,2,4,8)")
    p.add_argument("--trials", type=int, default=2000, help="quantizations per resolution (default 2000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_quantbench)

    p = sub.add_parser("consensus-demo", help="chain consensus on random quadratics, CSV trajectory")
    p.add_argument("--agents", type=int, default=8, help="number of agents V (default 8)")
    p.add_argument("--epsilon", type=float, default=0.1, help="neighbour pull (default 0.1)")
    p.add_argument("--lam", type=float, default=0.01, help="gradient step; 0 = pure averaging (default 0.01)")
    p.add_argument("--n", type=int, default=0, help="quantization resolution; 0 = raw (default 0)")
    p.add_argument("--iters", type=int, default=5000, help="rounds (default 5000)")
    p.add_argument("--dim", type=int, default=4, help="parameter dimension (default 4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_consensus_demo)

    p = sub.add_parser("config", help="print the fully resolved configuration")
    config_args(p)
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFinite, Malformed) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CaccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
