"""Rounds per second of the native and pure-Python round loops.

    python3 benchmarks/bench_engines.py --rounds 5000 --repeat 3
"""

import argparse
import time

from netcomm.engine import ENGINES, HAVE_NATIVE, LoopSettings, build_population, empty_log_columns
from netcomm.agent import AgentConfig
from netcomm.game import GameConfig
from netcomm.rng import GRAPH, derive_stream
from netcomm.topology import TopologySpec, generate


def time_engine(name, rounds, seed, supervision):
    spec = TopologySpec("small_world", 10, 0.2)
    pop = build_population(generate(spec, derive_stream(seed, GRAPH)), seed, AgentConfig(), GameConfig())
    settings = LoopSettings(rounds, supervision, GameConfig(), AgentConfig())
    cols = empty_log_columns(rounds)
    t0 = time.perf_counter()
    ENGINES[name]().run(pop, settings, 0, rounds, cols)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--supervision", type=float, default=0.5)
    args = ap.parse_args()
    if not HAVE_NATIVE:
        print("native extension not built; timing the python engine only")
    best = {}
    for name in sorted(ENGINES):
        best[name] = min(time_engine(name, args.rounds, s, args.supervision) for s in range(args.repeat))
        print(f"{name:>7}: {args.rounds / best[name]:10.0f} rounds/s  ({1e6 * best[name] / args.rounds:.1f} us/round)")
    if len(best) == 2:
        print(f"speedup: {best['python'] / best['native']:.1f}x")


if __name__ == "__main__":
    main()
