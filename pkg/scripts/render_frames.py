"""Write SVG frames of a lilypad support growing in one Poisson environment."""

import argparse
from pathlib import Path

import numpy as np

from pareto_lilypads import cli, env, experiments, lilypad


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--t-max", type=float, default=2.0)
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="frames")
    args = ap.parse_args()

    params = env.derive_exponents(2, 4)
    R = lilypad.auto_radius(params, args.delta, args.t_max)
    s = env.sample_poisson_env(params, R, args.delta, args.seed, experiments.DEFAULT_THINNING)
    sol = lilypad.solve_environment(s, args.delta, args.t_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, t in enumerate(np.linspace(args.t_max / args.frames, args.t_max, args.frames)):
        (out / f"frame_{k:03d}.svg").write_text(cli.render_svg(sol, float(t)))
    print(f"{args.frames} frames in {out}/ (certified={sol.certified})")


if __name__ == "__main__":
    main()
