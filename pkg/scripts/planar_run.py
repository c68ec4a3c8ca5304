"""Train on Delaunay planar graphs under a wall-clock budget and report validity.

    python scripts/planar_run.py --budget 1800 --samples 500
"""
import argparse
import dataclasses
import json
import logging

from ctdg.experiments import PLANAR_MODEL, planar_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=float, default=1800.0, help="training seconds")
    ap.add_argument("--samples", type=int, default=500, help="samples per seed")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--steps", type=int, default=100, help="sampling steps")
    ap.add_argument("--correctors", type=int, default=10, help="corrector steps per predictor step")
    ap.add_argument("--precision", choices=("float32", "float64"), default=PLANAR_MODEL.precision)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    model = dataclasses.replace(PLANAR_MODEL, precision=args.precision)
    res = planar_run(budget_s=args.budget, samples=args.samples, sample_seeds=tuple(range(args.seeds)),
                     steps=args.steps, corrector_steps=args.correctors, model_cfg=model)
    print(json.dumps({**dataclasses.asdict(res), "mean_validity": res.mean_validity}, indent=2))


if __name__ == "__main__":
    main()
