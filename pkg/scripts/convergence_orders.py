"""Convergence orders for the toy model under the three latent initial conditions.

    python scripts/convergence_orders.py                      # default grid, 1e-2 .. 1e-4
    python scripts/convergence_orders.py --lo 1e-6 --hi 1e-4  # asymptotic regime

Writes one convergence CSV per initial condition into --out-dir and prints
the fitted orders next to reference values.
"""
from __future__ import annotations

import argparse
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xlmd import ToyModel
from xlmd.analysis import convergence_studies

REFERENCE = {
    "optimal": (1.0067, 1.0076, 1.0021),
    "compatible": (1.0066, 1.0055, 0.5351),
}


@dataclass
class Config:
    hi: float = 1e-2
    lo: float = 1e-4
    points: int = 9
    dt: float = 1e-5
    t_final: float = 5.0
    workers: int = 1
    out_dir: Path = Path("results/orders")


def parse() -> Config:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for f in dataclasses.fields(Config):
        parser.add_argument("--" + f.name.replace("_", "-"), type=type(f.default),
                            default=f.default)
    return Config(**vars(parser.parse_args()))


def main(cfg: Config):
    grid = np.geomspace(cfg.hi, cfg.lo, cfg.points)
    start = time.perf_counter()
    reports = convergence_studies(ToyModel(), grid, dt=cfg.dt, t_final=cfg.t_final,
                                  workers=cfg.workers)
    elapsed = time.perf_counter() - start
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    print(f"grid {cfg.hi:g} .. {cfg.lo:g} ({cfg.points} points), {elapsed:.0f} s")
    print(f"{'initial condition':18s} {'r':>8s} {'p':>8s} {'x':>8s}   reference")
    for kind, rep in reports.items():
        with open(cfg.out_dir / f"{kind.value}.csv", "w", newline="") as fh:
            rep.write_csv(fh, comments=[f"{k}={v}" for k, v in dataclasses.asdict(cfg).items()])
        got = " ".join(f"{rep.orders.get(v, float('nan')):8.4f}" for v in "rpx")
        ref = REFERENCE.get(kind.value)
        ref = " ".join(f"{v:.4f}" for v in ref) if ref else "no convergence"
        print(f"{kind.value:18s} {got}   {ref}")


if __name__ == "__main__":
    main(parse())
