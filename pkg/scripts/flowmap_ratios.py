"""Scalar latent flow map: size of the remainder after the leading-order term.

Halving eps should halve the remainder. Prints the sup over [s, t] of the
y-residual for a sequence of eps values and the ratio between neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass

from xlmd import Scalar1d, SimConfig, homogeneous_flow_map
from xlmd.analysis import record_trajectory


@dataclass
class Config:
    eps_start: float = 4e-3
    halvings: int = 5
    dt: float = 1e-5
    s: float = 0.5
    t: float = 2.0
    xi0: float = 1.0


def main(cfg: Config = Config()):
    model = Scalar1d()
    eps_values = [cfg.eps_start / 2**k for k in range(cfg.halvings + 1)]
    sups = []
    for eps in eps_values:
        traj = record_trajectory(model, SimConfig(eps=eps, dt=cfg.dt, t_final=cfg.t))
        res = homogeneous_flow_map(model, traj, eps, cfg.s, cfg.t, xi0=cfg.xi0)
        sups.append(res.sup_residual()[0])
    print(f"{'eps':>10s} {'sup |res_y|':>12s} {'ratio':>7s}")
    for i, (eps, sup) in enumerate(zip(eps_values, sups)):
        ratio = f"{sups[i - 1] / sup:7.3f}" if i else ""
        print(f"{eps:10.3e} {sup:12.4e} {ratio}")


if __name__ == "__main__":
    main()
