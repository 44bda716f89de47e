"""Energy drift of exact MD and XLMD on the toy model as dt is halved."""
from __future__ import annotations

from dataclasses import dataclass

from xlmd import SimConfig, ToyModel, energy_drift


@dataclass
class Config:
    eps: float = 1e-3
    t_final: float = 1.0
    dts: tuple = (4e-5, 2e-5, 1e-5)


def main(cfg: Config = Config()):
    toy = ToyModel()
    for integrator in ("exact", "xlmd"):
        prev = None
        for dt in cfg.dts:
            drift = energy_drift(toy, SimConfig(eps=cfg.eps, dt=dt, t_final=cfg.t_final),
                                 integrator)
            ratio = f"  ratio {prev / drift:.3f}" if prev else ""
            print(f"{integrator:5s} dt={dt:.1e} drift={drift:.3e}{ratio}")
            prev = drift


if __name__ == "__main__":
    main()
