"""NNE for every (true, assumed) initialization preset pair on a room corner."""

import argparse

from icp_uncert import se3
from icp_uncert.config import write_csv
from icp_uncert.covariance import NoiseParams
from icp_uncert.experiments import SWEEP_HEADER, sweep
from icp_uncert.icp import IcpConfig
from icp_uncert.scenes import Scene, SensorNoiseSpec

LEVELS = ["easy", "medium", "difficult"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=50)
    ap.add_argument("--extent", type=float, default=10.0)
    ap.add_argument("--points", type=int, default=3000)
    ap.add_argument("--sigma", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    scene = Scene("room-corner", args.extent, noise=SensorNoiseSpec(args.sigma, args.sigma)).with_points(args.points)
    T_true = se3.exp([0.02, -0.01, 0.05, 0.1, 0.05, -0.03])
    rows = sweep({"room-corner": scene}, T_true, LEVELS, LEVELS, args.draws, NoiseParams(args.sigma, args.sigma), IcpConfig(), args.seed)
    print(write_csv(args.out, SWEEP_HEADER, [r.as_row() for r in rows]), end="")


if __name__ == "__main__":
    main()
