"""Error-rate curves along the signal norm and the contamination level.

Writes ``rho/sweep.csv`` and ``epsilon/sweep.csv`` under ``--out`` using the
reference configuration shipped in ``scripts/configs/reference.toml``.
"""

import argparse
from pathlib import Path

from kwidth.cli import main as cli

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(HERE / "configs" / "reference.toml"))
    parser.add_argument("--out", default="phase-out")
    parser.add_argument("--trials", type=int, default=300)
    args = parser.parse_args()
    out = Path(args.out)
    common = ["--config", args.config, "--trials", str(args.trials)]
    rho = ["0.3", "0.5", "0.75", "1", "1.5", "2", "3"]
    eps = ["0", "0.02", "0.05", "0.1", "0.15"]
    code = cli(["sweep", *common, "--out", str(out / "rho"), "--axis", "rho", "--values", *rho])
    code = code or cli(["sweep", *common, "--out", str(out / "epsilon"), "--axis", "epsilon", "--values", *eps])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
