#!/usr/bin/env python3
"""Generate a small demo corpus and run the whole pipeline over it.

Writes two short scenarios (day and night), simulates them into
containers, prints their stream statistics, preps train/test dataset
files, and exports a handful of PGM frame pairs for inspection.
"""

import argparse
import subprocess
import sys
from pathlib import Path

DAY = """
duration_s = 30
seed = 11
lighting = 0.85
curvature = 0:0, 8:0.005, 16:-0.005, 24:0.002, 30:0
speed = 0:60, 30:90
tag = day
id = demo_day
curvature_noise_amp = 0.0008
"""

NIGHT = """
duration_s = 30
seed = 12
lighting = 0.012
curvature = 0:0.003, 10:-0.006, 20:0.006, 30:0
speed = 0:55, 30:80
tag = night
id = demo_night
curvature_noise_amp = 0.0008
"""


def run(*argv):
    print("+ evdrive", " ".join(map(str, argv)))
    subprocess.run([sys.executable, "-m", "evdrive", *map(str, argv)], check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_corpus", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    containers = []
    for name, text in (("demo_day", DAY), ("demo_night", NIGHT)):
        cfg = out / f"{name}.cfg"
        cfg.write_text(text.strip() + "\n")
        container = out / f"{name}.ddrc"
        run("simulate", "--scenario", cfg, "--out", container)
        run("info", container)
        containers.append(container)

    run("prep", *containers, "--out", out / "corpus", "--seed", "5")
    run("export-frames", containers[0], "--out", out / "frames", "--limit", "8")
    print(f"\ndone; datasets and frames under {out}/")


if __name__ == "__main__":
    main()
