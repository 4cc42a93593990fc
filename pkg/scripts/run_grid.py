"""Summarize (if needed), run the full grid and print the comparison table.

    python scripts/run_grid.py configs/lamp1_grid.toml [more.toml ...]
"""

import argparse
import logging
import sys

from lampsum import runner


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--std", action="store_true", help="show standard deviations")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    outputs = []
    for path in args.configs:
        grid = runner.load_config(path)
        if grid.summarizer.backends:
            for rep in runner.run_summarize(grid):
                print("\n".join(rep.lines()))
                if rep.failures:
                    return 1
        runner.run_grid(grid)
        outputs.append(grid.base.path(grid.base.output))
    sys.stdout.write(runner.compare_files(outputs).render(show_std=args.std))
    return 0


if __name__ == "__main__":
    sys.exit(main())
