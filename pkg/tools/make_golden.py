"""Regenerate tests/golden/<subcommand>/ from the example configs.

    python3 tools/make_golden.py
"""

import os
import shutil
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
COMMANDS = ("simulate", "verify", "energy-audit", "moments", "skeleton", "ldp", "couple")
EPOCH = "1700000000"


def config_for(command):
    return ROOT / "configs" / f"{command.replace('-', '_')}.json"


def main():
    from anspde.cli import main as cli

    os.environ["SOURCE_DATE_EPOCH"] = EPOCH
    os.environ.pop("ANSPDE_OUT", None)
    for cmd in COMMANDS:
        out = GOLDEN / cmd
        shutil.rmtree(out, ignore_errors=True)
        code = cli([cmd, "--config", str(config_for(cmd)), "--out", str(out)])
        print(f"{cmd}: exit {code}")
        if code != 0:
            sys.exit(code)


if __name__ == "__main__":
    main()
