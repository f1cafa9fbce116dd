"""TCP worker entry point: runs one simulation process.

Spawned by the runner as `python -m spikebench.worker --rank R
--config FILE --out DIR`; results land in part files the parent merges.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .runner import dump_rank_result, process_main
from .tcp import TcpTransport, parse_roster


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spikebench.worker")
    parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    roster = parse_roster(cfg.roster)
    transport = TcpTransport(args.rank, roster)
    try:
        result = process_main(args.rank, cfg, transport)
        dump_rank_result(Path(args.out), result)
    finally:
        transport.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
