"""Standalone trainer entry point: masktune --config train.json"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .data import DatasetError
from .training import TrainConfig, train


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="masktune",
        description="Fine-tune low-rank adapters on a masked-workflow dataset.",
    )
    parser.add_argument("--config", required=True, help="JSON TrainConfig file")
    args = parser.parse_args(argv)
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return 1
    try:
        config = TrainConfig.from_file(config_path)
        summary = train(config)
    except (DatasetError, ValueError, TypeError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
