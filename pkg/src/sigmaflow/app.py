from __future__ import annotations

from typing import Optional, Sequence

from sigmaflow.cli.dispatch import dispatch
from sigmaflow.cli.parser import parse_args
from sigmaflow.infra.settings import load_settings


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = load_settings()
        config = parse_args(argv, settings)
        outcome = dispatch(config)
        for path in outcome.artifacts:
            print(path)
        return outcome.status
    except KeyboardInterrupt:
        return 130
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 for --help/--version
        return int(exc.code or 0)


if __name__ == "__main__":
    raise SystemExit(main())
