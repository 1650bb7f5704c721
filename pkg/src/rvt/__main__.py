"""``python -m rvt``: caps BLAS threads from ``RVT_THREADS`` before numpy loads."""

import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def main(argv=None) -> int:
    threads = os.environ.get("RVT_THREADS")
    if threads is not None:
        if not threads.isdigit() or int(threads) < 1:
            print(f"configuration error: RVT_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = threads
    from rvt.harness.cli import main as cli_main

    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
