"""
Entry point for python -m sentence_localizer

--threads 1 must reach the BLAS runtime before numpy is imported, so the
flag is read here ahead of the command-line parser.
"""

import os
import sys

THREAD_VARIABLES = ('OMP_NUM_THREADS', 'MKL_NUM_THREADS', 'OPENBLAS_NUM_THREADS')


def pin_threads(argv):
    if '--threads=1' in argv or any(a == '--threads' and v == '1' for a, v in zip(argv, argv[1:])):
        for variable in THREAD_VARIABLES:
            os.environ[variable] = '1'


def main() -> int:
    pin_threads(sys.argv[1:])
    from sentence_localizer.cli import main as cli_main
    return cli_main(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
