"""
Command-line entry point.

    python app.py synth --out data/train --seed 7
    python app.py train --data data/train --config tf12-ref --out runs/tf12
    python app.py eval --ckpt runs/tf12 --data data/eval --out report.json
"""

import sys

from trajformer.cli import run

if __name__ == '__main__':
    sys.exit(run())
