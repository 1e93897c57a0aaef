#!/usr/bin/env python3
"""
choicenet main entry point

Examples:
    python main.py gen-synth --config configs/synthetic_linear.json
    python main.py prepare --data_path reports/synthetic_linear/synthetic.csv --output_dir reports/synthetic_linear
    python main.py train --variant ass --repetitions 10 --output_dir reports/synthetic_linear
    python main.py welfare --output_dir reports/synthetic_linear
    python main.py report --output_dir reports/synthetic_linear
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.cli import main


if __name__ == '__main__':
    sys.exit(main())
