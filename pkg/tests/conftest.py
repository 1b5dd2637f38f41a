from __future__ import annotations

import sys
from fractions import Fraction
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def F(num, den=1) -> Fraction:
    return Fraction(num, den)
