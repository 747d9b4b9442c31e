import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from samplemiou import PixelConfusion, SampleRecord


def random_records(rng, n=None, tn_fraction=0.3, prefix="s"):
    """Random dataset of SampleRecords; roughly ``tn_fraction`` are pure true negatives."""
    n = int(rng.integers(1, 40)) if n is None else n
    records = []
    for i in range(n):
        if rng.random() < tn_fraction:
            c = PixelConfusion(0, 0, 0, int(rng.integers(1, 5000)))
        else:
            tp, fp, fn = (int(v) for v in rng.integers(0, 2000, size=3))
            if tp + fp + fn == 0:
                fn = 1
            c = PixelConfusion(tp, fp, fn, int(rng.integers(0, 5000)))
        records.append(SampleRecord.from_confusion(f"{prefix}{i:04d}", c))
    return records


def tn_records(k, prefix="tn"):
    return [SampleRecord.from_confusion(f"{prefix}{i:05d}", PixelConfusion(0, 0, 0, 100)) for i in range(k)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
