import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dysflux.core import AlignmentSegments, ReferenceText, default_inventory


@pytest.fixture(scope="session")
def inv():
    return default_inventory()


def make_segs(runs, frame_duration=0.02) -> AlignmentSegments:
    """Build an alignment from (label, n_frames) pairs."""
    labels = []
    for lab, n in runs:
        labels.extend([lab] * n)
    return AlignmentSegments.from_frame_labels(labels, frame_duration)


def make_ref(*pairs) -> ReferenceText:
    """Build a reference from (word, phoneme...) tuples."""
    return ReferenceText.from_pairs([(w, list(ph)) for w, *ph in pairs])
