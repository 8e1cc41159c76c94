from __future__ import annotations

import pytest

from helpers import diarrhea_tree as _diarrhea_tree


@pytest.fixture
def diarrhea_tree():
    return _diarrhea_tree()
