import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DIRECTSLAM_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="opt-in: set DIRECTSLAM_PAPER_SCALE=1")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)
