"""Acceptance suite: one test per criterion, each printing its pass/fail line.

The criterion implementations live in needlekit.selftest so that the CLI
`selftest` command runs exactly the same battery.
"""

import pytest

from needlekit.selftest import ALL_CRITERIA


@pytest.mark.parametrize("name,criterion", ALL_CRITERIA, ids=[n for n, _ in ALL_CRITERIA])
def test_criterion(name, criterion):
    result = criterion()
    print(result.line())
    assert result.passed, result.detail
