"""Shared test utilities."""

from collections import deque

import numpy as np


class ScriptedRng:
    """Deterministic stand-in for numpy's Generator.

    integers/random/choice pop pre-scripted values so tests can force the
    exact draws a genetic operator makes.  Scripted integers are validated
    against the requested range to catch drift in the operators' draw order.
    """

    def __init__(self, integers=(), randoms=(), choices=()):
        self._integers = deque(integers)
        self._randoms = deque(randoms)
        self._choices = deque(choices)

    def integers(self, low, high=None, size=None):
        assert size is None, "scripted integers are scalar draws"
        lo, hi = (0, low) if high is None else (low, high)
        value = self._integers.popleft()
        assert lo <= value < hi, f"scripted integer {value} outside [{lo}, {hi})"
        return value

    def random(self, size=None):
        assert size is None
        return self._randoms.popleft() if self._randoms else 0.0

    def choice(self, n, size=None, replace=True):
        picked = self._choices.popleft()
        assert size is None or len(picked) == size
        return np.asarray(picked)

    @property
    def exhausted(self):
        return not (self._integers or self._randoms or self._choices)
