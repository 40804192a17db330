"""Helpers shared by the apps' test modules."""
import tempfile
from pathlib import Path


class TempDirMixin:
    """Gives each test a fresh ``self.tmp`` directory, removed afterwards."""

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()
