import os
import shutil
import tempfile

from .config import from_values
from .harness import Harness


class MarketTestingInstance:
    """
    Runs one market from a dict of config values inside a temporary
    directory, exposing the config, the record and the output paths.

    Works as a context manager; the directory is removed on exit.
    """

    def __init__(self, values=None, seed=None, harness=None):
        self.values = dict(values or {})
        self.seed = seed
        self.harness = harness or Harness(threads=1)

    def __enter__(self):
        self.directory = tempfile.mkdtemp(prefix="equil-")
        self.config = from_values(self.values)
        self.record = self.harness.run_simulation(self.config, self.seed, self.directory)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        shutil.rmtree(self.directory, ignore_errors=True)

    def path_for(self, security_id):
        return os.path.join(self.directory, "%s.csv" % security_id)

    def read_csv(self, security_id):
        with open(self.path_for(security_id), encoding="utf-8") as fh:
            return fh.read()

    def rows(self, security_id=None):
        if security_id is None:
            security_id = self.config.securities[0].id
        return self.record.rows[security_id]
