import csv
import logging
import os

from .utils import format_float

logger = logging.getLogger(__name__)

COLUMNS = [
    "step",
    "time",
    "underlying",
    "price",
    "condition",
    "halted",
    "jump",
    "jump_size",
    "n_fb_active",
    "n_fs_active",
    "n_tb",
    "n_ts",
    "pareto_lo",
    "pareto_hi",
    "trades",
    "bankruptcies",
]

FLOAT_COLUMNS = {"time", "underlying", "price", "jump_size", "pareto_lo", "pareto_hi"}


def format_row(details):
    """
    Renders one step row as CSV fields in column order.
    """
    fields = []
    for column in COLUMNS:
        value = details[column]
        if column in FLOAT_COLUMNS:
            fields.append(format_float(float("nan") if value is None else value))
        elif column == "condition":
            fields.append(str(value))
        else:
            fields.append(str(int(value)))
    return fields


class StepRecorder:
    """
    Object that implements the market's "action logger" interface in order
    to stream one CSV file of step rows per security into a directory.
    """

    def __init__(self, directory):
        self.directory = directory
        self.files = {}
        self.writers = {}

    def path_for(self, security_id):
        return os.path.join(self.directory, "%s.csv" % security_id)

    def __call__(self, security_id, action, details):
        """
        Called when a market action happens; ``open`` and ``close`` bracket a
        run, ``step`` carries one row.
        """
        if action == "open":
            os.makedirs(self.directory, exist_ok=True)
            fh = open(self.path_for(security_id), "w", newline="", encoding="utf-8")
            self.files[security_id] = fh
            self.writers[security_id] = csv.writer(fh, lineterminator="\n")
            self.writers[security_id].writerow(COLUMNS)
        elif action == "step":
            self.writers[security_id].writerow(format_row(details))
        elif action == "close":
            self.files.pop(security_id).close()
            del self.writers[security_id]
            logger.info("Wrote %s", self.path_for(security_id))

    def close(self):
        for security_id in list(self.files):
            self(security_id, "close", None)
