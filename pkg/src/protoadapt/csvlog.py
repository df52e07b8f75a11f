"""Per-epoch CSV metric logging.

The header is written once, then each completed epoch appends and closes
one row, so a consumer tailing the file never blocks the trainer.
"""

import csv


def start(path, header):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(header)


def append(path, values):
    with open(path, "a", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(values)
