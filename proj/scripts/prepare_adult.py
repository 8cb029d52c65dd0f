#!/usr/bin/env python3
"""Reduce the UCI Adult census file to the five attributes used by the
income task plus the partition column.

Usage: prepare_adult.py adult.data > data/adult.csv

The raw file is the standard UCI `adult.data` (32,561 rows). A copy ships
inside the `responsibly` wheel on PyPI (responsibly/dataset/adult/adult.data).
"""
import csv
import sys


def main(path):
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["age", "education-level", "marital-status",
                  "investment-gain", "working-hours", "sex", "income"])
    with open(path) as fh:
        for line in fh:
            cells = [c.strip() for c in line.split(",")]
            if len(cells) < 15 or "?" in (cells[0], cells[4], cells[12]):
                continue
            age, edu_num, marital = cells[0], cells[4], cells[5]
            gain, hours, sex, income = cells[10], cells[12], cells[9], cells[14]
            married = "Married" if marital.startswith("Married-civ") or \
                marital.startswith("Married-AF") else "Unmarried"
            out.writerow([age, edu_num, married,
                          "yes" if int(gain) > 0 else "no", hours, sex,
                          "high" if income.startswith(">50K") else "low"])


if __name__ == "__main__":
    main(sys.argv[1])
