"""Build a series file from a quarterly indicator-by-country panel.

The raw data are not bundled. Download the indicators listed in INDICATORS
for the countries in COUNTRIES (2002-Q1 onward) and arrange them as one wide
CSV: a `date` column followed by one column per `CODE/Country` pair, e.g.
`CPI/Austria`. Rows must be in time order with no gaps.

    python python/ingest_panel.py raw.csv panel.csv

Each indicator gets its stationarity transform, every transformed series is
trimmed from the front to a common length, and the result is written as
`t,i,j,value` with i indexing indicators and j indexing countries. Seasonal
adjustment is not applied here; whether the source series need it is left to
the user.
"""

import argparse
import csv
import importlib
import sys

# (code, description, source, transform)
INDICATORS = [
    ("GOV_BOND", "Long-term government bond yields", "EUROSTAT", "diff"),
    ("CPI", "Consumer price index, all items", "IMF", "logdiff2"),
    ("PPI", "Producer price index, all commodities", "IMF", "logdiff2"),
    ("TOT_SHARE", "Total share prices, all shares", "FRED", "logdiff2"),
    ("CONS_EXP", "Final consumption expenditure", "IMF", "logdiff"),
    ("CAP_UTIL", "Capacity utilization", "FRED", "diff"),
    ("EMPL", "All employees", "FRED", "logdiff"),
    ("UN_RATE", "Civilian unemployment rate", "FRED", "diff"),
    ("COMP", "Compensation of employees", "IMF", "logdiff"),
    ("NAT_INCOME", "National income", "IMF", "logdiff"),
    ("EER", "Effective exchange rate (unit labour cost based)", "IMF", "diff"),
    ("IPI", "Industrial production index", "IMF", "diff"),
    ("TOT_RES", "Total reserves", "IMF", "logdiff2"),
    ("BGS", "External balance of goods and services", "IMF", "logdiff"),
    ("M2", "Broad money liabilities", "IMF", "logdiff2"),
    ("GDP", "GDP deflator", "IMF", "logdiff2"),
]

COUNTRIES = [
    "Austria", "Belgium", "Finland", "France", "Germany", "Greece",
    "Ireland", "Italy", "Netherlands", "Portugal", "Spain",
]


def read_wide(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        sys.exit(f"{path}: no data rows")
    columns = {}
    for code, *_ in INDICATORS:
        for country in COUNTRIES:
            key = f"{code}/{country}"
            if key not in rows[0]:
                sys.exit(f"{path}: missing column {key}")
            try:
                columns[key] = [float(r[key]) for r in rows]
            except ValueError as e:
                sys.exit(f"{path}: column {key}: {e}")
    return columns


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw", help="wide CSV with a date column and CODE/Country columns")
    ap.add_argument("out", help="output series file")
    args = ap.parse_args()

    addmar = importlib.import_module("addmar")
    columns = read_wide(args.raw)
    keys = [(i, j, f"{code}/{country}", tr)
            for i, (code, _, _, tr) in enumerate(INDICATORS)
            for j, country in enumerate(COUNTRIES)]
    panel = addmar.transform_panel([columns[k] for *_, k, _ in keys], [tr for *_, tr in keys])

    t_len = len(panel[0])
    series = [[[0.0] * len(COUNTRIES) for _ in INDICATORS] for _ in range(t_len)]
    for (i, j, _, _), values in zip(keys, panel):
        for t, v in enumerate(values):
            series[t][i][j] = v
    addmar.write_series(args.out, series)
    print(f"wrote {t_len} quarters of {len(INDICATORS)}x{len(COUNTRIES)} matrices to {args.out}")


if __name__ == "__main__":
    main()
