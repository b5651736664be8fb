#!/usr/bin/env python3
"""Download the UCI Pendigits and Letter datasets and convert them to labelled CSV.

Usage: python scripts/fetch_uci.py [--data DIR] [--checksums FILE]

Raw downloads are hashed with SHA-256. If the checksum file already lists a
file, the download must match it; otherwise the new hash is recorded there so
later fetches are verified against the first one.
"""

import argparse
import csv
import hashlib
import json
import sys
import urllib.request
from pathlib import Path

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases"
SOURCES = {
    "pendigits/pendigits.tra": f"{BASE}/pendigits/pendigits.tra",
    "pendigits/pendigits.tes": f"{BASE}/pendigits/pendigits.tes",
    "letter/letter-recognition.data": f"{BASE}/letter-recognition/letter-recognition.data",
}


def fetch(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def write_csv(path: Path, rows, n_features: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(n_features)] + ["label"])
        w.writerows(rows)


def pendigits_rows(raw: bytes):
    # 16 integer features followed by the digit
    for line in raw.decode("ascii").splitlines():
        vals = [v.strip() for v in line.split(",") if v.strip()]
        if vals:
            yield vals[:16] + [vals[16]]


def letter_rows(raw: bytes):
    # capital letter first, then 16 integer features; A..Z -> 0..25
    for line in raw.decode("ascii").splitlines():
        vals = line.strip().split(",")
        if len(vals) == 17:
            yield vals[1:] + [str(ord(vals[0]) - ord("A"))]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, default=Path("data"))
    ap.add_argument("--checksums", type=Path, default=None,
                    help="JSON map of raw file -> sha256 (default: DATA/checksums.json)")
    args = ap.parse_args(argv)
    data = args.data
    sums_path = args.checksums or data / "checksums.json"
    known = json.loads(sums_path.read_text()) if sums_path.exists() else {}
    raw = {}
    for name, url in SOURCES.items():
        try:
            blob = fetch(url)
        except OSError as exc:
            print(f"could not download {url}: {exc}", file=sys.stderr)
            return 1
        digest = hashlib.sha256(blob).hexdigest()
        if name in known and known[name] != digest:
            print(f"checksum mismatch for {name}: {digest} != {known[name]}", file=sys.stderr)
            return 1
        if name not in known:
            print(f"recording sha256 {digest} for {name}")
            known[name] = digest
        raw[name] = blob
    (data / "pendigits").mkdir(parents=True, exist_ok=True)
    (data / "letter").mkdir(parents=True, exist_ok=True)
    write_csv(data / "pendigits" / "train.csv", pendigits_rows(raw["pendigits/pendigits.tra"]), 16)
    write_csv(data / "pendigits" / "test.csv", pendigits_rows(raw["pendigits/pendigits.tes"]), 16)
    write_csv(data / "letter" / "letter.csv", letter_rows(raw["letter/letter-recognition.data"]), 16)
    sums_path.write_text(json.dumps(known, indent=2, sort_keys=True) + "\n")
    print(f"wrote CSVs under {data}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
