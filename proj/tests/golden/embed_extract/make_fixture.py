"""Writes the embed-extract hand-off fixture: three geotagged records with
eight place-name levels, and their image and text embeddings as G3EM
files. Rerun to regenerate; the output is byte-stable."""

import csv
import struct
from pathlib import Path

HERE = Path(__file__).parent
DIM = 768

RECORDS = [
    ["4f/a0/3963216890.jpg", "47.217578", "7.542092", "Wengistein", "Solothurn",
     "Amtei Solothurn-Lebern", "Solothurn", "NA", "Switzerland", "ch", "NA"],
    ["eb/a7/193938478.jpg", "39.950477", "-75.157535", "Center City", "Philadelphia",
     "Philadelphia County", "Pennsylvania", "NA", "United States", "us", "NA"],
    ["4b/5c/8178901047.jpg", "-34.580365", "-58.425464", "Palermo", "Buenos Aires",
     "NA", "Autonomous City of Buenos Aires", "NA", "Argentina", "ar", "NA"],
]
HEADER = ["IMG_ID", "LAT", "LON", "neighbourhood", "city", "county", "state",
          "region", "country", "country_code", "continent"]


def value(row, col, salt):
    # Exactly representable in f32.
    return ((col * 7 + row * 3 + salt) % 17 - 8) / 64.0


def write_g3em(path, ids, salt):
    with open(path, "wb") as f:
        f.write(b"G3EM")
        f.write(struct.pack("<IIQ", 1, DIM, len(ids)))
        for r, img_id in enumerate(ids):
            raw = img_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<%df" % DIM, *(value(r, c, salt) for c in range(DIM))))


def main():
    with open(HERE / "metadata.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(RECORDS)
    ids = [r[0] for r in RECORDS]
    write_g3em(HERE / "image.g3em", ids, 0)
    # Text rows in a different order than the metadata.
    write_g3em(HERE / "text.g3em", list(reversed(ids)), 5)


if __name__ == "__main__":
    main()
