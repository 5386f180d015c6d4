"""Materialise MovieLens-100K in the ``u.data`` layout from a PyPI wheel.

pytorch-widedeep ships the three ML100K tables as parquet files. This script
downloads that wheel with pip (no install), reads the tables and writes

    <dest>/u.data          user_id item_id rating timestamp
    <dest>/movie_genre.dat item_id genre_name   (one line per genre flag)

Usage: python scripts/fetch_ml100k.py [dest]   (default: data/ml-100k)
"""

import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd

WHEEL = "pytorch-widedeep==1.7.0"
PREFIX = "pytorch_widedeep/datasets/data/MovieLens100k_"
GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
]


def fetch(dest: Path) -> Path:
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            data = pd.read_parquet(io.BytesIO(z.read(PREFIX + "data.parquet.brotli")))
            items = pd.read_parquet(io.BytesIO(z.read(PREFIX + "items.parquet.brotli")))
    data[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        dest / "u.data", sep="\t", header=False, index=False
    )
    with open(dest / "movie_genre.dat", "w") as fh:
        for _, row in items.iterrows():
            for g in GENRES:
                if row[g]:
                    fh.write(f"{row.movie_id}\t{g}\n")
    return dest


if __name__ == "__main__":
    out = fetch(Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k"))
    print(f"wrote {out}/u.data and {out}/movie_genre.dat")
