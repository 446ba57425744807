import argparse
import sqlite3
import sys
from pathlib import Path

import numpy as np

ARRAY_DTYPE = "<f8"


def _format_cell(value):
    # float64 blobs print as arrays so sample rows are readable
    if isinstance(value, bytes):
        if len(value) % 8 == 0:
            return np.array2string(np.frombuffer(value, dtype=ARRAY_DTYPE), precision=17, max_line_width=10_000)
        return f"<{len(value)} bytes>"
    return value


def list_tables(db_file: Path) -> list[str]:
    conn = sqlite3.connect(db_file)
    try:
        cur = conn.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY name")
        return [row[0] for row in cur.fetchall()]
    finally:
        conn.close()


def dump_table(db_file: Path, table: str, limit: int | None = None) -> bool:
    conn = sqlite3.connect(db_file)
    conn.row_factory = sqlite3.Row
    try:
        cur = conn.cursor()
        cur.execute("SELECT name FROM sqlite_master WHERE type='table' AND name=?", (table,))
        row = cur.fetchone()
        if not row:
            print(f"Table '{table}' not found in {db_file}.")
            return False

        cur.execute(f"PRAGMA table_info({table})")
        columns = [c[1] for c in cur.fetchall()]
        cur.execute(f"SELECT COUNT(*) FROM {table}")
        total = cur.fetchone()[0]
        query = f"SELECT * FROM {table}"
        if limit is not None:
            query += f" LIMIT {int(limit)}"
        cur.execute(query)
        rows = cur.fetchall()

        print(f"DB_FILE: {db_file}")
        print(f"TABLE: {table}")
        print(f"ROWS: {total}")
        if not rows:
            print("(no data)")
            return True
        print("COLUMNS:", ", ".join(columns))
        for idx, r in enumerate(rows, start=1):
            row_dict = {col: _format_cell(r[col]) for col in columns}
            print(f"{idx}:", row_dict)
        if len(rows) < total:
            print(f"... {total - len(rows)} more row(s)")
        return True
    finally:
        conn.close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Inspect a table in a dataset, model or thresholds file")
    parser.add_argument("db_file", type=Path, help="Artifact file, e.g. out/model.db")
    parser.add_argument("table", nargs="?", help="Table name; lists tables when omitted")
    parser.add_argument("--limit", type=int, default=20, help="Rows to print (0 for all)")
    args = parser.parse_args(argv)
    if not args.db_file.is_file():
        print(f"{args.db_file} does not exist.")
        return 1
    if not args.table:
        print(f"DB_FILE: {args.db_file}")
        print("TABLES:", ", ".join(list_tables(args.db_file)))
        return 0
    ok = dump_table(args.db_file, args.table.strip().lower(), args.limit or None)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
