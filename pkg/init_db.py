#!/usr/bin/env python3
"""
Database initialization script - creates the marginal-likelihood store.

Usage:
    python init_db.py [DATABASE_URL]

Without an argument the URL comes from NLPMIX_DATABASE_URL, falling back to
a SQLite file under the data directory.
"""

import logging
import sys
from pathlib import Path

# Add package to path
sys.path.insert(0, str(Path(__file__).parent))

from nlpmix import config
from nlpmix.database import close_db, get_db, init_db, table_exists
from nlpmix.repository import MarginalRepository, RunRepository


def main() -> int:
    """Create tables and report what the store holds."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    url = sys.argv[1] if len(sys.argv) > 1 else config.DATABASE_URL
    if not url:
        config.DATA_DIR.mkdir(parents=True, exist_ok=True)
        url = f"sqlite:///{config.DATA_DIR / 'nlpmix.db'}"

    print(f"Creating tables at {url} ...")
    init_db(url)
    for table in ("log_marginals", "runs"):
        print(f"  {table}: {'ok' if table_exists(table) else 'MISSING'}")

    db = get_db()
    try:
        print(f"Stored marginals: {MarginalRepository.count(db)}")
        print(f"Recorded runs:    {len(RunRepository.get_runs(db))}")
    finally:
        close_db(db)
    print(f"\nUse it with: python -m nlpmix fit data.csv --cache-db {url}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
