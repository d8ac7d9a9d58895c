import argparse
import logging
import sys
from pathlib import Path

# Add backend directory to path so we can import levelloop
sys.path.insert(0, str(Path(__file__).parent.parent))

from levelloop.config import setup_logging
from levelloop.database import SessionLocal, init_db
from levelloop.errors import HarnessError
from levelloop.services.archive import export_reports_parquet, import_reports_jsonl

logger = logging.getLogger("archive_reports")

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Move reports between the report store and files.")
    sub = parser.add_subparsers(dest="action", required=True)
    export = sub.add_parser("export", help="write stored reports to parquet, one row per test")
    export.add_argument("path", type=Path)
    load = sub.add_parser("import", help="load a reports.jsonl file into an empty store")
    load.add_argument("path", type=Path)
    args = parser.parse_args()

    setup_logging()
    if args.action == "import" and not args.path.exists():
        logger.error(f"File not found: {args.path}")
        sys.exit(1)

    init_db()
    db = SessionLocal()
    try:
        if args.action == "export":
            export_reports_parquet(db, args.path)
        else:
            import_reports_jsonl(args.path, db)
    except HarnessError as e:
        logger.error(str(e))
        sys.exit(1)
    finally:
        db.close()
