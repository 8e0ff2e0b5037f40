# /app.py

import sys

from dotenv import load_dotenv

# .env must be loaded before the settings singleton reads EITCOOL_* overrides
load_dotenv()

from src.cli.commands import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
