"""Allow ``python -m bnmr``."""

from bnmr.cli import main

raise SystemExit(main())
