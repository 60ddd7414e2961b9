from __future__ import annotations

from onion_store_twin.cli import main

if __name__ == "__main__":
    main()
