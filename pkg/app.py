# -*- coding: utf-8 -*-
from edlm.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
