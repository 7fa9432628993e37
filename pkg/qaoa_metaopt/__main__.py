# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
from qaoa_metaopt.cli import main

if __name__ == "__main__":
    main()
