# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import csv
import hashlib
import json
import os
import shlex
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from subprocess import CalledProcessError
from subprocess import check_output
from subprocess import PIPE

import numpy as np
import toml

from qaoa_metaopt import __version__

PYPROJECT = Path("pyproject.toml")
QAOA_METAOPT_CONFIG = Path(".qaoa-metaopt.toml")
MANIFEST_NAME = "manifest.json"


def run(cmd, **kwargs):
    """Run a command as a subprocess and get the output as a string"""
    quiet = kwargs.pop("quiet", False)
    if not quiet:
        log(f"+ {cmd}")
    else:
        kwargs.setdefault("stderr", PIPE)

    parts = shlex.split(cmd)
    if "/" not in parts[0]:
        executable = shutil.which(parts[0])
        if not executable:
            raise CalledProcessError(1, f'Could not find executable "{parts[0]}"')
        parts[0] = normalize_path(executable)

    try:
        return check_output(parts, **kwargs).decode("utf-8").strip()
    except CalledProcessError as e:
        if quiet and e.stderr:
            log(f"stderr:\n{e.stderr.decode('utf-8').strip()}\n\n")
        raise e


def log(output, **kwargs):
    """Log an output to stderr"""
    print(output, file=sys.stderr, **kwargs)


def normalize_path(path):
    """Normalize a path to use forward slashes"""
    return str(path).replace(os.sep, "/")


def config_hash(config):
    """Stable hash of a JSON-serializable mapping"""
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def derive_rng(seed, *keys):
    """Get an independent random stream for ``seed`` and a tuple of integer keys.

    Streams for different keys do not depend on the order they are requested in,
    which keeps per-instance work reproducible under any thread count.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def map_ordered(func, items, threads=1):
    """Apply ``func`` to ``items``, returning results in input order"""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def git_revision():
    """Get the current git revision, if any"""
    try:
        return run("git rev-parse HEAD", quiet=True)
    except (CalledProcessError, OSError):
        return "unknown"


def write_csv(path, header, rows):
    """Write rows to a CSV file with unix line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_manifest(out_dir, command, options, seed, started):
    """Write the run manifest for a CLI command"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    options = {k: v for k, v in sorted(options.items())}
    data = dict(
        command=command,
        options=options,
        config_hash=config_hash(options),
        seed=seed,
        git_revision=git_revision(),
        version=__version__,
        wall_time=round(time.time() - started, 3),
    )
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(data, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def read_config(path=None):
    """Read the qaoa-metaopt config data.

    An explicit path may be JSON or TOML. Otherwise look for
    ``.qaoa-metaopt.toml`` and then ``[tool.qaoa-metaopt]`` in ``pyproject.toml``.
    Values kept under an ``options`` table are flattened.
    """
    config = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ValueError(f"Config file {path} does not exist")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            config = json.loads(text)
        else:
            config = toml.loads(text)
    elif QAOA_METAOPT_CONFIG.exists():
        config = toml.loads(QAOA_METAOPT_CONFIG.read_text(encoding="utf-8"))
    elif PYPROJECT.exists():
        data = toml.loads(PYPROJECT.read_text(encoding="utf-8"))
        config = data.get("tool", {}).get("qaoa-metaopt", {})

    if not isinstance(config, dict):
        raise ValueError("Config must be a mapping of option names to values")
    if "options" in config and isinstance(config["options"], dict):
        config = config["options"]
    return config
