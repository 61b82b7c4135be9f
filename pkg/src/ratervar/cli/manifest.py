"""
Run manifests: what a subcommand was asked to do and sha256 digests of
the files it read and wrote.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List

from ratervar.exception.exception import DataFormatError
from ratervar.misc.utils import atomic_write_bytes, format_key_values, get_logger, parse_key_values, sha256_file

MANIFEST_NAME = "run_manifest.txt"


@dataclass
class RunManifest:
    """
    Attributes
    ----------
        subcommand : str
        argv : List[str]
            Full command line after the program name; replaying it
            reproduces the run.
        config : Dict[str, object]
            Resolved configuration.
        seed : int
        inputs, outputs : List[str]
            Paths read and written.
        hashes : Dict[str, str]
            sha256 per file, keyed by path relative to the manifest.
    """

    subcommand: str
    argv: List[str] = field(default_factory=list)
    config: Dict[str, object] = field(default_factory=dict)
    seed: int = 0
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    hashes: Dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        entries = {
            "subcommand": self.subcommand,
            "argv": " ".join(self.argv),
            "seed": self.seed,
        }
        entries.update({f"config.{k}": v for k, v in self.config.items()})
        entries.update({f"input.{i}": p for i, p in enumerate(self.inputs)})
        entries.update({f"output.{i}": p for i, p in enumerate(self.outputs)})
        entries.update({f"sha256.{p}": h for p, h in sorted(self.hashes.items())})
        return format_key_values(entries)


def _files(paths: List[str]) -> List[str]:
    found = list()
    for path in paths:
        if os.path.isfile(path):
            found.append(path)
        elif os.path.isdir(path):
            for root, dirs, names in os.walk(path):
                dirs.sort()
                found += [os.path.join(root, n) for n in sorted(names) if n != MANIFEST_NAME]
    return found


def write_manifest(manifest: RunManifest, path: str) -> str:
    """Hash every file under the inputs and outputs and write the manifest atomically."""
    base = os.path.dirname(os.path.abspath(path))
    for filePath in _files(manifest.inputs + manifest.outputs):
        if os.path.abspath(filePath) == os.path.abspath(path):
            continue
        key = os.path.relpath(os.path.abspath(filePath), base)
        manifest.hashes[key] = sha256_file(filePath)
    atomic_write_bytes(path, manifest.to_text().encode("utf-8"))
    get_logger("ratervar.cli.manifest").info(f"Wrote run manifest {path} ({len(manifest.hashes)} files)")
    return path


def verify_manifest(path: str) -> bool:
    """
    Recompute the digest of every file a manifest lists. Missing or
    changed files make the check fail.
    """
    logger = get_logger("ratervar.cli.manifest")
    try:
        with open(path, "r") as f:
            entries = parse_key_values(f.read(), source=path)
    except (OSError, ValueError) as err:
        raise DataFormatError(f"cannot read run manifest: {err}", path=path) from err
    base = os.path.dirname(os.path.abspath(path))
    ok = True
    for key, digest in entries.items():
        if not key.startswith("sha256."):
            continue
        filePath = os.path.join(base, key[len("sha256.") :])
        if not os.path.isfile(filePath):
            logger.warning(f"{filePath} listed in {path} is missing")
            ok = False
        elif sha256_file(filePath) != digest:
            logger.warning(f"{filePath} does not match its recorded sha256")
            ok = False
    return ok
