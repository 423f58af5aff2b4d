"""Ground-truth victims and their golden traces, shipped as data files.

>>> fx = load_fixture("toynet")
>>> len(fx.processed), fx.expected["candidates"]
(6, 10)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from ..arch import ArchGraph, validate_graph
from ..estimate import IOSpec
from ..space import SearchSpace, get_space
from ..trace import ProcessedTrace, RawEvent, condense, parse_raw, read_processed

DATA_DIR = Path(__file__).with_name("data")
MANIFEST = "manifest.json"


class UnknownFixtureError(KeyError):
    pass


class IntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class Fixture:
    name: str
    arch: ArchGraph
    raw: tuple[RawEvent, ...]
    processed: ProcessedTrace
    space_name: str
    style: str
    expected: dict
    observed: ProcessedTrace | None = None
    files: dict = field(default_factory=dict)

    @property
    def space(self) -> SearchSpace:
        return get_space(self.space_name)

    @property
    def io(self) -> IOSpec:
        return IOSpec(self.arch.input_shape, self.arch.output_shape)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(data_dir: Path) -> dict:
    try:
        return json.loads((data_dir / MANIFEST).read_text())
    except FileNotFoundError:
        raise IntegrityError(f"fixture manifest missing in {data_dir}") from None


def fixture_names(data_dir: Path = DATA_DIR) -> list[str]:
    return sorted(_manifest(data_dir)["fixtures"])


def _load(name: str, data_dir: Path) -> Fixture:
    manifest = _manifest(data_dir)
    try:
        entry = manifest["fixtures"][name]
    except KeyError:
        known = ", ".join(sorted(manifest["fixtures"]))
        raise UnknownFixtureError(f"unknown fixture {name!r} (known: {known})") from None
    paths = {}
    for role, fname in entry["files"].items():
        path = data_dir / fname
        if not path.exists():
            raise IntegrityError(f"{name}: missing file {fname}")
        if _sha256(path) != manifest["digests"][fname]:
            raise IntegrityError(f"{name}: digest mismatch for {fname}")
        paths[role] = path

    arch = ArchGraph.load(paths["arch"])
    problems = validate_graph(arch)
    if problems:
        raise IntegrityError(f"{name}: invalid graph: {problems[0].message}")
    raw = tuple(parse_raw(paths["raw"]))
    processed = read_processed(paths["processed"])
    if condense(raw).entries != processed.entries:
        raise IntegrityError(f"{name}: processed trace is not the condensed raw trace")
    observed = read_processed(paths["observed"]) if "observed" in paths else None
    return Fixture(name, arch, raw, processed, entry["space"], entry["style"], dict(entry["expected"]),
                   observed, {k: str(v) for k, v in paths.items()})


@lru_cache(maxsize=None)
def _cached(name: str) -> Fixture:
    return _load(name, DATA_DIR)


def load_fixture(name: str, data_dir: Path | str | None = None) -> Fixture:
    """Load and verify a fixture.

    Every file is checked against the manifest digest, the graph is
    validated, and the processed trace must equal the condensed raw trace.
    """
    if data_dir is None:
        return _cached(name)
    return _load(name, Path(data_dir))
