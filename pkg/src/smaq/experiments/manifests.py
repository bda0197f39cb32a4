"""Synthetic page manifests for the web performance experiment.

A page is a list of hostnames, each fetched over its own connection, with
a number of equally sized resources per hostname. Only the google entry
carries measured numbers (4 connections, 170 KB each); the other nine
pages are placeholders with plausible shapes and are marked
``measured=False``. Nothing numeric is asserted against placeholders.
"""
import json
from dataclasses import dataclass
from typing import Dict, List, Tuple

from ..errors import ConfigError

KB = 1000


@dataclass(frozen=True)
class HostFetch:
    hostname: str
    resources: int
    bytes_per_resource: int

    @property
    def total(self) -> int:
        return self.resources * self.bytes_per_resource


@dataclass(frozen=True)
class PageManifest:
    name: str
    connections: Tuple[HostFetch, ...]
    measured: bool = False

    def __post_init__(self):
        if not self.connections:
            raise ConfigError(f"page {self.name!r} has no connections")
        for host in self.connections:
            if host.resources < 1 or host.bytes_per_resource < 0:
                raise ConfigError(f"page {self.name!r}: bad entry for {host.hostname!r}")
        if self.total_bytes <= 0:
            raise ConfigError(f"page {self.name!r} transfers no bytes")

    @property
    def total_bytes(self) -> int:
        return sum(h.total for h in self.connections)

    @property
    def bytes_per_connection(self) -> float:
        return self.total_bytes / len(self.connections)


def uniform_page(name: str, connections: int, bytes_per_connection: int, resources: int = 4,
                 measured: bool = False) -> PageManifest:
    """``connections`` hostnames, each carrying ``bytes_per_connection``
    split evenly over ``resources`` resources."""
    per = bytes_per_connection // resources
    hosts = tuple(HostFetch(f"h{i}.{name}.example", resources, per) for i in range(connections))
    return PageManifest(name, hosts, measured)


# (connections, average bytes per connection)
_SHAPES = {
    "google": (4, 170 * KB),
    "facebook": (3, 75 * KB),
    "microsoft": (9, 95 * KB),
    "amazon": (12, 110 * KB),
    "apple": (5, 165 * KB),
    "youtube": (6, 140 * KB),
    "twitter": (2, 155 * KB),
    "instagram": (3, 80 * KB),
    "netflix": (4, 125 * KB),
    "linkedin": (7, 65 * KB),
}

BUILTIN: Dict[str, PageManifest] = {
    name: uniform_page(name, conns, per, measured=(name == "google"))
    for name, (conns, per) in _SHAPES.items()
}


def builtin_pages() -> List[PageManifest]:
    """All built-in pages, sorted by average bytes per connection."""
    return sorted(BUILTIN.values(), key=lambda p: (p.bytes_per_connection, p.name))


def load_manifest(ref: str) -> PageManifest:
    """A built-in page name, or a JSON file::

        {"name": "page", "connections": [{"hostname": "a", "resources": 2, "bytes_per_resource": 1000}]}
    """
    if ref in BUILTIN:
        return BUILTIN[ref]
    try:
        with open(ref) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {ref!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {ref!r} is not valid JSON: {exc}") from None
    try:
        hosts = tuple(HostFetch(str(c["hostname"]), int(c["resources"]), int(c["bytes_per_resource"]))
                      for c in doc["connections"])
        return PageManifest(str(doc["name"]), hosts, bool(doc.get("measured", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"manifest {ref!r}: {exc}") from None
