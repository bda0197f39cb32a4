"""Append-only event log.

Line format (one event per line, fields separated by single spaces)::

    <time_ns> <node> <event> [key=value ...]

Packet-level lines use ``event`` = ``tx`` / ``rx`` / ``drop`` / ``fwd`` and
carry a ``pkt`` summary. Protocol events (handover, migration, path
validation) are always recorded; packet lines only when ``packets=True``.
"""
from typing import Dict, Iterable, List, Optional, Tuple

Event = Tuple[int, str, str, Dict[str, object]]


def _fmt(value) -> str:
    if isinstance(value, tuple) and len(value) == 2:
        return f"{value[0]}:{value[1]}"
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    return str(value).replace(" ", "_")


class Trace:
    def __init__(self, packets: bool = False) -> None:
        self.packets = packets
        self.events: List[Event] = []

    def event(self, time_ns: int, node: str, event: str, **fields) -> None:
        self.events.append((time_ns, node, event, fields))

    def packet(self, time_ns: int, node: str, direction: str, summary: str) -> None:
        if self.packets:
            self.events.append((time_ns, node, direction, {"pkt": summary}))

    def find(self, event: str, node: Optional[str] = None) -> List[Event]:
        return [e for e in self.events if e[2] == event and (node is None or e[1] == node)]

    def first(self, event: str, node: Optional[str] = None) -> Optional[Event]:
        for e in self.events:
            if e[2] == event and (node is None or e[1] == node):
                return e
        return None

    def lines(self) -> Iterable[str]:
        for t, node, event, fields in self.events:
            extra = " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())
            yield f"{t} {node} {event}" + (" " + extra if extra else "")

    def dump(self) -> str:
        return "\n".join(self.lines()) + "\n"


def parse_line(line: str) -> Event:
    parts = line.split()
    fields = dict(p.split("=", 1) for p in parts[3:])
    return int(parts[0]), parts[1], parts[2], fields
