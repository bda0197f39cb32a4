"""The three measurement campaigns.

Every run builds a fresh world with a per-run seed derived from the scenario
seed, so quic and smaq-pep repetition ``i`` share their seed. All times are
simulated nanoseconds from the client's Initial, reported in milliseconds.
"""
from typing import Dict, List, Optional, Sequence

from ..netem.scheduler import NS_PER_MS, derive_seed, seconds
from ..netem.trace import Trace
from .apps import ENDLESS, FetchClient
from .config import ScenarioConfig
from .manifests import PageManifest, builtin_pages, load_manifest
from .metrics import MetricsRecord
from .scenario import Session, World

MIGRATION_RUN_LIMIT = seconds(30)
WEBPERF_RUN_LIMIT = seconds(120)


def run_seed(cfg: ScenarioConfig, run: int) -> int:
    return derive_seed(cfg.seed, f"run/{run}")


def make_world(cfg: ScenarioConfig, run: int, **kwargs) -> World:
    return World(cfg.orbit, cfg.loss, cfg.pep_count, run_seed(cfg, run), **kwargs)


def to_ms(ns: int) -> float:
    return ns / NS_PER_MS


def trace_migration_time(trace: Trace, conn_name: str) -> Optional[int]:
    """Simulated time between the client creating the state and the client
    migrating to the middlebox, read from the event trace."""
    created = migrated = None
    for t, _node, event, fields in trace.events:
        if fields.get("conn") != conn_name:
            continue
        if event == "state-created" and created is None:
            created = t
        elif event == "migrated" and migrated is None:
            migrated = t
    if created is None or migrated is None:
        return None
    return migrated - created


# ---------------------------------------------------------------- migration time

def migration_run(cfg: ScenarioConfig, run: int) -> Dict[str, float]:
    world = make_world(cfg, run)
    session = world.connect(on_ready=lambda s: world.stop())
    world.run(MIGRATION_RUN_LIMIT)
    elapsed = trace_migration_time(world.trace, session.conn.name)
    if elapsed is None:
        handover = session.handover
        raise RunFailed(f"run {run}: no migration ({handover.phase if handover else 'no handover'}"
                        f", {handover.fallback_reason if handover else ''})")
    return {"migration_time_ms": to_ms(elapsed), "first_send_ms": to_ms(session.ready_at)}


class RunFailed(Exception):
    pass


def run_migration_time(cfg: ScenarioConfig) -> MetricsRecord:
    record = MetricsRecord(cfg.name, cfg)
    for run in range(cfg.repetitions):
        try:
            record.add(migration_run(cfg, run))
        except RunFailed as exc:
            record.fail(str(exc))
    return record


# ---------------------------------------------------------------- bulk download

def bulk_run(cfg: ScenarioConfig, run: int, checkpoints: Optional[Sequence[float]] = None) -> Dict[str, float]:
    """Cumulative decrypted octets at the client at each checkpoint (seconds)."""
    checkpoints = tuple(checkpoints or cfg.checkpoints)
    world = make_world(cfg, run)
    fetcher: List[FetchClient] = []

    def ready(session: Session) -> None:
        client = FetchClient(session.conn)
        fetcher.append(client)
        client.request(ENDLESS)

    world.connect(on_ready=ready)
    out: Dict[str, float] = {}

    def sample(t: float) -> None:
        out[f"bytes_at_{t:g}s"] = fetcher[0].received if fetcher else 0

    for t in checkpoints:
        world.scheduler.call_at(seconds(t), sample, t)
    world.run(seconds(checkpoints[-1]))
    return out


def run_bulk(cfg: ScenarioConfig) -> MetricsRecord:
    record = MetricsRecord(cfg.name, cfg)
    for run in range(cfg.repetitions):
        record.add(bulk_run(cfg, run))
    return record


# ---------------------------------------------------------------- web performance

def page_run(cfg: ScenarioConfig, run: int, page: PageManifest) -> float:
    """aPLT in ms: Initial until the last octet of the last resource."""
    world = make_world(cfg, run)
    clients: List[FetchClient] = []
    remaining = [sum(h.resources for h in page.connections)]

    def done(_client: FetchClient, _fetch) -> None:
        remaining[0] -= 1
        if remaining[0] == 0:
            world.stop()

    for host in page.connections:
        def ready(session: Session, host=host) -> None:
            client = FetchClient(session.conn, on_complete=done)
            clients.append(client)
            for _ in range(host.resources):
                client.request(host.bytes_per_resource)

        world.connect(on_ready=ready)
    world.run(WEBPERF_RUN_LIMIT)
    if remaining[0]:
        raise RunFailed(f"run {run}: {remaining[0]} resources of {page.name} incomplete")
    return to_ms(world.now)


def manifests_for(cfg: ScenarioConfig) -> List[PageManifest]:
    return [load_manifest(cfg.manifest)] if cfg.manifest else builtin_pages()


def run_webperf(cfg: ScenarioConfig, manifest: Optional[PageManifest] = None) -> MetricsRecord:
    """One run value ``aplt_ms/<page>`` per page and repetition."""
    pages = [manifest] if manifest is not None else manifests_for(cfg)
    record = MetricsRecord(cfg.name, cfg)
    for run in range(cfg.repetitions):
        values = {}
        try:
            for page in pages:
                values[f"aplt_ms/{page.name}"] = page_run(cfg, run, page)
        except RunFailed as exc:
            record.fail(str(exc))
            continue
        record.add(values)
    return record


RUNNERS = {
    "migration-time": run_migration_time,
    "bulk": run_bulk,
    "webperf": run_webperf,
}


def run_scenario(cfg: ScenarioConfig) -> MetricsRecord:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- campaigns

def campaign_configs(experiment: str, orbits: Sequence[str] = ("GEO", "LEO"),
                     losses: Sequence[float] = (0.0001, 0.001), repetitions: int = 1, seed: int = 1,
                     **extra) -> List[ScenarioConfig]:
    """Every orbit and loss in both modes; migration time only under smaq-pep."""
    modes = ("smaq-pep",) if experiment == "migration-time" else ("quic", "smaq-pep")
    return [ScenarioConfig(experiment, orbit, loss, mode, repetitions=repetitions, seed=seed, **extra)
            for orbit in orbits for loss in losses for mode in modes]


def run_campaign(configs: Sequence[ScenarioConfig]) -> List[MetricsRecord]:
    return [run_scenario(cfg) for cfg in configs]
