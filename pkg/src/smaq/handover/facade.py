"""Rebuild one side of a QUIC connection from handed-over state."""
from typing import Optional

from ..netem.scheduler import ms
from ..transport.connection import Connection, ConnectionConfig, HandshakeState, Role
from ..transport.packet import Space
from .state import SmaqState

# Facades jump ahead in the packet number space they take over, so their
# packets never collide with ones the original endpoint sent after the state
# snapshot was taken.
PN_SKIP = 65536


def restore_facade(state: SmaqState, role: Role, node, port: int,
                   config: Optional[ConnectionConfig] = None, name: Optional[str] = None) -> Connection:
    """Return a connection that impersonates the server (CLIENT_FACING) or the
    client (SERVER_FACING) toward the respective peer."""
    if role not in (Role.CLIENT_FACING, Role.SERVER_FACING):
        raise ValueError(f"not a facade role: {role}")
    client_facing = role == Role.CLIENT_FACING
    peer = state.client_address if client_facing else state.server_address
    conn = Connection(role, node, port, peer, config or ConnectionConfig(), name)

    own = role.sender
    other = "server" if own == "client" else "client"
    seqs = {owner: seq for owner, _, seq in state.active_cids}
    conn.host_cid = state.cid(own)
    conn.peer_cid = state.cid(other)
    conn.original_dcid = b""
    conn.cid_sequence = {"client": seqs.get("client", 0), "server": seqs.get("server", 0)}
    conn.stateless_reset_tokens = dict(state.stateless_reset_tokens)
    client_params, server_params = dict(state.client_parameters), dict(state.server_parameters)
    conn.local_params = server_params if client_facing else client_params
    conn.peer_params = client_params if client_facing else server_params
    conn.quic_version = state.quic_version
    conn.cipher_suite = state.cipher_suite
    conn.key_phase = state.key_phase
    conn.traffic_secrets = {"client": state.client_traffic_secret, "server": state.server_traffic_secret}
    conn.hp_keys = {"client": state.client_hp_key, "server": state.server_hp_key}
    conn._install_traffic_keys()
    conn._discard_space(Space.INITIAL)
    conn._discard_space(Space.HANDSHAKE)

    app = conn.spaces[Space.APPLICATION]
    if client_facing:
        # continue the server's numbering; the client has seen up to highest_received
        app.next_pn = state.highest_received + 1 + PN_SKIP
        peer_highest = state.highest_sent
    else:
        app.next_pn = state.highest_sent + 1 + PN_SKIP
        peer_highest = state.highest_received
    if peer_highest >= 0:
        app.recv_ranges.add(0, peer_highest)
        app.largest_recv = peer_highest
    conn.handshake_state = HandshakeState.CONFIRMED
    conn._address_validated = True
    conn.last_activity = conn.now
    return conn


def facade_config(hop_rtt: Optional[int], congestion: str = "newreno", cwnd_cap: Optional[int] = None,
                  trusted_migration: bool = False, wire_format: bool = False,
                  max_ack_delay: int = ms(25)) -> ConnectionConfig:
    """Facade settings: the RTT of the hop it serves replaces the default
    initial RTT, and PTO backoff stays off until the peer has migrated."""
    return ConnectionConfig(
        smaq=True, congestion=congestion, initial_rtt=hop_rtt,
        backoff_disabled_until_migration=True, cwnd_cap=cwnd_cap,
        trusted_migration=trusted_migration, wire_format=wire_format, max_ack_delay=max_ack_delay,
    )
