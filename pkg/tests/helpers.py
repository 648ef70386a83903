from __future__ import annotations

from idsorch.model import Endpoint, FlowKey, Protocol


def dns_flow(host: str) -> FlowKey:
    return FlowKey(Protocol.UDP, Endpoint(f"{host}.lan", 5300), Endpoint("10.0.0.53", 53), "dnsflood.py", 1000)
