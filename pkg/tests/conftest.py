from __future__ import annotations

import contextlib

import pytest

from idsorch.agent import Agent
from idsorch.orchestrator import BuildLatencyModel, Orchestrator
from idsorch.protocol import LoopbackChannel, decode, encode
from idsorch.sim import ManualClock

_CRITERIA: list[tuple[str, str, str]] = []


@contextlib.contextmanager
def criterion(number: int, text: str):
    """Record a PASS/FAIL line for the acceptance summary."""
    try:
        yield
    except BaseException:
        _CRITERIA.append(("FAIL", f"{number:>2}", text))
        raise
    _CRITERIA.append(("PASS", f"{number:>2}", text))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, num, text in sorted(_CRITERIA, key=lambda r: int(r[1])):
        terminalreporter.write_line(f"[{status}] criterion {num}: {text}")


class Net:
    """Orchestrator plus agents over a loopback channel on a manual clock."""

    def __init__(self, hosts, rules, latency=BuildLatencyModel(), initial=()):
        self.clock = ManualClock()
        self.timeline = []
        self.channel = LoopbackChannel()
        self.orch = Orchestrator(rules, self.clock, self.channel, latency, on_event=self.timeline.append)
        self.agents = {}
        for h in hosts:
            agent = Agent(h, self.clock, initial, on_event=self.timeline.append)
            self.agents[h] = agent
            self.channel.connect(h, agent.handle)
            self.orch.register(decode(encode(agent.register_message())))


@pytest.fixture
def make_net():
    return Net
