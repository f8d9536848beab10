import contextlib
import time

from tda.client import Client
from tda.coordinator import CoordinatorConfig, CoordinatorServer
from tda.provider import Provider, ProviderConfig
from tda.transport import Endpoint, LoopbackNetwork


def wait_for(predicate, timeout=10.0, step=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(step)
    return False


@contextlib.contextmanager
def loopback_cluster(speeds, slowdowns=None, network=None, heartbeat=0.5, **provider_kw):
    """Coordinator, one provider per speed and a client, all in this process."""
    net = network or LoopbackNetwork()
    slowdowns = slowdowns or [1.0] * len(speeds)
    coord = CoordinatorServer(net, Endpoint("coord", 0), CoordinatorConfig(heartbeat_interval=heartbeat)).start()
    nodes = [coord]
    try:
        providers = []
        for i, (speed, slow) in enumerate(zip(speeds, slowdowns), 1):
            cfg = ProviderConfig(f"p{i}", coord.endpoint, Endpoint(f"p{i}", 0), heartbeat_interval=heartbeat,
                                 calibration=speed, synthetic_slowdown=slow, **provider_kw)
            providers.append(Provider(cfg, net).start())
            nodes.append(providers[-1])
        table = coord.logic.table.entries
        assert wait_for(lambda: all(table.get(p.node_id) and table[p.node_id].history for p in providers))
        client = Client(net, coord.endpoint, Endpoint("client", 0)).start()
        nodes.append(client)
        yield coord, providers, client
    finally:
        for node in reversed(nodes):
            node.stop()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
