import math

import pytest

from vulnmap.geo import GeoPoint
from vulnmap.routing import StreetGraph
from vulnmap.toy import write_toy_dataset


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    write_toy_dataset(d)
    return d


def random_points(rng, n, lat=(-55.0, -22.0), lon=(-73.0, -54.0)):
    return [GeoPoint(float(a), float(b))
            for a, b in zip(rng.uniform(*lat, n), rng.uniform(*lon, n))]


def dyadic_graph(rng, n_nodes, n_edges, origin=(-34.6, -58.4)):
    """Random graph whose edge lengths are multiples of 1/256 m.

    Such lengths add up without rounding, so path sums do not depend on the
    order in which an algorithm accumulates them.
    """
    nodes = {i: GeoPoint(origin[0] + rng.uniform(0, 0.02), origin[1] + rng.uniform(0, 0.02))
             for i in range(n_nodes)}
    edges = []
    for _ in range(n_edges):
        a, b = rng.integers(0, n_nodes, 2)
        if a != b:
            edges.append((int(a), int(b), int(rng.integers(1, 2000)) + int(rng.integers(0, 256)) / 256))
    return StreetGraph(nodes, edges)


def floyd_warshall(graph):
    ids = sorted(graph.nodes)
    d = {i: {j: (0.0 if i == j else math.inf) for j in ids} for i in ids}
    for a, b, w in graph.edges:
        if w < d[a][b]:
            d[a][b] = d[b][a] = w
    for k in ids:
        dk = d[k]
        for i in ids:
            dik = d[i][k]
            if dik == math.inf:
                continue
            di = d[i]
            for j in ids:
                cand = dik + dk[j]
                if cand < di[j]:
                    di[j] = cand
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose the call-phase report so fixtures can see the test outcome
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
