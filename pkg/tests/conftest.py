import numpy as np
import pytest

from regionsim.graph import load_layout


def layout_doc(n, edges, groups=None, areas=None, centroids=None, floors=None):
    groups = groups or {}
    regions = []
    for i in range(n):
        g = groups.get(i, "hallway")
        regions.append({
            "id": i, "name": f"r{i}", "group": g,
            "floor": (floors or {}).get(i, 0),
            "centroid": list((centroids or {}).get(i, (10.0 * i, 0.0))),
            "area": (areas or {}).get(i, 50.0),
            "is_entrance": g == "entrance", "is_outside": g == "outdoor",
        })
    return {"regions": regions, "edges": [list(e) for e in edges]}


def make_graph(n, edges, **kw):
    return load_layout(layout_doc(n, edges, **kw))


def path_graph(n=3, **kw):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)], **kw)


def random_graph(rng, n, p=0.3, directed=False, connected=True):
    """Random layout; ``connected`` adds a spanning path first."""
    edges = set()
    if connected:
        order = rng.permutation(n)
        edges |= {(int(a), int(b)) for a, b in zip(order, order[1:])}
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < p:
                edges.add((a, b))
    centroids = {i: tuple(rng.uniform(0, 100, 2)) for i in range(n)}
    areas = {i: float(rng.integers(10, 100)) for i in range(n)}
    groups = {i: "entrance" for i in range(n) if rng.random() < 0.2}
    doc = layout_doc(n, [], groups=groups, areas=areas, centroids=centroids)
    doc["edges"] = [[a, b, {"directed": True}] if directed else [a, b] for a, b in sorted(edges)]
    return load_layout(doc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria bookkeeping: one PASS/FAIL line per criterion in the terminal summary
CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    entry = CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    entry["title"] = title
    entry["ok"] = entry["ok"] and rep.passed


def note(n: int, text: str):
    """Attach a measured value to criterion ``n``'s summary line."""
    CRITERIA.setdefault(n, {"title": "", "ok": True, "notes": []})["notes"].append(text)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(CRITERIA):
        c = CRITERIA[n]
        detail = "; ".join(c["notes"])
        terminalreporter.write_line(f"{'PASS' if c['ok'] else 'FAIL'}  criterion {n:2d}  {c['title']}"
                                    + (f"  [{detail}]" if detail else ""))
