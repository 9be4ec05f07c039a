import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_dist(a, b):
    """Full (len(a), len(b)) Euclidean distance matrix, same summation order as the library."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def brute_knn(src, queries, k):
    """Indices and distances of the k nearest sources, ties broken by lower index."""
    d = brute_dist(queries, src)
    order = np.lexsort((np.broadcast_to(np.arange(len(src)), d.shape), d), axis=-1)[:, :k]
    return order, np.take_along_axis(d, order, axis=1)


def brute_chamfer(a, b):
    d = brute_dist(a, b)
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def brute_hausdorff(a, b):
    d = brute_dist(a, b)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def check_fps_prefix(pts, sel):
    """Every pick maximizes the distance to the already-picked set (lowest index on ties)."""
    d = brute_dist(pts, pts)
    for i in range(1, len(sel)):
        mind = d[:, sel[:i]].min(axis=1)
        mind[sel[:i]] = -np.inf
        if sel[i] != int(np.argmax(mind)):
            return False
    return True


def randomize(net, rng, scale=0.5):
    """Draw every parameter (biases included) from a normal so no unit sits exactly on a ReLU kink."""
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.from_numpy(rng.normal(0.0, scale / max(1, p.shape[-1]) ** 0.5, p.shape)))
    return net


def kink_margin(net, anchor, queries, targets=None):
    """Smallest distance of the evaluation to any non-differentiable switch.

    Covers ReLU inputs, the max-pool winner, the 3-NN/4-NN boundary of every
    query, and (when ``targets`` are given) the sign of each L1 residual.
    """
    relu_in = []
    hooks = [m.register_forward_hook(lambda _m, inp, _out: relu_in.append(inp[0].detach()))
             for m in net.modules() if isinstance(m, torch.nn.ReLU)]
    try:
        feats = net.extract(anchor)
        pred = net.regress(torch.as_tensor(np.asarray(queries), dtype=net.dtype), feats).detach().numpy()
    finally:
        for h in hooks:
            h.remove()
    margin = min(float(t.abs().min()) for t in relu_in)
    top2 = torch.topk(feats.locals[-1].detach(), 2, dim=0).values
    live = top2[0] > 0  # all-zero columns stay zero while their ReLU inputs stay negative
    if live.any():
        margin = min(margin, float((top2[0] - top2[1])[live].min()))
    _, dist = brute_knn(np.asarray(anchor), np.asarray(queries), 4)
    margin = min(margin, float((dist[:, 3] - dist[:, 2]).min()), float(dist[:, 0].min()))
    if targets is not None:
        margin = min(margin, float(np.abs(pred - np.asarray(targets)).min()))
    return margin


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(number, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
