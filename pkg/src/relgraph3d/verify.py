"""Oracle suites: each check compares an operation against an independent
reference (finite differences, Monte-Carlo sampling, exhaustive search or an
algebraic round trip) and reports the operation name and failing inputs.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .decode import candidate_box, relative_from_gt
from .geometry import Box3D, corner_frame, extract_scale, iou3d, pose_frame, wrap_angle
from .relatedness import Box2D, cluster_scores, prune, relatedness_matrix

LEVELS = ("fast", "full")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}  ({self.seconds:.1f}s)"


# ---------------------------------------------------------------- oracles


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def monte_carlo_iou(a: Box3D, b: Box3D, n: int = 1_000_000, rng=None) -> float:
    """IoU by uniform sampling inside the union of the two boxes' bounding cubes."""
    rng = np.random.default_rng(0) if rng is None else rng

    def inside(box, pts):
        local = pts - box.centroid
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        x = c * local[:, 0] + s * local[:, 1]
        y = -s * local[:, 0] + c * local[:, 1]
        h = box.size / 2
        return (np.abs(x) <= h[0]) & (np.abs(y) <= h[1]) & (np.abs(local[:, 2]) <= h[2])

    r = max(np.linalg.norm(a.size), np.linalg.norm(b.size)) / 2
    lo = np.minimum(a.centroid, b.centroid) - r
    hi = np.maximum(a.centroid, b.centroid) + r
    pts = rng.uniform(lo, hi, size=(n, 3))
    ia, ib = inside(a, pts), inside(b, pts)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def exhaustive_clusters(scores, k: int):
    """Brute-force 1-D k-means over all contiguous splits of the sorted distinct values.

    Returns ``(cost, clusters, n_optimal)``; clusters hold values, highest first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    vals, counts = np.unique(-scores, return_counts=True)
    vals = -vals
    m = len(vals)
    k = min(k, m)
    results = []
    for cuts in itertools.combinations(range(1, m), k - 1):
        bounds = (0,) + cuts + (m,)
        cost = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            v, w = vals[a:b], counts[a:b]
            mean = np.dot(v, w) / w.sum()
            cost += float(np.dot(w, (v - mean) ** 2))
        results.append((cost, bounds))
    best = min(c for c, _ in results)
    optimal = [b for c, b in results if c <= best + 1e-12]
    bounds = optimal[0]
    return best, [vals[a:b].tolist() for a, b in zip(bounds[:-1], bounds[1:])], len(optimal)


def cluster_cost(scores, clusters) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return float(sum(np.sum((scores[c] - scores[c].mean()) ** 2) for c in clusters))


def random_box(rng, spread=2.0) -> Box3D:
    return Box3D(rng.uniform(-spread, spread, 3), rng.uniform(0.2, 2.0, 3), rng.uniform(-np.pi, np.pi))


# ---------------------------------------------------------------- checks


def check_op_gradients(n_cases: int = 10, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    ops = {
        "tanh": lambda x: dc.tanh(x).sum(),
        "sigmoid": lambda x: (dc.sigmoid(x) * x).sum(),
        "exp_log": lambda x: dc.log(dc.exp(x) + 1.0).sum(),
        "sin_cos": lambda x: (dc.sin(x) * dc.cos(x * 2.0)).sum(),
        "norm": lambda x: dc.norm(dc.reshape(x, (-1, 2)), axis=-1).sum(),
        "atan2": lambda x: dc.atan2(x[:2], x[2:4] + 3.0).sum(),
        "softmax_ce": lambda x: dc.softmax_cross_entropy(dc.reshape(x, (2, -1)), [0, 1]).sum(),
        "matmul": lambda x: (dc.matmul(dc.reshape(x, (2, -1)), dc.reshape(x, (-1, 2))) ** 2).sum(),
    }
    for name, f in ops.items():
        for _ in range(n_cases):
            x0 = rng.normal(size=8)
            t = dc.parameter(x0.copy())
            dc.backward(f(t))
            num = numeric_grad(lambda: float(f(dc.Tensor(x0)).data), x0)
            err = rel_error(t.grad, num)
            if err > worst:
                worst, where = err, f"{name} x={np.round(x0, 3).tolist()}"
    ok = worst <= 1e-4
    return CheckResult("op_gradients", ok, f"max rel err {worst:.2e}" + ("" if ok else f" at {where}"))


def check_gru_gradients(seed: int = 0) -> CheckResult:
    from .graphnet import add_gru_params, gru_params

    rng = np.random.default_rng(seed)
    store = dc.ParamStore()
    add_gru_params(store, 3, 4, rng, "g")
    for name in dc.GRU_BIASES:
        store[f"g.{name}"].data = rng.normal(size=4)
    h0, x0 = dc.parameter(rng.normal(size=(2, 4))), dc.parameter(rng.normal(size=(2, 3)))
    out = lambda: (dc.gru_step(h0, x0, gru_params(store, "g")) ** 2).sum()  # noqa: E731
    dc.backward(out())
    worst, where = 0.0, ""
    for name, t in list(store) + [("h_prev", h0), ("x", x0)]:
        num = numeric_grad(lambda: float(out().data), t.data)
        err = rel_error(t.grad, num)
        if err > worst:
            worst, where = err, name
    ok = worst <= 1e-4
    return CheckResult("gru_gradients", ok, f"max rel err {worst:.2e}" + ("" if ok else f" at {where}"))


def gradcheck_scene(seed: int = 0):
    """A fixed 3-object scene with a 4-edge graph for whole-pipeline checks."""
    from .synthscene import GeneratorConfig, generate_scene

    cfg = GeneratorConfig(n_objects=(3, 3))
    scene = generate_scene(cfg, seed)
    edges = [(0, 1), (2, 1), (1, 0), (1, 2)]
    return scene, edges


def pipeline_gradcheck(n_params: int = 25, seed: int = 0, cfg: RunConfig | None = None):
    """Analytic vs central-difference gradients of the total loss.

    One random entry is drawn from each parameter tensor (at least
    ``n_params`` entries overall).  Returns ``(max_rel_err, records)``.
    """
    from .pipeline import RelationalDetector

    cfg = cfg or RunConfig(d_model=8, seed=seed)
    model = RelationalDetector(cfg)
    rng = np.random.default_rng(seed + 1)
    # move the network away from its symmetric initialization
    for _, t in model.store:
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    scene, edges = gradcheck_scene(seed)
    caches = [model.cache(scene)]
    res = model.forward(caches, forced=[edges])
    if res.graph.batch.n_edges != 4:
        raise RuntimeError("gradient-check scene must have 4 edges")
    model.store.zero_grad()
    dc.backward(res.total)
    names = [name for name, _ in model.store]
    picks = []
    while len(picks) < n_params:
        for name in names:
            picks.append((name, tuple(int(rng.integers(n)) for n in model.store[name].shape)))
    records, worst = [], 0.0
    for name, idx in picks:
        t = model.store[name]
        analytic = 0.0 if t.grad is None else float(t.grad[idx])
        old = t.data[idx]
        h = 1e-5
        t.data[idx] = old + h
        fp = float(model.forward(caches, forced=[edges]).total.data)
        t.data[idx] = old - h
        fm = float(model.forward(caches, forced=[edges]).total.data)
        t.data[idx] = old
        numeric = (fp - fm) / (2 * h)
        err = rel_error(analytic, numeric)
        worst = max(worst, err)
        records.append((name, idx, analytic, numeric, err))
    return worst, records


def check_pipeline_gradients(seed: int = 0) -> CheckResult:
    worst, records = pipeline_gradcheck(25, seed)
    bad = [r for r in records if r[4] > 1e-3]
    detail = f"{len(records)} params, max rel err {worst:.2e}"
    if bad:
        detail += f"; worst {bad[0][0]}{list(bad[0][1])}: analytic {bad[0][2]:.6g} numeric {bad[0][3]:.6g}"
    return CheckResult("pipeline_gradients", not bad, detail)


def check_iou(n_pairs: int, n_samples: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    for _ in range(n_pairs):
        a = random_box(rng, 0.6)
        b = random_box(rng, 0.6)
        exact, mc = iou3d(a, b), monte_carlo_iou(a, b, n_samples, rng)
        if abs(exact - mc) > worst:
            worst, where = abs(exact - mc), f"a={a.to_dict()} b={b.to_dict()}"
    ok = worst <= 0.01
    return CheckResult("iou_monte_carlo", ok, f"{n_pairs} pairs, max |diff| {worst:.4f}" + ("" if ok else f" at {where}"))


def _check_one_list(scores, k):
    """Failure message for one score list, or ``None``."""
    n = len(scores)
    where = f"cluster_scores({scores.tolist()}, k={k})"
    clusters = cluster_scores(scores, k)
    best, oracle, n_opt = exhaustive_clusters(scores, k)
    cost = cluster_cost(scores, clusters)
    if abs(cost - best) > 1e-9:
        return f"{where} cost {cost} > optimum {best}"
    if any(scores[c[0]] != scores[c].max() for c in clusters):
        return f"{where} cluster head is not its maximum"
    m = np.zeros((n + 1, n + 1))
    m[1:, 0] = scores
    kept = sorted(scores[i - 1] for i, j, _ in prune(m, k).edges if j == 0)
    if n <= k:
        expect = sorted(scores)
    elif n_opt == 1:
        expect = sorted(c[0] for c in oracle)
    else:
        expect = sorted(scores[c[0]] for c in clusters)
    if len(kept) > k or not np.array_equal(kept, expect):
        return f"prune of {where}: kept {kept}, expected {expect}"
    return None


def check_clustering(max_len: int, n_per_len: int = 300, seed: int = 0, exhaustive_len: int = 3) -> CheckResult:
    """Score lists over the 0.05 grid against the brute-force oracle.

    Every multiset of length ``<= exhaustive_len`` is checked (clustering
    cost does not depend on order; each is presented in a shuffled order),
    then ``n_per_len`` random lists for each longer length up to ``max_len``.
    Each list also feeds target 0 of a graph, and the pruned sources must be
    exactly the oracle cluster maxima (at most ``k``).
    """
    rng = np.random.default_rng(seed)
    grid = np.round(np.arange(0, 1.0001, 0.05), 2)

    def lists():
        for n in range(1, min(exhaustive_len, max_len) + 1):
            for ms in itertools.combinations_with_replacement(grid, n):
                yield rng.permutation(np.array(ms))
        for n in range(exhaustive_len + 1, max_len + 1):
            for _ in range(n_per_len):
                yield rng.choice(grid, size=n)

    n_checked = 0
    for scores in lists():
        for k in (1, 2, 3, 4):
            msg = _check_one_list(scores, k)
            if msg is not None:
                return CheckResult("cluster_oracle", False, msg)
            n_checked += 1
    return CheckResult(
        "cluster_oracle",
        True,
        f"{n_checked} (list, k) cases optimal (all multisets up to length {exhaustive_len}), prune keeps cluster maxima",
    )


def check_transforms(n_pairs: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_c, worst_t, worst_s = 0.0, 0.0, 0.0
    for order in ("relative_first", "world_first"):
        for _ in range(n_pairs):
            bi, bj = random_box(rng, 4.0), random_box(rng, 4.0)
            cand = candidate_box(relative_from_gt(bi, bj, order), bi, order)
            worst_c = max(worst_c, float(np.abs(cand.centroid - bj.centroid).max()))
            worst_t = max(worst_t, abs(wrap_angle(cand.yaw - bj.yaw)))
            worst_s = max(worst_s, float(np.abs(cand.size - bj.size).max()))
            s = extract_scale(corner_frame(bi.yaw, bi.centroid, bi.size), pose_frame(bi.yaw, bi.centroid))
            worst_s = max(worst_s, float(np.abs(s - bi.size).max()))
    ok = worst_c <= 1e-6 and worst_t <= 1e-9 and worst_s <= 1e-9
    return CheckResult("transform_round_trip", ok, f"max err centroid {worst_c:.1e} m, yaw {worst_t:.1e} rad, size {worst_s:.1e}")


def random_boxes_2d(rng, n, n_classes=10) -> list[Box2D]:
    return [
        Box2D(rng.uniform(0, 640), rng.uniform(0, 480), rng.uniform(10, 200), rng.uniform(10, 200), int(rng.integers(n_classes)))
        for _ in range(n)
    ]


def check_relatedness(n_scenes: int, seed: int = 0) -> CheckResult:
    """Column sums of the relatedness matrix, plus shift / scale invariance of the pair descriptor."""
    from .pipeline import label_table
    from .relatedness import augmented_geometry, default_geometry_weights

    rng = np.random.default_rng(seed)
    table = label_table()
    w = default_geometry_weights()
    worst, worst_scale = 0.0, 0.0
    for _ in range(n_scenes):
        boxes = random_boxes_2d(rng, int(rng.integers(2, 9)))
        m = relatedness_matrix(boxes, table, w)
        cols = m.scores.sum(axis=0)
        active = (m.geometry_w > 0).any(axis=0)
        worst = max(worst, float(np.abs(cols[active] - 1.0).max(initial=0.0)))
        # pixel-grid boxes and shifts keep the coordinate differences exact
        grid = [Box2D(round(b.x * 2) / 2, round(b.y * 2) / 2, b.w, b.h, b.class_id) for b in boxes]
        dx, dy = (float(v) for v in rng.integers(-300, 300, 2))
        shifted = [Box2D(b.x + dx, b.y + dy, b.w, b.h, b.class_id) for b in grid]
        if not np.array_equal(relatedness_matrix(shifted, table, w).scores, relatedness_matrix(grid, table, w).scores):
            return CheckResult("relatedness_columns", False, f"shift ({dx}, {dy}) changed scores of {boxes}")
        lam = rng.uniform(0.2, 5.0)
        scaled = [Box2D(b.x * lam, b.y * lam, b.w * lam, b.h * lam, b.class_id) for b in boxes]
        for a, b, sa, sb in zip(boxes, boxes[1:], scaled, scaled[1:]):
            diff = np.abs(augmented_geometry(a, b) - augmented_geometry(sa, sb)).max()
            worst_scale = max(worst_scale, float(diff))
    ok = worst <= 1e-9 and worst_scale <= 1e-12
    return CheckResult(
        "relatedness_columns", ok, f"{n_scenes} scenes, max |col sum - 1| {worst:.1e}, scale drift {worst_scale:.1e}"
    )


def run_checks(level: str = "fast", seed: int = 0) -> list[CheckResult]:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    fast = level == "fast"
    plan = [
        lambda: check_op_gradients(3 if fast else 20, seed),
        lambda: check_gru_gradients(seed),
        lambda: check_pipeline_gradients(seed),
        lambda: check_iou(20 if fast else 500, 200_000 if fast else 1_000_000, seed),
        lambda: check_clustering(8, 60 if fast else 1000, seed, 3 if fast else 4),
        lambda: check_transforms(200 if fast else 1000, seed),
        lambda: check_relatedness(100 if fast else 1000, seed),
    ]
    out = []
    for fn in plan:
        t0 = time.perf_counter()
        try:
            r = fn()
        except Exception as e:  # report, keep going
            r = CheckResult(getattr(fn, "__name__", "check"), False, f"raised {type(e).__name__}: {e}")
        r.seconds = time.perf_counter() - t0
        out.append(r)
    return out
