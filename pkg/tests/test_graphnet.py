import numpy as np
import pytest

from relgraph3d import diffcore as dc
from relgraph3d.graphnet import (
    GraphBatch,
    GraphError,
    IterationTrace,
    add_graph_params,
    aggregate,
    aggregate_sequence,
    gru_params,
    init_nodes,
    init_pairs,
    message,
    pair_feature,
    pair_feature_dim,
    run_iterations,
    snapshot_hash,
    update_node,
)
from relgraph3d.relatedness import Box2D, SparseSceneGraph
from relgraph3d.verify import numeric_grad, rel_error

D = 8
FEAT, PAIR = 5, 6


def make_store(seed=0, d=D):
    store = dc.ParamStore()
    add_graph_params(store, FEAT, PAIR, d, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for _, t in store:
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    return store


def star_batch():
    # three sources into node 0 with distinct scores, plus 0 -> 3
    return GraphBatch.from_edges(4, [(1, 0, 0.2), (2, 0, 0.5), (3, 0, 0.3), (0, 3, 1.0)])


def test_schedule_lowest_first_and_right_aligned():
    b = star_batch()
    assert b.steps.shape == (3, 4)
    # node 0 consumes 0.2, 0.3, 0.5 in that order
    assert [b.rbar[e] for e in b.steps[:, 0]] == [0.2, 0.3, 0.5]
    # node 3 has one message, placed at the last step
    assert b.masks[:, 3].tolist() == [False, False, True]
    assert not b.masks[:, 1].any()


def test_self_edges_rejected():
    with pytest.raises(GraphError):
        GraphBatch.from_edges(2, [(1, 1, 1.0)])


def test_stack_offsets_nodes():
    g1 = SparseSceneGraph(2, [(0, 1, 1.0), (1, 0, 1.0)])
    g2 = SparseSceneGraph(3, [(2, 0, 1.0)])
    batch, groups = GraphBatch.stack([g1, g2])
    assert batch.n_nodes == 5
    assert groups.tolist() == [0, 0, 1, 1, 1]
    assert (4, 2) in set(zip(batch.src.tolist(), batch.tgt.tolist()))


def test_pair_feature_layout():
    a, b = Box2D(100, 100, 40, 20, 2), Box2D(160, 120, 20, 40, 5)
    f = pair_feature(a, b, 10)
    assert f.shape == (pair_feature_dim(10),)
    assert f[10 + 2] == 1.0 and f[20 + 5] == 1.0
    assert not np.array_equal(f, pair_feature(b, a, 10))


def test_init_nodes_shapes_and_empty():
    store = make_store()
    assert init_nodes(np.ones((3, FEAT)), store).shape == (3, D)
    assert init_nodes(np.zeros((0, FEAT)), store).shape == (0, D)


def test_init_nodes_zero_weights_gives_bias_path():
    store = make_store()
    for name in ("obj0", "obj1", "obj2"):
        store[f"gnn.{name}.w"].data[:] = 0.0
    out = init_nodes(np.zeros((2, FEAT)), store)
    np.testing.assert_array_equal(out.data[0], store["gnn.obj2.b"].data)


def test_init_pairs_directional_and_checked():
    store = dc.ParamStore()
    add_graph_params(store, FEAT, pair_feature_dim(10), D, np.random.default_rng(0))
    batch = GraphBatch.from_edges(2, [(0, 1, 1.0), (1, 0, 1.0)])
    a, b = Box2D(100, 100, 40, 20, 2), Box2D(160, 120, 20, 40, 5)
    feats = np.stack([pair_feature(a, b, 10), pair_feature(b, a, 10)])
    p = init_pairs(batch, feats, store)
    assert p.shape == (2, D)
    assert not np.allclose(p.data[0], p.data[1])
    with pytest.raises(GraphError):
        init_pairs(batch, feats[:1], store)
    assert init_pairs(GraphBatch.from_edges(2, []), np.zeros((0, feats.shape[1])), store).shape == (0, D)


def test_message_reduces_to_concat_without_wv():
    store = make_store()
    store["gnn.wv.w"].data[:] = 0.0
    rng = np.random.default_rng(1)
    oi, oj, p = (dc.Tensor(rng.normal(size=(1, D))) for _ in range(3))
    m = message(oi, oj, p, store)
    from relgraph3d.graphnet import mlp

    expect = np.concatenate([mlp(oi, store, "gnn.phi", 2).data, mlp(oj, store, "gnn.psi", 2).data], axis=-1)
    np.testing.assert_allclose(m.data, expect)


def test_message_is_pair_with_zero_nets_and_identity_wv():
    store = make_store()
    for net in ("phi", "psi"):
        for layer in (0, 1):
            store[f"gnn.{net}{layer}.w"].data[:] = 0.0
            store[f"gnn.{net}{layer}.b"].data[:] = 0.0
    store["gnn.wv.w"].data = np.eye(D)
    p = dc.Tensor(np.arange(D, dtype=float)[None])
    m = message(dc.Tensor(np.ones((1, D))), dc.Tensor(np.ones((1, D))), p, store)
    np.testing.assert_array_equal(m.data, p.data)


def test_message_gradients():
    store = make_store()
    rng = np.random.default_rng(2)
    xs = [dc.parameter(rng.normal(size=(2, D))) for _ in range(3)]
    out = lambda: (message(xs[0], xs[1], xs[2], store) ** 2).sum()  # noqa: E731
    dc.backward(out())
    for t in xs + [store["gnn.wv.w"]]:
        num = numeric_grad(lambda: float(out().data), t.data)
        assert rel_error(t.grad, num) <= 1e-4


def test_aggregate_isolated_and_single():
    store = make_store()
    rng = np.random.default_rng(3)
    batch = GraphBatch.from_edges(3, [(0, 1, 1.0)])
    msgs = dc.Tensor(rng.normal(size=(1, D)))
    h = aggregate(msgs, batch, store)
    assert not h.data[0].any() and not h.data[2].any()
    single = dc.gru_step(np.zeros(D), msgs.data[0], gru_params(store, "gnn.gru"))
    np.testing.assert_allclose(h.data[1], single.data, atol=1e-14)


def test_aggregate_matches_sequential_reference():
    store = make_store()
    rng = np.random.default_rng(4)
    batch = star_batch()
    msgs = dc.Tensor(rng.normal(size=(batch.n_edges, D)))
    h = aggregate(msgs, batch, store)
    order = sorted(range(3), key=lambda e: -batch.rbar[e])
    ref = aggregate_sequence([msgs.data[e] for e in order], store)
    np.testing.assert_allclose(h.data[0], ref.data, atol=1e-14)


def test_aggregate_permutation_oracle():
    store = make_store()
    rng = np.random.default_rng(5)
    edges = [(1, 0, 0.2), (2, 0, 0.5), (3, 0, 0.3), (4, 0, 0.05)]
    msgs = {e: rng.normal(size=D) for e in edges}
    results = []
    for perm in ([0, 1, 2, 3], [3, 1, 0, 2], [2, 3, 1, 0]):
        es = [edges[p] for p in perm]
        batch = GraphBatch.from_edges(5, es)
        results.append(aggregate(dc.Tensor(np.stack([msgs[e] for e in es])), batch, store).data[0])
    assert np.array_equal(results[0], results[1]) and np.array_equal(results[0], results[2])


def test_update_node_shapes_and_isolated_change():
    store = make_store()
    o = dc.Tensor(np.random.default_rng(6).normal(size=(2, D)))
    out = update_node(o, dc.Tensor(np.zeros((2, D))), store)
    assert out.shape == (2, D)
    assert not np.allclose(out.data, o.data)
    with pytest.raises(GraphError):
        update_node(o, dc.Tensor(np.zeros((2, D + 2))), store)


def test_update_node_gradients_reach_both_inputs():
    store = make_store()
    rng = np.random.default_rng(7)
    o, h = dc.parameter(rng.normal(size=(2, D))), dc.parameter(rng.normal(size=(2, D)))
    out = lambda: (update_node(o, h, store) ** 2).sum()  # noqa: E731
    dc.backward(out())
    for t in (o, h):
        assert np.abs(t.grad).max() > 0
        assert rel_error(t.grad, numeric_grad(lambda: float(out().data), t.data)) <= 1e-4


def _setup(seed=0):
    store = make_store(seed)
    rng = np.random.default_rng(seed + 9)
    batch = star_batch()
    nodes = init_nodes(rng.normal(size=(4, FEAT)), store)
    pairs = init_pairs(batch, rng.normal(size=(batch.n_edges, PAIR)), store)
    return store, batch, nodes, pairs


def test_run_iterations_single_step_matches_manual():
    store, batch, nodes, pairs = _setup()
    out, msgs = run_iterations(batch, nodes, pairs, store, t_iter=1)
    m = message(nodes[batch.src], nodes[batch.tgt], pairs, store)
    np.testing.assert_array_equal(msgs.data, m.data)
    np.testing.assert_array_equal(out.data, update_node(nodes, aggregate(m, batch, store), store).data)


def test_run_iterations_two_steps_differ_from_one():
    store, batch, nodes, pairs = _setup()
    one, _ = run_iterations(batch, nodes, pairs, store, t_iter=1)
    two, msgs2 = run_iterations(batch, nodes, pairs, store, t_iter=2)
    assert not np.allclose(one.data, two.data)
    # returned messages are computed from the nodes before the final update
    np.testing.assert_array_equal(msgs2.data, message(one[batch.src], one[batch.tgt], pairs, store).data)


def test_run_iterations_synchronous_snapshots():
    store, batch, nodes, pairs = _setup()
    pairs_before = pairs.data.copy()
    trace = IterationTrace()
    run_iterations(batch, nodes, pairs, store, t_iter=3, trace=trace)
    assert trace.consumed[0] == snapshot_hash(nodes)
    assert trace.consumed[1:] == trace.produced[:-1]
    np.testing.assert_array_equal(pairs.data, pairs_before)


def test_run_iterations_empty_graph_and_bad_t():
    store = make_store()
    nodes = init_nodes(np.ones((1, FEAT)), store)
    batch = GraphBatch.from_edges(1, [])
    out, msgs = run_iterations(batch, nodes, init_pairs(batch, np.zeros((0, PAIR)), store), store)
    assert out.shape == (1, D) and msgs.shape == (0, D)
    with pytest.raises(GraphError):
        run_iterations(batch, nodes, None, store, t_iter=0)


def test_odd_width_rejected():
    with pytest.raises(GraphError):
        add_graph_params(dc.ParamStore(), FEAT, PAIR, 7, np.random.default_rng(0))


def test_end_to_end_gradients_every_parameter():
    store, batch, nodes, pairs = _setup(1)
    rng = np.random.default_rng(11)
    feats, pfeats = rng.normal(size=(4, FEAT)), rng.normal(size=(batch.n_edges, PAIR))

    def loss():
        n = init_nodes(feats, store)
        p = init_pairs(batch, pfeats, store)
        out, msgs = run_iterations(batch, n, p, store, t_iter=2)
        return (out**2).sum() + (msgs**2).sum() * 0.1

    store.zero_grad()
    dc.backward(loss())
    for name, t in store:
        idx = tuple(int(rng.integers(s)) for s in t.shape)
        old = t.data[idx]
        t.data[idx] = old + 1e-5
        fp = float(loss().data)
        t.data[idx] = old - 1e-5
        fm = float(loss().data)
        t.data[idx] = old
        assert rel_error(t.grad[idx], (fp - fm) / 2e-5) <= 1e-3, name
