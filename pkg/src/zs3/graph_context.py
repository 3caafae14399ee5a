"""Graph-context generator over component adjacency graphs of label maps.

Each node is a 4-connected (or 8-connected) single-class region; two nodes
are linked when their regions touch. The generator is the GMMN MLP with both
affine layers replaced by graph convolutions ``A_norm @ H @ W + b``.
"""
from dataclasses import dataclass, field

import numpy as np

from zs3.errors import ConfigError, DimensionError
from zs3.gmmn import mmd_loss
from zs3.kernels import component_edges, label_components
from zs3.tensor_core import Dropout, LeakyReLU, Optimizer, Parameter


@dataclass
class ComponentGraph:
    node_class: np.ndarray  # (V,) class id per node
    components: np.ndarray  # (M, N) node id per pixel
    edges: np.ndarray  # (E, 2) with i < j
    embeddings: np.ndarray = None  # (V, d_a)

    @property
    def n_nodes(self):
        return len(self.node_class)

    def pixel_lists(self):
        flat = self.components.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.n_nodes + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_nodes)]

    def adjacency(self):
        a = np.zeros((self.n_nodes, self.n_nodes))
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a


def extract_component_graph(labelmap, embeddings=None, connectivity=4):
    labelmap = np.asarray(labelmap)
    comp, n = label_components(labelmap, connectivity)
    first = np.unique(comp.ravel(), return_index=True)[1]
    node_class = labelmap.ravel()[first].astype(np.int64)
    edges = component_edges(comp, n, connectivity)
    emb = None if embeddings is None else embeddings.vectors[node_class]
    return ComponentGraph(node_class, comp, edges, emb)


def normalize_adjacency(graph_or_adj):
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a = graph_or_adj.adjacency() if isinstance(graph_or_adj, ComponentGraph) else np.asarray(graph_or_adj, float)
    a_hat = a + np.eye(len(a))
    deg = a_hat.sum(axis=1)
    # one sqrt per entry keeps the result exactly symmetric and exact for equal degrees
    return a_hat / np.sqrt(deg[:, None] * deg[None, :])


def block_diag(mats):
    n = sum(len(m) for m in mats)
    out = np.zeros((n, n))
    i = 0
    for m in mats:
        out[i:i + len(m), i:i + len(m)] = m
        i += len(m)
    return out


class GraphConv:
    """``out = adj @ h @ W + b``."""

    def __init__(self, n_in, n_out, rng=None, name="gc"):
        w = np.zeros((n_in, n_out)) if rng is None else rng.normal((n_in, n_out)) / np.sqrt(n_in)
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros((1, n_out)), f"{name}.bias")
        self._adj = None
        self._ah = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, adj, h):
        if adj.shape != (len(h), len(h)) or h.shape[1] != self.weight.value.shape[0]:
            raise DimensionError(f"graph conv got adjacency {adj.shape} and input {h.shape}")
        self._adj = adj
        self._ah = adj @ h
        return self._ah @ self.weight.value + self.bias.value

    def backward(self, gout):
        self.weight.grad += self._ah.T @ gout
        self.bias.grad += gout.sum(axis=0, keepdims=True)
        return self._adj.T @ (gout @ self.weight.value.T)


class GraphGenerator:
    """Two graph-convolution layers mirroring :class:`zs3.gmmn.GmmnMlp`."""

    kind = 1

    def __init__(self, embed_dim, feature_dim, hidden=256, noise_dim=None, slope=0.2,
                 dropout=0.5, rng=None):
        self.embed_dim = embed_dim
        self.noise_dim = embed_dim if noise_dim is None else noise_dim
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.gc1 = GraphConv(self.embed_dim + self.noise_dim, hidden, rng, "gc1")
        self.act = LeakyReLU(slope)
        self.drop = Dropout(dropout)
        self.gc2 = GraphConv(hidden, feature_dim, rng, "gc2")

    @property
    def slope(self):
        return self.act.slope

    def parameters(self):
        return self.gc1.parameters() + self.gc2.parameters()

    def forward(self, adj, a, z, rng=None, training=False):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if len(a) != len(z) or len(a) != len(adj):
            raise DimensionError(f"{len(adj)} nodes but {len(a)} embeddings and {len(z)} noise rows")
        if a.shape[1] != self.embed_dim or z.shape[1] != self.noise_dim:
            raise DimensionError(
                f"expected embeddings of width {self.embed_dim} and noise of width {self.noise_dim}")
        h = self.act.forward(self.gc1.forward(adj, np.hstack([a, z])))
        h = self.drop.forward(h, rng, training)
        return self.gc2.forward(adj, h)

    def backward(self, gout):
        g = self.drop.backward(self.gc2.backward(gout))
        return self.gc1.backward(self.act.backward(g))


def graph_generator_forward(gen, graph, z, rng=None, training=False):
    return gen.forward(normalize_adjacency(graph), graph.embeddings, z, rng, training)


@dataclass
class SceneGraph:
    """A component graph with its normalized adjacency and, for training scenes, the
    real pixel features grouped by node."""

    node_class: np.ndarray
    adj: np.ndarray
    features: np.ndarray = None  # (P, d_x) pixel features of the scene
    order: np.ndarray = None  # pixel indices sorted by node
    bounds: np.ndarray = None  # node v owns order[bounds[v]:bounds[v + 1]]
    _means: np.ndarray = field(default=None, repr=False)

    def mean_targets(self):
        """Mean real feature of every node's region."""
        if self._means is None:
            counts = np.diff(self.bounds)
            sums = np.add.reduceat(self.features[self.order].astype(np.float64), self.bounds[:-1], axis=0)
            self._means = sums / counts[:, None]
        return self._means

    def sample_targets(self, rng):
        """One real pixel feature per node, drawn uniformly from the node's region."""
        counts = np.diff(self.bounds)
        pick = self.bounds[:-1] + np.floor(rng.uniform(size=len(counts)) * counts).astype(np.int64)
        return self.features[self.order[pick]].astype(np.float64)


def scene_graphs(labels, features=None, connectivity=4):
    out = []
    for i in range(len(labels)):
        g = extract_component_graph(labels[i], connectivity=connectivity)
        sg = SceneGraph(g.node_class, normalize_adjacency(g))
        if features is not None:
            flat = g.components.ravel()
            sg.features = features[i].reshape(-1, features.shape[-1])
            sg.order = np.argsort(flat, kind="stable")
            sg.bounds = np.searchsorted(flat[sg.order], np.arange(g.n_nodes + 1))
        out.append(sg)
    return out


def graph_batch_loss(gen, graphs, embeddings, bandwidths, rng, training=True, target="mean"):
    """Forward a batch of graphs as one block-diagonal graph; sum of per-class MMDs.

    Real node features are region means (``target="mean"``) or one random
    pixel per region (``target="pixel"``).

    Returns ``(loss, grad w.r.t. generated node features)``.
    """
    adj = block_diag([g.adj for g in graphs])
    cls = np.concatenate([g.node_class for g in graphs])
    if target == "mean":
        real = np.concatenate([g.mean_targets() for g in graphs])
    elif target == "pixel":
        real = np.concatenate([g.sample_targets(rng) for g in graphs])
    else:
        raise ConfigError(f"unknown graph target {target!r}")
    z = rng.normal((len(cls), gen.noise_dim))
    fake = gen.forward(adj, embeddings.vectors[cls], z, rng, training)
    grad = np.zeros_like(fake)
    loss = 0.0
    for c in np.unique(cls):
        rows = np.flatnonzero(cls == c)
        l, g = mmd_loss(real[rows], fake[rows], bandwidths)
        loss += l
        grad[rows] += g
    return loss, grad


def train_graph_generator(gen, graphs, embeddings, config, rng, unseen=()):
    """Adam on the summed per-class MMD between real and generated node features.

    ``graphs`` come from :func:`scene_graphs` with real features attached; any
    node of an ``unseen`` class is a configuration error.
    """
    config.validate()
    if not graphs:
        raise ConfigError("no training scenes for the graph generator")
    unseen = set(int(c) for c in unseen)
    for i, g in enumerate(graphs):
        bad = unseen & set(g.node_class.tolist())
        if bad:
            raise ConfigError(f"training scene {i} contains unseen class(es) {sorted(bad)}")
        if g.features is None:
            raise ConfigError(f"training scene {i} has no real pixel features")
    opt = Optimizer(gen.parameters(), "adam", lr=config.lr, weight_decay=config.weight_decay)
    per_step = min(config.graph_scenes_per_step, len(graphs))
    trace = []
    for _ in range(config.iterations):
        picks = rng.choice(len(graphs), per_step, replace=False)
        opt.zero_grad()
        loss, g = graph_batch_loss(gen, [graphs[i] for i in picks], embeddings, config.bandwidths, rng,
                                   target=config.graph_target)
        gen.backward(g)
        opt.step()
        trace.append(loss)
    return trace


def sample_graph_synthetic(gen, masks, classes, n, embeddings, rng, connectivity=4, max_passes=1000):
    """``n`` generated node features per class in ``classes``, read off structure-only masks.

    Masks are cycled with fresh noise until every class has ``n`` features.
    """
    classes = [int(c) for c in classes]
    graphs = [g for g in scene_graphs(masks, None, connectivity)
              if set(classes) & set(g.node_class.tolist())]
    missing = [c for c in classes if not any(c in g.node_class for g in graphs)]
    if missing:
        raise ConfigError(f"no structure mask contains class(es) {missing}")
    got = {c: [] for c in classes}
    counts = dict.fromkeys(classes, 0)
    for _ in range(max_passes):
        for g in graphs:
            z = rng.normal((len(g.node_class), gen.noise_dim))
            out = gen.forward(g.adj, embeddings.vectors[g.node_class], z, rng, training=False)
            for c in classes:
                if counts[c] < n:
                    rows = out[g.node_class == c][: n - counts[c]]
                    got[c].append(rows)
                    counts[c] += len(rows)
        if all(counts[c] >= n for c in classes):
            break
    xs = np.concatenate([np.concatenate(got[c]) for c in classes])
    ys = np.concatenate([np.full(n, c, dtype=np.int64) for c in classes])
    return xs, ys
