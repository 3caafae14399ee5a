"""ZS3 / ZS5 orchestration, the embedding-regression baseline and zero-shot cross-validation."""
import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from zs3.classifier import (ClassifierTrainConfig, LinearPixelClassifier, finetune_classifier,
                            logits, predict, predict_scores)
from zs3.embeddings import ClassCatalog, ClassEmbeddingTable, cosine_nearest_batch
from zs3.errors import ConfigError, DataError
from zs3.gmmn import GeneratorConfig, GmmnMlp, class_pools, sample_synthetic, train_generator
from zs3.graph_context import (GraphGenerator, sample_graph_synthetic, scene_graphs,
                               train_graph_generator)
from zs3.metrics import evaluate
from zs3.scene_data import (Dataset, SplitConfig, WorldConfig, ZslData, check_seen_only,
                            render_scene)
from zs3.tensor_core import Affine, Optimizer, PolyLrSchedule, RngStream, cosine_loss, poly_lr, softmax


@dataclass
class Zs3RunConfig:
    """Everything a ZS3 / ZS5 run depends on besides the data and the embeddings."""

    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    n_synthetic: int = 500
    p: float = 0.25
    rounds: int = 1
    graph_context: bool = False
    connectivity: int = 4
    n_structure_masks: int = 200
    world: WorldConfig = field(default_factory=WorldConfig)

    def validate(self):
        self.generator.validate()
        self.classifier.validate()
        if self.n_synthetic < 0:
            raise ConfigError("n_synthetic must be >= 0")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.n_structure_masks < 1:
            raise ConfigError("n_structure_masks must be >= 1")
        self.world.validate()


@dataclass
class Zs3Result:
    classifier: LinearPixelClassifier
    generator: object  # GmmnMlp, GraphGenerator or None for the seen-only ablation
    report: object  # EvalReport
    seen_set: tuple  # (features, labels) of real seen pixels
    synthetic_set: tuple  # (features, labels) of generated unseen pixels
    generator_trace: list = field(default_factory=list)
    classifier_trace: list = field(default_factory=list)


def pipeline_streams(seed):
    """Named child streams of one root seed."""
    root = RngStream(seed, "pipeline")
    return {n: root.child(n) for n in ("generator", "classifier", "selftrain", "baseline")}


def _check_embeddings(data, embeddings):
    if len(embeddings.catalog) != data.split.n_classes:
        raise ConfigError(f"split has {data.split.n_classes} classes but the embedding table {len(embeddings.catalog)}")
    if embeddings.dim < 1:
        raise ConfigError("empty embeddings")


def train_zs3_generator(config, data, embeddings, rng):
    """Fit the feature generator on seen-class training pixels only."""
    split = data.split
    check_seen_only(data.train, split)
    d_a, d_x = embeddings.dim, data.train.feature_dim
    g = config.generator
    if config.graph_context:
        gen = GraphGenerator(d_a, d_x, g.hidden, None, g.slope, g.dropout, rng.child("init"))
        graphs = scene_graphs(data.train.labels, data.train.features, config.connectivity)
        trace = train_graph_generator(gen, graphs, embeddings, g, rng, split.unseen)
    else:
        gen = GmmnMlp(d_a, d_x, g.hidden, None, g.slope, g.dropout, rng.child("init"))
        x, y = data.train.flat()
        present = sorted(set(np.unique(y).tolist()))
        trace = train_generator(gen, class_pools(x, y, present), embeddings, g, rng)
    return gen, trace


def structure_masks(world_config, classes, n, seed, background=0):
    """Fresh label maps (no features) used to place unseen classes in a graph context."""
    holder = _Geometry(world_config)
    root = RngStream(seed, "masks")
    return np.stack([render_scene(holder, classes, int(root.integers(0, 2**62)), background)
                     for _ in range(n)])


@dataclass
class _Geometry:
    config: WorldConfig


def generate_unseen(gen, config, split, embeddings, rng, background=0):
    """``n_synthetic`` generated features for each unseen class."""
    unseen = list(split.unseen)
    if not unseen or config.n_synthetic == 0:
        return np.zeros((0, gen.feature_dim)), np.zeros(0, dtype=np.int64)
    if isinstance(gen, GraphGenerator):
        stampable = [c for c in range(split.n_classes) if c != background]
        masks = structure_masks(config.world, stampable, config.n_structure_masks,
                                int(rng.child("masks").integers(0, 2**62)), background)
        return sample_graph_synthetic(gen, masks, unseen, config.n_synthetic, embeddings, rng,
                                      config.connectivity)
    xs, ys = [], []
    for c in unseen:
        x, y, _ = sample_synthetic(gen, c, config.n_synthetic, embeddings, rng)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def finetune_stage(config, data, embeddings, gen=None, seen_only=False):
    """Sample the synthetic unseen set from ``gen`` and fine-tune a fresh classifier.

    Returns ``(classifier, seen_set, synthetic_set, loss trace)``.
    """
    config.validate()
    _check_embeddings(data, embeddings)
    split = data.split
    check_seen_only(data.train, split)
    rngs = pipeline_streams(config.seed)
    d_x = data.train.feature_dim
    if split.unseen and not seen_only:
        if gen is None:
            raise ConfigError("a generator is needed to synthesize unseen features")
        if gen.feature_dim != d_x or gen.embed_dim != embeddings.dim:
            raise ConfigError(f"generator dims ({gen.embed_dim} -> {gen.feature_dim}) do not match "
                              f"embeddings ({embeddings.dim}) and features ({d_x})")
        bg = embeddings.catalog.background
        synth = generate_unseen(gen, config, split, embeddings, rngs["generator"].child("sample"),
                                0 if bg is None else bg)
    else:
        synth = (np.zeros((0, d_x)), np.zeros(0, dtype=np.int64))
    seen_set = data.train.flat()
    clf = LinearPixelClassifier(split.n_classes, d_x, rngs["classifier"].child("init"))
    res = finetune_classifier(clf, seen_set, synth, config.classifier, rngs["classifier"], split,
                              allow_empty_synthetic=seen_only)
    return clf, seen_set, synth, res.trace


def evaluate_classifier(clf, dataset, split, class_names=(), mode="generalized"):
    x, y = dataset.flat()
    return evaluate(predict(clf, x, mode, split.unseen), y, split, class_names)


def run_zs3(config, data, embeddings, seen_only=False, class_names=()):
    """Generator on seen pixels, synthetic unseen features, classifier fine-tuning, evaluation.

    ``seen_only`` skips generation entirely (the ablation with an empty synthetic set).
    """
    config.validate()
    _check_embeddings(data, embeddings)
    gen, gtrace = None, []
    if data.split.unseen and not seen_only:
        gen, gtrace = train_zs3_generator(config, data, embeddings, pipeline_streams(config.seed)["generator"])
    clf, seen_set, synth, ctrace = finetune_stage(config, data, embeddings, gen, seen_only)
    report = evaluate_classifier(clf, data.test, data.split, class_names)
    return Zs3Result(clf, gen, report, seen_set, synth, gtrace, ctrace)


def supervised_oracle(config, data, class_names=()):
    """Classifier trained on every class with the pipeline's classifier stream."""
    config.validate()
    split = data.split
    full = SplitConfig(k=0, unseen=(), seed=split.seed, n_classes=split.n_classes)
    rngs = pipeline_streams(config.seed)
    clf = LinearPixelClassifier(split.n_classes, data.train.feature_dim, rngs["classifier"].child("init"))
    empty = (np.zeros((0, data.train.feature_dim)), np.zeros(0, dtype=np.int64))
    finetune_classifier(clf, data.train.flat(), empty, config.classifier, rngs["classifier"], full)
    return clf, evaluate_classifier(clf, data.test, full, class_names)


# -- self-training ---------------------------------------------------------------

@dataclass
class PseudoLabelSet:
    """Per scene: flat pixel indices, unseen pseudo-classes and their confidences."""

    pixels: list
    classes: list
    confidence: list

    def __len__(self):
        return int(sum(len(p) for p in self.pixels))

    def gather(self, features):
        """Real features and pseudo-labels of all selected pixels."""
        d = features.shape[-1]
        xs = [features[i].reshape(-1, d)[p].astype(np.float64) for i, p in enumerate(self.pixels)]
        ys = list(self.classes)
        if not xs:
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64)
        return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


def select_pseudo_labels(clf, features, split, p):
    """Per scene, keep the top ``ceil(p * count)`` pixels whose generalized argmax is unseen.

    Confidence is the softmax probability of the argmax class; ties keep the
    lower pixel index first.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must lie in [0, 1], got {p}")
    features = np.asarray(features)
    d = features.shape[-1]
    unseen = np.asarray(split.unseen, dtype=np.int64)
    pixels, classes, conf = [], [], []
    for scene in features:
        scores = logits(clf, scene.reshape(-1, d))
        pred = predict_scores(scores)
        prob = softmax(scores)[np.arange(len(pred)), pred]
        cand = np.flatnonzero(np.isin(pred, unseen))
        keep = math.ceil(p * len(cand))
        order = np.lexsort((cand, -prob[cand]))[:keep]
        sel = cand[order]
        pixels.append(sel)
        classes.append(pred[sel])
        conf.append(prob[sel])
    return PseudoLabelSet(pixels, classes, conf)


def run_zs5(config, data, embeddings, zs3=None, class_names=()):
    """Self-training: pseudo-label the unlabeled pool, add those pixels, retrain the classifier.

    Returns ``(classifier, report, pseudo_sets)``. With an empty pseudo set the
    ZS3 classifier and report are returned unchanged.
    """
    if zs3 is None:
        zs3 = run_zs3(config, data, embeddings, class_names=class_names)
    split = data.split
    if config.p == 0 or not split.unseen:
        if split.unseen:
            warnings.warn("p = 0 selects no pseudo-labels; returning the ZS3 result")
        return zs3.classifier, zs3.report, []
    rng = pipeline_streams(config.seed)["selftrain"]
    clf = zs3.classifier
    report = zs3.report
    sets = []
    for r in range(config.rounds):
        pls = select_pseudo_labels(clf, data.pool.features, split, config.p)
        sets.append(pls)
        if len(pls) == 0:
            warnings.warn("no pool pixel was predicted unseen; returning the previous result")
            break
        pseudo = pls.gather(data.pool.features)
        stream = rng.child(f"round{r}")
        clf = LinearPixelClassifier(split.n_classes, data.train.feature_dim, stream.child("init"))
        finetune_classifier(clf, zs3.seen_set, zs3.synthetic_set, config.classifier, stream, split,
                            pseudo_set=pseudo)
        report = evaluate_classifier(clf, data.test, split, class_names)
    return clf, report, sets


def p_sweep(config, data, embeddings, ps, zs3=None, class_names=()):
    """One ZS5 report per ``p``; the ZS3 run is shared."""
    if zs3 is None:
        zs3 = run_zs3(config, data, embeddings, class_names=class_names)
    out = []
    for p in ps:
        cfg = dataclasses.replace(config, p=float(p))
        out.append((float(p), run_zs5(cfg, data, embeddings, zs3, class_names)[1]))
    return out


# -- embedding-regression baseline ---------------------------------------------------

@dataclass
class DeviseBaseline:
    projection: Affine
    embeddings: ClassEmbeddingTable
    trace: list

    def predict(self, features, mode="generalized", unseen=()):
        out = self.projection.forward(np.asarray(features, dtype=np.float64))
        if mode == "generalized":
            return cosine_nearest_batch(self.embeddings, out)
        if mode != "vanilla":
            raise ConfigError(f"unknown prediction mode {mode!r}")
        return cosine_nearest_batch(self.embeddings, out, restrict=list(unseen))


def train_devise_baseline(seen_set, embeddings, config, rng, split=None):
    """Linear map features -> embedding space trained with ``1 - cos`` on seen pixels.

    Batches are drawn uniformly over pixels, so classes appear with their
    natural frequency.
    """
    if not embeddings.normalized:
        raise ConfigError("the baseline needs normalized embeddings")
    config.validate()
    x, y = seen_set
    x = np.asarray(x, dtype=np.float64)
    if len(y) == 0:
        raise DataError("no seen-class training features")
    if split is not None and split.unseen and split.is_unseen(y).any():
        raise DataError("baseline supervision contains unseen pixels")
    proj = Affine(x.shape[1], embeddings.dim, rng.child("init"), "proj")
    opt = Optimizer(proj.parameters(), "sgd_momentum", lr=config.lr, momentum=config.momentum,
                    weight_decay=config.weight_decay)
    schedule = PolyLrSchedule(config.lr, config.iterations, config.power)
    trace = []
    for it in range(config.iterations):
        idx = rng.integers(0, len(y), size=config.batch_size)
        opt.zero_grad()
        loss, g = cosine_loss(proj.forward(x[idx]), embeddings.vectors[y[idx]])
        proj.backward(g)
        lr = poly_lr(schedule, it)
        if lr > 0:
            opt.step(lr)
        trace.append(loss)
    return DeviseBaseline(proj, embeddings, trace)


def run_baseline(config, data, embeddings, class_names=()):
    _check_embeddings(data, embeddings)
    check_seen_only(data.train, data.split)
    table = embeddings if embeddings.normalized else embeddings.normalize()
    model = train_devise_baseline(data.train.flat(), table, config.classifier,
                                  pipeline_streams(config.seed)["baseline"], data.split)
    x, y = data.test.flat()
    return model, evaluate(model.predict(x), y, data.split, class_names)


# -- zero-shot cross-validation ------------------------------------------------------

def apply_overrides(config, point):
    """Copy of ``config`` with ``{"generator.lr": ..., "n_synthetic": ...}`` style overrides."""
    out = config
    for key, value in point.items():
        head, _, leaf = key.partition(".")
        if leaf:
            sub = getattr(out, head, None)
            if not dataclasses.is_dataclass(sub) or leaf not in {f.name for f in dataclasses.fields(sub)}:
                raise ConfigError(f"unknown grid key {key!r}")
            if leaf == "bandwidths":
                value = tuple(float(v) for v in value)
            out = dataclasses.replace(out, **{head: dataclasses.replace(sub, **{leaf: value})})
        else:
            if head not in {f.name for f in dataclasses.fields(out)}:
                raise ConfigError(f"unknown grid key {key!r}")
            out = dataclasses.replace(out, **{head: value})
    out.validate()
    return out


def _point_key(point):
    return json.dumps(point, sort_keys=True)


def cv_holdout(split, background, seed):
    """Seen classes playing unseen during cross-validation: ``ceil(|S| / 4)`` of them."""
    seen = list(split.seen)
    if len(seen) < 4:
        raise ConfigError(f"cross-validation needs at least 4 seen classes, have {len(seen)}")
    candidates = [c for c in seen if c != background]
    n = math.ceil(len(seen) / 4)
    perm = RngStream(seed, "cv").permutation(len(candidates))
    return tuple(sorted(int(candidates[i]) for i in perm[:n]))


def cv_problem(data, embeddings, seed):
    """Restate the training data as a zero-shot problem over the seen classes only.

    Classes are renumbered to the seen sub-catalog; scenes containing a held-out
    class become validation scenes and the rest stay training scenes.
    """
    split = data.split
    bg = embeddings.catalog.background or 0
    seen = list(split.seen)
    held = cv_holdout(split, bg, seed)
    remap = np.full(split.n_classes, -1, dtype=np.int64)
    remap[seen] = np.arange(len(seen))
    labels = remap[data.train.labels]
    if (labels < 0).any():
        raise DataError("training scenes contain unseen classes")
    catalog = ClassCatalog(tuple(embeddings.catalog.names[c] for c in seen),
                           background=int(remap[bg]) if bg in seen else None)
    table = ClassEmbeddingTable(catalog, embeddings.vectors[seen], embeddings.normalized)
    sub = SplitConfig(k=len(held), unseen=tuple(int(remap[c]) for c in held), seed=split.seed,
                      n_classes=len(seen))
    has_held = sub.is_unseen(labels).reshape(len(labels), -1).any(axis=1)
    train_idx = np.flatnonzero(~has_held)
    val_idx = np.flatnonzero(has_held)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError("cross-validation needs scenes both with and without the held-out classes")
    feats = data.train.features
    train = Dataset(feats[train_idx], labels[train_idx])
    val = Dataset(feats[val_idx], labels[val_idx])
    return ZslData(train, val, val, sub), table, held


def zero_shot_cross_validate(config, data, embeddings, grid):
    """Pick the grid point with the best held-out-class hIoU; true unseen classes stay untouched.

    Every point runs with the same seed, and ties go to the point whose sorted
    JSON form is smallest, so the result does not depend on grid order.
    Returns ``(best point, [(point, hIoU, report), ...])``.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("empty hyper-parameter grid")
    problem, table, _ = cv_problem(data, embeddings, config.seed)
    rows = []
    for point in grid:
        cfg = apply_overrides(config, point)
        report = run_zs3(cfg, problem, table).report
        rows.append((point, float(report.hiou), report))
    best = min(rows, key=lambda r: (-r[1], _point_key(r[0])))
    return best[0], rows
