"""Class catalog and semantic class embeddings (word2vec text format)."""
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from zs3.errors import ConfigError, FormatError, UnknownClassError


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names; ids are positions. ``background`` is never unseen."""

    names: tuple
    background: int = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ConfigError("class names must be unique")
        if not self.names:
            raise ConfigError("catalog is empty")
        if self.background is not None and not 0 <= self.background < len(self.names):
            raise ConfigError(f"background id {self.background} outside catalog")

    def __len__(self):
        return len(self.names)

    @property
    def ids(self):
        return list(range(len(self.names)))

    def id_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownClassError(f"unknown class name {name!r}") from None

    def check_id(self, cid):
        if not 0 <= int(cid) < len(self.names):
            raise UnknownClassError(f"unknown class id {cid} (catalog has {len(self.names)} classes)")
        return int(cid)


class ClassEmbeddingTable:
    def __init__(self, catalog, vectors, normalized=False):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(catalog):
            raise FormatError(f"need one vector per class, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise FormatError("embedding vectors must be finite")
        if normalized:
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(norms == 0):
                bad = [catalog.names[i] for i in np.flatnonzero(norms == 0)]
                raise ValueError(f"cannot normalize zero vector(s) for {bad}")
            vectors = vectors / norms[:, None]
        self.catalog = catalog
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.normalized = normalized

    @property
    def dim(self):
        return self.vectors.shape[1]

    def normalize(self):
        return ClassEmbeddingTable(self.catalog, self.vectors, normalized=True)


def parse_embedding_file(path):
    """Read ``name v1 ... vd`` records into an ordered dict name -> vector."""
    records = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            name, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"{path}:{lineno}: record has no values")
            elif len(values) != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} values for {name!r}, found {len(values)}")
            if name in records:
                raise FormatError(f"{path}:{lineno}: duplicate record {name!r}")
            try:
                records[name] = np.array([float(v) for v in values])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise FormatError(f"{path}: no embedding records")
    return records


def load_embeddings(path, catalog, normalize=False):
    records = parse_embedding_file(path)
    missing = [n for n in catalog.names if n not in records]
    if missing:
        raise UnknownClassError(f"class(es) missing from {path}: {', '.join(missing)}")
    return ClassEmbeddingTable(catalog, np.stack([records[n] for n in catalog.names]), normalize)


def save_embeddings(table, path):
    # repr() of a float64 round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        for name, vec in zip(table.catalog.names, table.vectors):
            fh.write(name + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def embedding_of(table, cid):
    return table.vectors[table.catalog.check_id(cid)]


def cosine_nearest(table, query, restrict=None):
    """Class id in ``restrict`` (default: all) with the highest cosine to ``query``.

    Ties go to the smallest class id.
    """
    query = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(query)
    if qn == 0 or not np.isfinite(qn):
        raise ValueError("query vector must be finite and nonzero")
    ids = sorted(table.catalog.ids if restrict is None else {int(c) for c in restrict})
    if not ids:
        raise ValueError("restrict set is empty")
    vecs = table.vectors[ids]
    sims = vecs @ query / (np.linalg.norm(vecs, axis=1) * qn)
    return ids[int(np.argmax(sims))]


def cosine_nearest_batch(table, queries, restrict=None):
    """Row-wise :func:`cosine_nearest`; zero rows fall back to class 0 with a warning."""
    ids = np.array(sorted(table.catalog.ids if restrict is None else {int(c) for c in restrict}))
    vecs = table.vectors[ids]
    vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    qn = np.linalg.norm(queries, axis=1)
    zero = qn == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero regressed vector(s); predicting class 0")
    sims = queries @ vecs.T / np.where(zero, 1.0, qn)[:, None]
    out = ids[np.argmax(sims, axis=1)]
    out[zero] = 0
    return out


FIXTURE_NAMES = (
    "background", "cow", "horse", "motorbike", "bicycle",
    "cat", "dog", "sofa", "chair", "tvmonitor",
)


def fixture_path():
    return Path(str(resources.files("zs3") / "data" / "class_embeddings.txt"))


def fixture_catalog():
    return ClassCatalog(FIXTURE_NAMES, background=0)


def make_fixture_vectors(dim=8, seed=2705):
    """Fixed random vectors with a shared component plus pairwise group prototypes.

    cow/horse, motorbike/bicycle, cat/dog and sofa/chair share a prototype
    (within-pair cosine 0.53-0.67, every other pair below 0.46), and norms are
    drawn in [0.4, 0.6] so that a feature noise of 0.15 already
    blurs neighbouring classes.
    """
    rng = np.random.default_rng(seed)
    common = rng.normal(size=dim)
    protos = rng.normal(size=(4, dim))
    groups = {1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2, 7: 3, 8: 3}
    out = []
    for cid in range(len(FIXTURE_NAMES)):
        v = 0.4 * common + 0.8 * rng.normal(size=dim)
        if cid in groups:
            v = v + 0.9 * protos[groups[cid]]
        v = v / np.linalg.norm(v) * rng.uniform(0.4, 0.6)
        out.append(np.round(v, 6))
    return np.array(out)
