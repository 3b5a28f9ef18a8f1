"""Dataset and concept-bank ingestion, synthetic generation, and splits.

On-disk dataset layout (one directory):
  meta.json     {task, d, n_k, n_c, concept_names[], class_names[]}
  features.csv  header id,f0..f{d-1}
  concepts.csv  header id,<concept names>
  labels.csv    header id,label
UTF-8, comma separator, '.' decimal point. Sample order follows
features.csv; ids must match across the three CSVs.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError
from .model import ConceptBank
from .numkernel import Array

HIDDEN_SCALE = 2.0  # strength of the latent direction injected into features


@dataclass
class DatasetMeta:
    task: str
    d: int
    n_k: int
    n_c: int
    concept_names: list[str]
    class_names: list[str]

    def to_dict(self) -> dict:
        return {
            "task": self.task, "d": self.d, "n_k": self.n_k, "n_c": self.n_c,
            "concept_names": self.concept_names, "class_names": self.class_names,
        }


@dataclass
class FeatureRecord:
    id: str
    feature: Array
    concepts: Array
    label: int


@dataclass
class Dataset:
    meta: DatasetMeta
    ids: list[str]
    features: Array   # n x d
    concepts: Array   # n x n_k
    labels: Array     # n, int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.concepts = np.asarray(self.concepts, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise DataFormatError("duplicate sample ids")
        if self.features.shape != (n, self.meta.d):
            raise DataFormatError(
                f"features shape {self.features.shape} != ({n}, {self.meta.d})"
            )
        if self.concepts.shape != (n, self.meta.n_k):
            raise DataFormatError(
                f"concepts shape {self.concepts.shape} != ({n}, {self.meta.n_k})"
            )
        if not np.isfinite(self.features).all() or not np.isfinite(self.concepts).all():
            raise DataFormatError("non-finite value in dataset")
        if self.meta.task == "classification":
            if not np.isin(self.concepts, (0.0, 1.0)).all():
                raise DataFormatError("classification concept targets must be 0/1")
        else:
            if self.concepts.min() < 0.0 or self.concepts.max() > 1.0:
                raise DataFormatError("regression concept targets must lie in [0, 1]")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.meta.n_c):
            raise DataFormatError(f"class label outside [0, {self.meta.n_c})")

    def __len__(self) -> int:
        return len(self.ids)

    def records(self):
        for i, sid in enumerate(self.ids):
            yield FeatureRecord(sid, self.features[i], self.concepts[i],
                                int(self.labels[i]))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            meta=self.meta,
            ids=[self.ids[i] for i in indices],
            features=self.features[indices],
            concepts=self.concepts[indices],
            labels=self.labels[indices],
        )


@dataclass
class SynthSpec:
    n: int
    d: int
    n_k: int
    n_c: int
    noise: float = 0.1
    hidden_factor: bool = False
    hidden_strength: float = 0.0
    seed: int = 0
    d_k: int = 16  # embedding width of the generated concept bank

    def __post_init__(self):
        if self.n < 10 * self.n_c:
            raise ConfigError(f"n={self.n} must be >= 10*n_c={10 * self.n_c}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not (0.0 <= self.hidden_strength <= 1.0):
            raise ConfigError("hidden_strength must lie in [0, 1]")


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    if not os.path.exists(path):
        raise DataFormatError("missing file", path=path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise DataFormatError("empty file", path=path)
    return rows[0], rows[1:]


def _parse_floats(cells, path, line) -> list[float]:
    out = []
    for c in cells:
        try:
            v = float(c)
        except ValueError:
            raise DataFormatError(f"not a number: {c!r}", path=path, line=line)
        if not math.isfinite(v):
            raise DataFormatError(f"non-finite value: {c!r}", path=path, line=line)
        out.append(v)
    return out


def load_dataset(dir_path) -> Dataset:
    meta_path = os.path.join(dir_path, "meta.json")
    if not os.path.exists(meta_path):
        raise DataFormatError("missing file", path=meta_path)
    with open(meta_path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid JSON: {e}", path=meta_path) from e
    for key in ("task", "d", "n_k", "n_c", "concept_names", "class_names"):
        if key not in raw:
            raise DataFormatError(f"meta.json missing key {key!r}", path=meta_path)
    meta = DatasetMeta(task=raw["task"], d=int(raw["d"]), n_k=int(raw["n_k"]),
                       n_c=int(raw["n_c"]), concept_names=raw["concept_names"],
                       class_names=raw["class_names"])
    if meta.task not in ("classification", "regression"):
        raise DataFormatError(f"unknown task {meta.task!r}", path=meta_path)
    if len(meta.concept_names) != meta.n_k:
        raise DataFormatError("concept_names length != n_k", path=meta_path)
    if len(meta.class_names) != meta.n_c:
        raise DataFormatError("class_names length != n_c", path=meta_path)

    fpath = os.path.join(dir_path, "features.csv")
    header, rows = _read_csv(fpath)
    expect = ["id"] + [f"f{i}" for i in range(meta.d)]
    if header != expect:
        raise DataFormatError(f"bad header {header[:3]}...", path=fpath, line=1)
    ids, feats = [], []
    for i, row in enumerate(rows, start=2):
        if len(row) != meta.d + 1:
            raise DataFormatError(f"expected {meta.d + 1} columns, got {len(row)}",
                                  path=fpath, line=i)
        ids.append(row[0])
        feats.append(_parse_floats(row[1:], fpath, i))

    cpath = os.path.join(dir_path, "concepts.csv")
    header, rows = _read_csv(cpath)
    if header != ["id"] + meta.concept_names:
        raise DataFormatError("concepts.csv header does not list the concept names",
                              path=cpath, line=1)
    cmap = {}
    for i, row in enumerate(rows, start=2):
        if len(row) != meta.n_k + 1:
            raise DataFormatError(f"expected {meta.n_k + 1} columns, got {len(row)}",
                                  path=cpath, line=i)
        cmap[row[0]] = _parse_floats(row[1:], cpath, i)

    lpath = os.path.join(dir_path, "labels.csv")
    header, rows = _read_csv(lpath)
    if header != ["id", "label"]:
        raise DataFormatError("labels.csv header must be id,label", path=lpath, line=1)
    lmap = {}
    for i, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataFormatError("expected 2 columns", path=lpath, line=i)
        try:
            lmap[row[0]] = int(row[1])
        except ValueError:
            raise DataFormatError(f"label not an integer: {row[1]!r}",
                                  path=lpath, line=i)

    concepts, labels = [], []
    for sid in ids:
        if sid not in cmap:
            raise DataFormatError(f"id {sid!r} missing", path=cpath)
        if sid not in lmap:
            raise DataFormatError(f"id {sid!r} missing", path=lpath)
        concepts.append(cmap[sid])
        labels.append(lmap[sid])
    extra = set(cmap) - set(ids)
    if extra:
        raise DataFormatError(f"id {sorted(extra)[0]!r} not in features.csv",
                              path=cpath)
    return Dataset(meta=meta, ids=ids, features=np.array(feats),
                   concepts=np.array(concepts), labels=np.array(labels))


def save_dataset(dataset: Dataset, dir_path) -> None:
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(dataset.meta.to_dict(), f, indent=2)
    with open(os.path.join(dir_path, "features.csv"), "w", encoding="utf-8",
              newline="") as f:
        w = csv.writer(f)
        w.writerow(["id"] + [f"f{i}" for i in range(dataset.meta.d)])
        for sid, row in zip(dataset.ids, dataset.features):
            w.writerow([sid] + [repr(float(v)) for v in row])
    with open(os.path.join(dir_path, "concepts.csv"), "w", encoding="utf-8",
              newline="") as f:
        w = csv.writer(f)
        w.writerow(["id"] + dataset.meta.concept_names)
        for sid, row in zip(dataset.ids, dataset.concepts):
            w.writerow([sid] + [repr(float(v)) for v in row])
    with open(os.path.join(dir_path, "labels.csv"), "w", encoding="utf-8",
              newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label"])
        for sid, lab in zip(dataset.ids, dataset.labels):
            w.writerow([sid, int(lab)])


def load_concept_bank(path, expected_names: list[str]) -> ConceptBank:
    header, rows = _read_csv(path)
    if not header or header[0] != "name":
        raise DataFormatError("bank header must start with 'name'", path=path, line=1)
    width = len(header) - 1
    seen: dict[str, list[float]] = {}
    for i, row in enumerate(rows, start=2):
        if len(row) != width + 1:
            raise DataFormatError(f"expected {width + 1} columns, got {len(row)}",
                                  path=path, line=i)
        name = row[0]
        if name in seen:
            raise DataFormatError(f"duplicate concept name {name!r}", path=path, line=i)
        seen[name] = _parse_floats(row[1:], path, i)
    missing = [n for n in expected_names if n not in seen]
    if missing:
        raise DataFormatError(f"missing concept {missing[0]!r}", path=path)
    unknown = [n for n in seen if n not in expected_names]
    if unknown:
        raise DataFormatError(f"unknown concept {unknown[0]!r}", path=path)
    return ConceptBank(names=list(expected_names),
                       embeddings=np.array([seen[n] for n in expected_names]))


def save_concept_bank(bank: ConceptBank, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name"] + [f"e{i}" for i in range(bank.embeddings.shape[1])])
        for name, row in zip(bank.names, bank.embeddings):
            w.writerow([name] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def kfold_split(n: int, k: int, seed: int) -> list[tuple[Array, Array]]:
    """Disjoint test folds covering [0, n), sizes differing by at most 1."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i in range(k):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train, test))
    return out


def stratified_kfold(labels: Array, k: int, seed: int) -> list[tuple[Array, Array]]:
    """Like kfold_split but spreads each class evenly across folds."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds n={n}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        for pos, i in enumerate(idx):
            fold_of[i] = (cursor + pos) % k
        cursor += len(idx)
    out = []
    for f in range(k):
        test = np.nonzero(fold_of == f)[0]
        train = np.nonzero(fold_of != f)[0]
        out.append((train, test))
    return out


def subsample_proportion(train_indices, p: float, seed: int,
                         labels: Array | None = None) -> Array:
    """Keep ceil(p * n) of the given indices, class-stratified when labels
    are supplied (largest-remainder allocation)."""
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"proportion must lie in (0, 1], got {p}")
    train_indices = np.asarray(train_indices)
    n = len(train_indices)
    target = math.ceil(p * n)
    if p == 1.0:
        return train_indices.copy()
    rng = np.random.default_rng(seed)
    if labels is None:
        pick = rng.permutation(n)[:target]
        return np.sort(train_indices[pick])
    labels = np.asarray(labels)
    classes = np.unique(labels)
    quotas, remainders = {}, []
    for cls in classes:
        exact = p * (labels == cls).sum()
        quotas[cls] = int(math.floor(exact))
        remainders.append((exact - math.floor(exact), cls))
    shortfall = target - sum(quotas.values())
    for _, cls in sorted(remainders, key=lambda t: (-t[0], t[1]))[:shortfall]:
        quotas[cls] += 1
    chosen = []
    for cls in classes:
        pos = np.nonzero(labels == cls)[0]
        pos = pos[rng.permutation(len(pos))][:quotas[cls]]
        chosen.append(train_indices[pos])
    return np.sort(np.concatenate(chosen))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def synth_generate(spec: SynthSpec) -> tuple[Dataset, ConceptBank]:
    """Seeded synthetic classification data.

    Concepts are thresholded linear probes of a latent Gaussian feature
    block (plus probe noise); labels follow a nearest-prototype rule over
    the true concepts. With ``hidden_factor``, an extra latent scalar is
    injected into the features (not the concepts) and flips the label of
    samples in its upper tail, at rate ``hidden_strength``: signal that
    only a branch with direct feature access can recover.
    """
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((spec.n, spec.d))
    probes = rng.standard_normal((spec.d, spec.n_k))
    probes /= np.sqrt((probes * probes).sum(axis=0, keepdims=True))
    margins = z @ probes
    if spec.noise > 0:
        margins = margins + spec.noise * rng.standard_normal(margins.shape)
    concepts = (margins > 0.0).astype(np.float64)

    prototypes = _prototypes_with_all_classes(rng, concepts, spec.n_c, spec.n_k)
    labels = _nearest_prototype(concepts, prototypes)

    features = z
    if spec.hidden_factor:
        h = rng.standard_normal(spec.n)
        u = rng.standard_normal(spec.d)
        u /= np.sqrt(u @ u)
        features = z + HIDDEN_SCALE * np.outer(h, u)
        # flip exactly the upper hidden_strength tail of the latent factor
        threshold = _gauss_quantile(1.0 - spec.hidden_strength)
        flips = h > threshold
        labels = np.where(flips, (labels + 1) % spec.n_c, labels)

    meta = DatasetMeta(
        task="classification", d=spec.d, n_k=spec.n_k, n_c=spec.n_c,
        concept_names=[f"concept_{i}" for i in range(spec.n_k)],
        class_names=[f"class_{c}" for c in range(spec.n_c)],
    )
    dataset = Dataset(
        meta=meta,
        ids=[f"s{i:06d}" for i in range(spec.n)],
        features=features, concepts=concepts, labels=labels,
    )
    bank_rows = rng.standard_normal((spec.n_k, spec.d_k))
    bank_rows /= np.sqrt((bank_rows * bank_rows).sum(axis=1, keepdims=True))
    bank = ConceptBank(names=meta.concept_names, embeddings=bank_rows)
    return dataset, bank


def _nearest_prototype(concepts: Array, prototypes: Array) -> Array:
    dists = np.abs(concepts[:, None, :] - prototypes[None, :, :]).sum(axis=2)
    return dists.argmin(axis=1)


def _prototypes_with_all_classes(rng, concepts, n_c, n_k, tries=64) -> Array:
    for _ in range(tries):
        prototypes = rng.integers(0, 2, size=(n_c, n_k)).astype(np.float64)
        if len({tuple(p) for p in prototypes}) < n_c:
            continue
        labels = _nearest_prototype(concepts, prototypes)
        if len(np.unique(labels)) == n_c:
            return prototypes
    raise ConfigError("could not draw prototypes covering every class")


def _gauss_quantile(q: float) -> float:
    """Inverse standard normal CDF via bisection (monotone, deterministic)."""
    if q <= 0.0:
        return -np.inf
    if q >= 1.0:
        return np.inf
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
