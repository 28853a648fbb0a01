"""Procedural radiance fields written in surface-aligned coordinates.

A field maps a batch of queries ``(s_c, h, d*, face)`` to colors and
densities.  None of the built-in fields look at the view feature; it is on the
query so a learned field could be dropped in with the same signature.
"""
from dataclasses import dataclass

import numpy as np


class FieldConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RadianceSample:
    color: tuple
    density: float

    def __post_init__(self):
        c = tuple(float(min(max(x, 0.0), 1.0)) for x in self.color)
        d = float(self.density)
        if not np.isfinite(d) or d < 0:
            raise ValueError(f"density must be finite and non-negative, got {d}")
        object.__setattr__(self, "color", c)
        object.__setattr__(self, "density", d)


@dataclass(frozen=True)
class FieldQuery:
    """One field query.  ``coord`` is a :class:`~surfalign.surfcoord.SurfCoord`."""

    coord: object
    view: np.ndarray
    face: int
    fallback: bool = False


@dataclass
class QueryBatch:
    s_c: np.ndarray
    h: np.ndarray
    view: np.ndarray
    face: np.ndarray
    fallback: np.ndarray

    def __len__(self):
        return len(self.h)

    @classmethod
    def from_query(cls, q):
        return cls(np.asarray(q.coord.s_c, dtype=float)[None], np.array([float(q.coord.h)]),
                   np.asarray(q.view, dtype=float)[None], np.array([int(q.face)]),
                   np.array([bool(q.fallback)]))

    def subset(self, idx):
        return QueryBatch(self.s_c[idx], self.h[idx], self.view[idx], self.face[idx], self.fallback[idx])


def _rgb(c):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (3,):
        raise FieldConfigError(f"color must be an RGB triple, got {c.tolist()}")
    return np.clip(c, 0.0, 1.0)


def _nonneg(name, x):
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise FieldConfigError(f"{name} must be finite and non-negative, got {x}")
    return x


class Field:
    """Base class; subclasses implement :meth:`evaluate` on a :class:`QueryBatch`."""

    def evaluate(self, q):
        raise NotImplementedError

    def _shell(self, q):
        return np.where(np.abs(q.h) <= self.tau, self.sigma, 0.0)


class ConstantField(Field):
    def __init__(self, color, sigma=200.0, tau=0.02):
        self.color = _rgb(color)
        self.sigma = _nonneg("sigma", sigma)
        self.tau = _nonneg("tau", tau)

    def evaluate(self, q):
        return np.broadcast_to(self.color, (len(q), 3)).copy(), self._shell(q)


class CheckerShellField(Field):
    """3D checkerboard on the canonical position: parity of the summed cell indices."""

    def __init__(self, period=0.25, tau=0.02, sigma=200.0, colors=((1, 1, 1), (0, 0, 0))):
        self.period = float(period)
        if not self.period > 0:
            raise FieldConfigError("period must be positive")
        self.tau = _nonneg("tau", tau)
        self.sigma = _nonneg("sigma", sigma)
        self.colors = np.stack([_rgb(colors[0]), _rgb(colors[1])])

    def parity(self, s_c):
        cells = np.floor(np.asarray(s_c, dtype=np.float64) / self.period).astype(np.int64)
        return cells.sum(axis=-1) & 1

    def evaluate(self, q):
        return self.colors[self.parity(q.s_c)], self._shell(q)


class HeightRampField(Field):
    """Diagnostic: blue at ``-h0`` through to red at ``+h0``."""

    def __init__(self, h0=0.2, sigma=20.0, tau=None):
        self.h0 = float(h0)
        if not self.h0 > 0:
            raise FieldConfigError("h0 must be positive")
        self.sigma = _nonneg("sigma", sigma)
        self.tau = self.h0 if tau is None else _nonneg("tau", tau)

    def evaluate(self, q):
        t = np.clip((q.h + self.h0) / (2 * self.h0), 0.0, 1.0)
        rgb = np.stack([t, np.zeros_like(t), 1.0 - t], axis=1)
        return rgb, self._shell(q)


class CategoryMap:
    """Per-face category labels for :class:`CompositeField`."""

    def __init__(self, labels, n_faces=None):
        labels = np.asarray(labels)
        if labels.ndim != 1 or (labels.size and not np.issubdtype(labels.dtype, np.integer)):
            raise FieldConfigError("labels must be a flat list of integers")
        if n_faces is not None and len(labels) != n_faces:
            raise FieldConfigError(f"{len(labels)} labels for {n_faces} faces")
        if labels.size and labels.min() < 0:
            raise FieldConfigError("labels must be non-negative")
        self.labels = labels.astype(np.int64)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, face):
        return self.labels[face]

    @classmethod
    def from_file(cls, path, n_faces=None):
        vals = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    vals.append(int(line))
                except ValueError:
                    raise FieldConfigError(f"{path}:{lineno}: not an integer label: {line!r}") from None
        return cls(np.array(vals, dtype=np.int64), n_faces)


class CompositeField(Field):
    """Routes each query to ``fields[cats[face]]``."""

    def __init__(self, fields, cats, n_faces=None):
        if not fields:
            raise FieldConfigError("composite needs at least one field")
        if not isinstance(cats, CategoryMap):
            cats = CategoryMap(cats, n_faces)
        elif n_faces is not None and len(cats) != n_faces:
            raise FieldConfigError(f"{len(cats)} labels for {n_faces} faces")
        if len(cats) and cats.labels.max() >= len(fields):
            raise FieldConfigError(
                f"label {int(cats.labels.max())} has no field (only {len(fields)} given)")
        self.fields = list(fields)
        self.cats = cats

    def evaluate(self, q):
        rgb = np.zeros((len(q), 3))
        sigma = np.zeros(len(q))
        lab = self.cats.labels[q.face]
        for k, f in enumerate(self.fields):
            idx = np.nonzero(lab == k)[0]
            if idx.size:
                rgb[idx], sigma[idx] = f.evaluate(q.subset(idx))
        return rgb, sigma


def eval_field(field, q):
    rgb, sigma = field.evaluate(QueryBatch.from_query(q))
    return RadianceSample(tuple(rgb[0]), float(sigma[0]))


def eval_composite(fields, cats, q):
    return eval_field(CompositeField(fields, cats), q)


def field_from_spec(spec, n_faces=None, labels=None):
    """Build a field from a JSON-style dict.

    ``{"type": "constant" | "checker" | "height_ramp" | "composite", ...}``;
    composite specs carry ``"fields"`` and take their labels from ``labels``
    (a :class:`CategoryMap`, a path, or a list) or a ``"labels"`` entry.
    A top-level ``"background"`` belongs to the renderer and is ignored here.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise FieldConfigError("field spec must be an object with a 'type'")
    kind = spec["type"]
    args = {k: v for k, v in spec.items() if k not in ("type", "fields", "labels", "background")}
    try:
        if kind == "constant":
            return ConstantField(**args)
        if kind == "checker":
            return CheckerShellField(**args)
        if kind == "height_ramp":
            return HeightRampField(**args)
    except TypeError as e:
        raise FieldConfigError(f"bad parameters for {kind!r} field: {e}") from None
    if kind == "composite":
        subs = [field_from_spec(s, n_faces) for s in spec.get("fields", [])]
        src = labels if labels is not None else spec.get("labels")
        if src is None:
            raise FieldConfigError("composite field needs per-face labels")
        if isinstance(src, CategoryMap):
            cats = src
        elif isinstance(src, str):
            cats = CategoryMap.from_file(src, n_faces)
        else:
            cats = CategoryMap(np.asarray(src, dtype=np.int64), n_faces)
        return CompositeField(subs, cats, n_faces)
    raise FieldConfigError(f"unknown field type {kind!r}")
