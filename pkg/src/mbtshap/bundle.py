"""Versioned JSON persistence for a fitted explainer."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .data import FeatureSubset
from .pathprob import NodeModelBank
from .shapley import LocalModelTable, MBTExplainer, PipelineConfig
from .slim import SlimTree
from .spline import SplineBasis

FORMAT = "mbtshap-bundle"
VERSION = 1


class BundleError(ValueError):
    pass


@dataclass
class ModelBundle:
    explainer: MBTExplainer
    version: int = VERSION

    def to_dict(self) -> dict:
        ex = self.explainer
        if ex.tree is None or ex.local is None:
            raise BundleError("explainer is not fitted")
        return {
            "format": FORMAT,
            "version": self.version,
            "config": ex.config.to_dict(),
            "columns": list(ex.columns),
            "mean_prediction": ex.mean_prediction,
            "selected_depth": ex.selected_depth,
            "tree": ex.tree.to_dict(),
            "bank": ex.bank.to_dict(),
            "basis": {"knots": [k.tolist() for k in ex.local.basis.knots],
                      "knots_per_feature": ex.local.basis.knots_per_feature},
            "subsets": [list(u.members) for u in ex.subsets],
            "values": ex.values.tolist(),
            "local": [{"mask": m, "region": r, "beta": b.tolist()} for (m, r), b in ex.local.betas.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != FORMAT:
            raise BundleError(f"not a bundle (format={d.get('format')!r})")
        if d.get("version") != VERSION:
            raise BundleError(f"bundle version {d.get('version')!r} != supported {VERSION}")
        try:
            ex = MBTExplainer(PipelineConfig.from_dict(d["config"]))
            ex.columns = tuple(d["columns"])
            ex.mean_prediction = float(d["mean_prediction"])
            ex.selected_depth = d["selected_depth"]
            ex.tree = SlimTree.from_dict(d["tree"])
            ex.bank = NodeModelBank.from_dict(d["bank"])
            b = d["basis"]
            basis = SplineBasis(tuple(np.asarray(k, dtype=np.float64) for k in b["knots"]), int(b["knots_per_feature"]))
            ex.local = LocalModelTable(basis, {(int(e["mask"]), int(e["region"])): np.asarray(e["beta"], dtype=np.float64)
                                               for e in d["local"]})
            p = ex.tree.p
            ex.subsets = [FeatureSubset(tuple(m), p) for m in d["subsets"]]
            ex.values = np.asarray(d["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"malformed bundle payload: {exc!r}") from exc
        return cls(ex, int(d["version"]))


def save_bundle(bundle, path) -> None:
    """Write atomically (temp file + rename).  Accepts a bundle or explainer."""
    if isinstance(bundle, MBTExplainer):
        bundle = ModelBundle(bundle)
    text = json.dumps(bundle.to_dict())
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(prefix=".bundle-", dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_bundle(path) -> ModelBundle:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise BundleError(f"cannot read bundle {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"corrupt bundle {path}: {exc.msg} at offset {exc.pos} "
                          f"(line {exc.lineno}, column {exc.colno}; file length {len(text)})") from exc
    if not isinstance(d, dict):
        raise BundleError(f"corrupt bundle {path}: top level is {type(d).__name__}")
    return ModelBundle.from_dict(d)
