"""Correlation-based evaluation: PLCC/SROCC, content-wise k-fold splits and
whole-set (cross-dataset) reporting."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EvalError
from .model import ModelConfig, ModelParams, predict
from .partition import PreprocessConfig
from .pcio import DatasetManifest, parse_ply


def plcc(x, y) -> float:
    """Sample Pearson linear correlation coefficient."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1 or len(xa) < 2:
        raise EvalError("bad-input", f"need two equal-length vectors of >= 2, got "
                                     f"{xa.shape} and {ya.shape}")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0:
        raise EvalError("zero-variance", "correlation undefined for constant input")
    return float(np.sum(xc * yc) / denom)


def fractional_ranks(x) -> np.ndarray:
    """1-based ranks with ties averaged."""
    xa = np.asarray(x, dtype=np.float64)
    order = np.argsort(xa, kind="stable")
    ranks = np.empty(len(xa), dtype=np.float64)
    i = 0
    while i < len(xa):
        j = i
        while j + 1 < len(xa) and xa[order[j + 1]] == xa[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srocc(x, y) -> float:
    """Spearman rank-order correlation: Pearson over fractional ranks."""
    return plcc(fractional_ranks(x), fractional_ranks(y))


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_refs: frozenset[str]
    test_refs: frozenset[str]


def kfold_by_reference(manifest: DatasetManifest) -> list[FoldSplit]:
    """One fold per reference content id, that id held out for testing;
    folds ordered by id."""
    refs = sorted(manifest.group_by_reference())
    if len(refs) < 2:
        raise EvalError("one-group", "k-fold needs at least 2 reference contents")
    return [FoldSplit(i, frozenset(r for r in refs if r != ref), frozenset({ref}))
            for i, ref in enumerate(refs)]


@dataclass
class FoldResult:
    fold_index: int
    test_refs: list[str]
    count: int
    plcc: float
    srocc: float


@dataclass
class EvalReport:
    folds: list[FoldResult]
    mean_plcc: float
    mean_srocc: float

    def to_json(self) -> str:
        return json.dumps({
            "folds": [{"fold": f.fold_index, "test_refs": f.test_refs, "count": f.count,
                       "plcc": f.plcc, "srocc": f.srocc} for f in self.folds],
            "mean_plcc": self.mean_plcc,
            "mean_srocc": self.mean_srocc,
        }, indent=2)

    def to_table(self) -> str:
        lines = [f"{'fold':>4}  {'test refs':<24} {'n':>4} {'PLCC':>8} {'SROCC':>8}"]
        for f in self.folds:
            refs = ",".join(f.test_refs)
            lines.append(f"{f.fold_index:>4}  {refs:<24} {f.count:>4} "
                         f"{f.plcc:>8.4f} {f.srocc:>8.4f}")
        lines.append(f"{'mean':>4}  {'':<24} {'':>4} "
                     f"{self.mean_plcc:>8.4f} {self.mean_srocc:>8.4f}")
        return "\n".join(lines)


def report_from_scores(manifest: DatasetManifest, scores: dict[str, float],
                       kfold: bool = True) -> EvalReport:
    """Assemble per-fold (or whole-set) correlations from per-path scores."""
    if kfold:
        folds = kfold_by_reference(manifest)
        results = []
        for fold in folds:
            entries = [e for e in manifest.entries if e.reference in fold.test_refs]
            pred = [scores[e.path] for e in entries]
            mos = [e.mos for e in entries]
            results.append(FoldResult(fold.fold_index, sorted(fold.test_refs),
                                      len(entries), plcc(pred, mos), srocc(pred, mos)))
    else:
        pred = [scores[e.path] for e in manifest.entries]
        mos = [e.mos for e in manifest.entries]
        results = [FoldResult(0, sorted(manifest.group_by_reference()), len(pred),
                              plcc(pred, mos), srocc(pred, mos))]
    return EvalReport(results,
                      mean_plcc=float(np.mean([r.plcc for r in results])),
                      mean_srocc=float(np.mean([r.srocc for r in results])))


def score_manifest(manifest: DatasetManifest, params: ModelParams, cfg: ModelConfig,
                   pre_cfg: PreprocessConfig, threads: int = 1) -> dict[str, float]:
    """Score every manifest cloud; clouds are independent, so scoring may
    run on a thread pool (with the BLAS pool capped to avoid oversubscription)."""
    from .train import blas_thread_limit

    def score_one(entry):
        pc = parse_ply(manifest.resolve(entry).read_bytes(), name=entry.path)
        return entry.path, predict(pc, params, cfg, pre_cfg)[0]

    with blas_thread_limit(1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                pairs = list(pool.map(score_one, manifest.entries))
        else:
            pairs = [score_one(e) for e in manifest.entries]
    return dict(pairs)


def evaluate(params: ModelParams, manifest: DatasetManifest, cfg: ModelConfig,
             pre_cfg: PreprocessConfig, kfold: bool = True,
             threads: int = 1) -> EvalReport:
    """Score every cloud, then report PLCC/SROCC per test fold (or over the
    whole set for cross-dataset evaluation) and the mean over folds."""
    scores = score_manifest(manifest, params, cfg, pre_cfg, threads=threads)
    return report_from_scores(manifest, scores, kfold=kfold)
