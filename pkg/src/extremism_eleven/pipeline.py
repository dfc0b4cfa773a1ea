"""Stage runner: artifacts on disk, fingerprint gates, run manifest."""

from __future__ import annotations

import contextlib
import json
import logging
import os
import platform
import random
from collections import Counter
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .artifacts import (atomic_write_text, dumps_json, read_json, sha256_file, write_json)
from .config import ConfigError, PipelineConfig
from .corpus import (JoiningRule, RecordError, UserTimeline, activity_filter, apply_filters,
                     assign_random_t0, build_timeline, group_by_user, iter_jsonl, read_posts,
                     write_posts, write_timelines)
from .efa import (EfaError, EfaModel, FactorScoreMatrix, bartlett, correlation_matrix, factor_scores,
                  fit_efa, kmo, parallel_analysis, parallel_threshold, top_loadings_report)
from .embedder import ProviderError
from .forecast import ForecastError, months_before_sweep
from .itembank import ItemBankError, load_item_bank
from .profiles import aggregate_mean, compare_groups, profiles_csv, ttest_csv
from .scorer import ItemScoreMatrix, score_corpus
from .trend import CompositeScorer, trajectory, trajectory_csv, TrajectorySeries

log = logging.getLogger(__name__)

STAGES = ("ingest", "score", "efa-fit", "efa-score", "profile", "forecast", "trend")
REPORTS = ("forum-profile", "banned-compare", "auc-curve", "trajectory")

ARTIFACTS = {
    "posts": "posts.jsonl",
    "drops": "drop_summary.json",
    "timelines": "timelines.json",
    "item_scores": "item_scores.e11m",
    "model": "efa_model.json",
    "diagnostics": "efa_diagnostics.json",
    "factor_scores": "factor_scores.e11m",
    "profile": "profile.json",
    "forecast": "forecast.json",
    "forecast_models": "forecast_models.json",
    "trend": "trend.json",
}

PRODUCER = {
    "posts": "ingest", "timelines": "ingest", "item_scores": "score", "model": "efa-fit",
    "factor_scores": "efa-score", "profile": "profile", "forecast": "forecast", "trend": "trend",
}


class PipelineError(RuntimeError):
    exit_code = 1


class DependencyError(PipelineError):
    exit_code = 3


class DataError(PipelineError):
    exit_code = 4


def _path(cfg: PipelineConfig, name: str) -> Path:
    return cfg.output_dir / ARTIFACTS[name]


def _require(cfg: PipelineConfig, *names: str) -> None:
    for name in names:
        if not _path(cfg, name).exists():
            raise DependencyError(f"missing {ARTIFACTS[name]}: run {PRODUCER[name]} first")


@contextlib.contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".e11.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DependencyError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lock)


def _versions() -> dict:
    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": kernels.BACKEND,
    }


def _record(cfg: PipelineConfig, stage: str, inputs: list[Path], outputs: list[Path], extra=None) -> None:
    manifest_path = cfg.output_dir / "manifest.json"
    manifest = read_json(manifest_path) if manifest_path.exists() else {"stages": {}}
    entry = {
        "inputs": {p.name: sha256_file(p) for p in inputs},
        "outputs": {p.name: sha256_file(p) for p in outputs},
        "config_fingerprint": cfg.fingerprint(),
        "config": cfg.as_dict(include_paths=False),
        "seed": cfg.seed,
        "versions": _versions(),
    }
    if extra:
        entry.update(extra)
    manifest["stages"][stage] = entry
    write_json(manifest_path, manifest)


def _bank(cfg: PipelineConfig):
    try:
        return load_item_bank(cfg.resolve(cfg.paths.item_bank) if cfg.paths.item_bank else None)
    except ItemBankError as exc:
        raise DataError(f"item bank: {exc}") from None


def load_timelines(cfg: PipelineConfig) -> list[UserTimeline]:
    posts = {p.id: p for p in read_posts(_path(cfg, "posts"))}
    out = []
    for rec in read_json(_path(cfg, "timelines")):
        tl_posts = tuple(posts[pid] for pid in rec["post_ids"])
        out.append(UserTimeline(rec["user"], tl_posts, rec["t0"], rec["cohort"]))
    return out


def _check_model_scores(model: EfaModel, scores: FactorScoreMatrix) -> None:
    if scores.model_fingerprint != model.fingerprint():
        raise DependencyError(
            "factor scores were produced by a different EFA model "
            f"(scores {scores.model_fingerprint[:12]}, model {model.fingerprint()[:12]}): rerun efa-score")


# -- stages ------------------------------------------------------------------

def stage_ingest(cfg: PipelineConfig) -> None:
    cfg.validate(need_corpus=True)
    fc = cfg.filter_config()
    drops: Counter = Counter()
    errors: list = []
    posts = []
    seen = set()
    for path in cfg.corpus_paths():
        with open(path, encoding="utf-8") as fh:
            try:
                for post in iter_jsonl(fh, lenient=cfg.filters.lenient, errors=errors):
                    if post.id in seen:
                        raise RecordError(f"duplicate post id {post.id!r} across corpus files")
                    seen.add(post.id)
                    posts.append(post)
            except RecordError as exc:
                raise DataError(f"{path}: {exc}") from None
    kept = list(apply_filters(posts, fc, drops))
    if not kept:
        raise DataError("no posts survive the filters")
    write_posts(_path(cfg, "posts"), kept)
    summary = {reason: drops.get(reason, 0) for reason in ("word_count", "date", "lang", "forum")}
    write_json(_path(cfg, "drops"), summary)
    if errors:
        write_json(cfg.output_dir / "record_errors.json", [str(e) for e in errors])

    by_user = group_by_user(kept)
    targets = frozenset(cfg.cohorts.target_forums)
    timelines = []
    if targets:
        c = cfg.cohorts
        joiners = {u for u, ps in by_user.items() if any(p.forum in targets for p in ps)}
        engaged = activity_filter({u: [p for p in by_user[u] if p.forum in targets] for u in joiners},
                                  c.joiner_min_posts, c.joiner_min_active_months, c.joiner_window_months)
        controls = activity_filter({u: ps for u, ps in by_user.items() if u not in joiners},
                                   c.control_min_posts, c.control_min_active_months, c.control_window_months)
        for user in sorted(engaged | controls):
            rule = JoiningRule(targets, "joiner" if user in engaged else "control")
            tl = build_timeline(by_user[user], rule)
            if tl.t0 is not None:
                timelines.append(tl)
    write_timelines(_path(cfg, "timelines"), timelines)
    _record(cfg, "ingest", cfg.corpus_paths(),
            [_path(cfg, "posts"), _path(cfg, "drops"), _path(cfg, "timelines")],
            {"kept": len(kept), "timelines": len(timelines)})
    log.info("ingest: kept %d posts, %d timelines, drops %s", len(kept), len(timelines), summary)


def stage_score(cfg: PipelineConfig) -> None:
    _require(cfg, "posts")
    bank = _bank(cfg)
    posts = read_posts(_path(cfg, "posts"))
    try:
        matrix = score_corpus(posts, bank, cfg.provider_config(),
                              posts_per_batch=cfg.embedder.posts_per_batch,
                              length_weighted=cfg.embedder.length_weighted)
    except ProviderError as exc:
        raise DependencyError(f"embedding provider: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    matrix.save(_path(cfg, "item_scores"))
    if matrix.skipped:
        write_json(cfg.output_dir / "score_skipped.json", [list(s) for s in matrix.skipped])
    _record(cfg, "score", [_path(cfg, "posts")], [_path(cfg, "item_scores")],
            {"bank_fingerprint": matrix.bank_fingerprint, "provider_tag": matrix.provider_tag})


def stage_efa_fit(cfg: PipelineConfig) -> None:
    _require(cfg, "item_scores")
    bank = _bank(cfg)
    scores = ItemScoreMatrix.load(_path(cfg, "item_scores"))
    if scores.bank_fingerprint != bank.fingerprint():
        raise DependencyError("item scores were computed with a different item bank: rerun score")
    if scores.item_ids != bank.item_ids:
        raise DependencyError("item score columns do not match the bank order: rerun score")
    X = scores.scores
    e = cfg.efa
    try:
        R = correlation_matrix(X, scores.item_ids)
        k_pa = parallel_analysis(X, iters=e.iters, quantile=e.quantile, seed=cfg.seed)
        k = e.k_override or k_pa
        if k < 1:
            raise DataError("parallel analysis retained no factors; set efa.k_override")
        names = e.factor_names or None
        if names is not None and len(names) != k:
            raise ConfigError(f"efa.factor_names has {len(names)} names for k = {k}")
        model = fit_efa(X, k, item_ids=scores.item_ids, rotation=e.rotation,
                        factor_names=names, bank_fingerprint=bank.fingerprint())
        try:
            k_res = kmo(R)
            kmo_block = {"overall": k_res.overall, "per_item": dict(zip(scores.item_ids, k_res.per_item_msa.tolist()))}
        except EfaError as exc:
            kmo_block = {"error": str(exc)}
        try:
            b = bartlett(R)
            bart_block = {"chi2": b.chi2, "df": b.df, "p_value": b.p_value}
        except EfaError as exc:
            bart_block = {"error": str(exc)}
    except EfaError as exc:
        raise DataError(f"efa: {exc}") from None
    threshold = parallel_threshold(X.shape[0], X.shape[1], e.iters, e.quantile, cfg.seed)
    diagnostics = {
        "n": int(X.shape[0]),
        "p": int(X.shape[1]),
        "kmo": kmo_block,
        "bartlett": bart_block,
        "parallel_analysis": {
            "k": k_pa, "iters": e.iters, "quantile": e.quantile,
            "observed": model.eigenvalues.tolist(), "threshold": threshold.tolist(),
        },
        "k": k,
        "top_loadings": top_loadings_report(model, min(e.top_m, model.p), bank),
    }
    model.save(_path(cfg, "model"))
    write_json(_path(cfg, "diagnostics"), diagnostics)
    _record(cfg, "efa-fit", [_path(cfg, "item_scores")], [_path(cfg, "model"), _path(cfg, "diagnostics")],
            {"model_fingerprint": model.fingerprint(), "k": k})


def stage_efa_score(cfg: PipelineConfig) -> None:
    _require(cfg, "item_scores", "model")
    scores = ItemScoreMatrix.load(_path(cfg, "item_scores"))
    model = EfaModel.load(_path(cfg, "model"))
    if scores.bank_fingerprint != model.bank_fingerprint:
        raise DependencyError(
            f"item scores use bank {scores.bank_fingerprint[:12]} but the model was fitted on "
            f"bank {str(model.bank_fingerprint)[:12]}: refit efa or rescore")
    try:
        fs = factor_scores(scores.scores, model, scores.post_ids, scores.item_ids)
    except EfaError as exc:
        raise DependencyError(str(exc)) from None
    fs.save(_path(cfg, "factor_scores"))
    _record(cfg, "efa-score", [_path(cfg, "item_scores"), _path(cfg, "model")], [_path(cfg, "factor_scores")],
            {"model_fingerprint": model.fingerprint()})


def _load_scored(cfg: PipelineConfig) -> FactorScoreMatrix:
    _require(cfg, "factor_scores", "model")
    model = EfaModel.load(_path(cfg, "model"))
    fs = FactorScoreMatrix.load(_path(cfg, "factor_scores"))
    _check_model_scores(model, fs)
    return fs


def stage_profile(cfg: PipelineConfig) -> None:
    _require(cfg, "posts")
    fs = _load_scored(cfg)
    posts = {p.id: p for p in read_posts(_path(cfg, "posts"))}
    attr = cfg.profile.group_by
    if attr not in ("forum", "user"):
        raise ConfigError(f"profile.group_by must be 'forum' or 'user', got {attr!r}")
    profiles = aggregate_mean(fs, lambda pid: getattr(posts[pid], attr))
    doc = {
        "factor_names": fs.factor_names,
        "group_by": attr,
        "profiles": [{"group": g.group_key, "n_posts": g.n_posts, "mean": g.mean.tolist(),
                      "sd": [None if np.isnan(v) else v for v in g.sd.tolist()],
                      "positivity": g.positivity.tolist()} for g in profiles],
        "compare": None,
    }
    banned, open_ = set(cfg.profile.banned_forums), set(cfg.profile.not_banned_forums)
    if banned and open_:
        keep = [i for i, pid in enumerate(fs.post_ids) if posts[pid].forum in banned | open_]
        sub = FactorScoreMatrix([fs.post_ids[i] for i in keep], fs.factor_names, fs.scores[keep],
                                fs.model_fingerprint)
        mask = [posts[pid].forum in banned for pid in sub.post_ids]
        if sum(mask) < 2 or len(mask) - sum(mask) < 2:
            raise DataError("banned/not-banned comparison needs at least two posts per group")
        try:
            results = compare_groups(sub, mask, cfg.profile.ttest)
        except ValueError as exc:
            raise DataError(f"t-test: {exc}") from None
        doc["compare"] = {
            "variant": cfg.profile.ttest,
            "n_banned": int(sum(mask)), "n_not_banned": int(len(mask) - sum(mask)),
            "rows": [{"factor": n, "t": r.t, "df": r.df, "p": r.p_value, "p_bonferroni": pb}
                     for n, r, pb in results],
        }
    write_json(_path(cfg, "profile"), doc)
    _record(cfg, "profile", [_path(cfg, "posts"), _path(cfg, "factor_scores")], [_path(cfg, "profile")])


def _nan_to_none(values):
    return [None if (v is None or np.isnan(v)) else float(v) for v in values]


def stage_forecast(cfg: PipelineConfig) -> None:
    _require(cfg, "posts", "timelines")
    fs = _load_scored(cfg)
    timelines = load_timelines(cfg)
    if not timelines:
        raise DataError("no timelines: check cohorts settings")
    f = cfg.forecast
    try:
        curve = months_before_sweep(timelines, fs, [int(o) for o in f.offsets], folds=f.folds, l2=f.l2,
                                    seed=f.seed, lookback_months=f.lookback_months or None, keep_models=True)
    except ForecastError as exc:
        raise DataError(f"forecast: {exc}") from None
    doc = {
        "offsets": curve.offsets,
        "auc_mean": _nan_to_none(curve.auc_mean),
        "ci_low": _nan_to_none(curve.ci_low),
        "ci_high": _nan_to_none(curve.ci_high),
        "n_joiners": curve.n_joiners,
        "n_controls": curve.n_controls,
        "fold_aucs": curve.fold_aucs,
        "folds": f.folds,
        "factor_names": fs.factor_names,
    }
    write_json(_path(cfg, "forecast"), doc)
    write_json(_path(cfg, "forecast_models"),
               {f"{off}:{fold}": m.to_dict() for (off, fold), m in sorted(curve.models.items())})
    _record(cfg, "forecast", [_path(cfg, "timelines"), _path(cfg, "factor_scores")],
            [_path(cfg, "forecast"), _path(cfg, "forecast_models")])


def stage_trend(cfg: PipelineConfig) -> None:
    _require(cfg, "posts", "timelines")
    fs = _load_scored(cfg)
    timelines = load_timelines(cfg)
    if not timelines:
        raise DataError("no timelines: check cohorts settings")
    t = cfg.trend
    rng = random.Random(cfg.seed)
    if t.randomize_control_t0:
        timelines = [assign_random_t0(tl, rng) if tl.cohort == "control" else tl for tl in timelines]
    try:
        composite = CompositeScorer.from_reference(fs, t.factor or None)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    series = []
    for cohort in ("joiner", "control"):
        if not any(tl.cohort == cohort for tl in timelines):
            continue
        try:
            s = trajectory(timelines, fs, composite, cfg.loess_config(), cohort=cohort,
                           window=tuple(t.window), per_user=t.per_user)
        except ValueError as exc:
            raise DataError(f"trend ({cohort}): {exc}") from None
        series.append(s)
    doc = {
        "composite": t.factor or "mean-z",
        "series": [{"cohort": s.cohort, "grid": s.grid.tolist(), "fitted": s.fitted.tolist(),
                    "n_in_window": s.n_in_window, "n_points": len(s.points)} for s in series],
    }
    write_json(_path(cfg, "trend"), doc)
    _record(cfg, "trend", [_path(cfg, "timelines"), _path(cfg, "factor_scores")], [_path(cfg, "trend")])


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "score": stage_score,
    "efa-fit": stage_efa_fit,
    "efa-score": stage_efa_score,
    "profile": stage_profile,
    "forecast": stage_forecast,
    "trend": stage_trend,
}


def run_stage(stage: str, cfg: PipelineConfig) -> None:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    cfg.validate(need_corpus=stage == "ingest")
    with output_lock(cfg.output_dir):
        STAGE_FUNCS[stage](cfg)


# -- reports -----------------------------------------------------------------

def emit_report(kind: str, cfg: PipelineConfig) -> list[Path]:
    """Render a stage artifact as plot-ready CSV plus a JSON metadata sidecar."""
    if kind not in REPORTS:
        raise ConfigError(f"unknown report kind {kind!r}")
    out = cfg.output_dir / "reports"
    source = {"forum-profile": "profile", "banned-compare": "profile",
              "auc-curve": "forecast", "trajectory": "trend"}[kind]
    _require(cfg, source)
    doc = read_json(_path(cfg, source))
    meta = {"kind": kind, "source": ARTIFACTS[source], "source_sha256": sha256_file(_path(cfg, source))}

    if kind == "forum-profile":
        if not doc["profiles"]:
            raise DataError("profile artifact is empty")
        from .profiles import GroupProfile
        profs = [GroupProfile(p["group"], p["n_posts"], np.asarray(p["mean"]),
                              np.asarray([np.nan if v is None else v for v in p["sd"]]), np.asarray(p["positivity"]))
                 for p in doc["profiles"]]
        text = profiles_csv(profs, doc["factor_names"])
        meta.update(factor_names=doc["factor_names"], group_by=doc["group_by"], groups=len(profs))
    elif kind == "banned-compare":
        cmp_ = doc.get("compare")
        if not cmp_:
            raise DataError("no banned/not-banned comparison: set profile.banned_forums and profile.not_banned_forums")
        from .profiles import TTestResult
        rows = [(r["factor"], TTestResult(r["t"], r["df"], r["p"], cmp_["variant"]), r["p_bonferroni"])
                for r in cmp_["rows"]]
        text = ttest_csv(rows)
        meta.update(variant=cmp_["variant"], n_banned=cmp_["n_banned"], n_not_banned=cmp_["n_not_banned"])
    elif kind == "auc-curve":
        if not doc["offsets"]:
            raise DataError("forecast artifact is empty")
        from .forecast import AucCurve
        nan = lambda vs: np.asarray([np.nan if v is None else v for v in vs], dtype=float)
        curve = AucCurve(doc["offsets"], nan(doc["auc_mean"]), nan(doc["ci_low"]), nan(doc["ci_high"]),
                         doc["n_joiners"], doc["n_controls"])
        text = curve.to_csv()
        meta.update(folds=doc["folds"], ci="95% t-interval over fold AUCs (df = folds - 1)",
                    missing_offsets=[o for o, v in zip(doc["offsets"], doc["auc_mean"]) if v is None])
    else:
        if not doc["series"]:
            raise DataError("trend artifact is empty")
        series = [TrajectorySeries(s["cohort"], [], np.asarray(s["grid"]), np.asarray(s["fitted"]), s["n_in_window"])
                  for s in doc["series"]]
        text = trajectory_csv(series)
        meta.update(composite=doc["composite"], cohorts=[s["cohort"] for s in doc["series"]],
                    x_unit="months relative to t0 (30.44-day months)")
    csv_path = out / f"{kind}.csv"
    side_path = out / f"{kind}.json"
    atomic_write_text(csv_path, text)
    atomic_write_text(side_path, dumps_json(meta))
    return [csv_path, side_path]


def run_all(cfg: PipelineConfig, reports: bool = True) -> None:
    for stage in STAGES:
        run_stage(stage, cfg)
    if reports:
        for kind in REPORTS:
            if kind == "banned-compare" and not read_json(_path(cfg, "profile")).get("compare"):
                continue
            emit_report(kind, cfg)
