"""Configuration-driven experiment runner.

Each experiment builds a chain, runs exact solves once, fans replicated
simulation out across workers with per-replica seed streams, and writes a
JSON report plus CSV tables whose pass/fail flags can be recomputed from the
stored metrics and tolerances.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import jsonschema

from . import __version__
from .chain import (
    RateGenerator,
    chain_diagnostics,
    is_reversible,
    mixing_time,
    product_chain,
    stationary_distribution,
)
from .coalescing import RunConfig, sample_full_coalescence, sample_voter
from .errors import BudgetExceededError, ConfigError
from .graphs import GraphSpec, build_graph, is_transitive_family, walk_generator
from .hitting import (
    SurvivalCurve,
    _stationary_pair_start as _pair_start,
    correlation_xi,
    default_envelope_grid,
    envelope_fit,
    mean_hitting_time,
    meeting_diagonal,
    meeting_mean,
    pair_diagonal,
    pair_meeting_times,
    quantile,
)
from .meanfield import MeanFieldReference
from .wasserstein import mean_and_se, w1_permutation_test, w1_sample_vs_ref, w1_samples

EXPERIMENTS = (
    "meanfield",
    "counterexample",
    "envelope",
    "duality",
    "correlation",
    "diagnostics",
)

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"type": "string"},
                "n": {"type": "integer", "minimum": 2},
                "d": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 2},
                "p": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "triplets"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "triplets": {"type": "array"},
            },
        },
        "chain_path": {"type": "string"},
        "replications": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "n_ref": {"type": "integer", "minimum": 2},
        "k": {"type": "integer", "minimum": 2},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "epsilons": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "minItems": 1,
        },
        "opinion_distribution": {
            "type": "array",
            "items": {"type": "number", "minimum": 0},
            "minItems": 1,
        },
        "normalizer": {"enum": ["off_diagonal", "stationary"]},
        "start": {"enum": ["stationary", "diagonal_uniform"]},
        "transitive": {"type": "boolean"},
        "expect_separation": {"type": "boolean"},
        "state_budget": {"type": "integer", "minimum": 1},
        "max_events": {"type": "integer", "minimum": 1},
        "keep_levels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "include_mixing": {"type": "boolean"},
        "tolerances": {
            "type": "object",
            "additionalProperties": {"type": ["number", "array"]},
        },
    },
}

DEFAULT_TOLERANCES = {
    "meanfield": {"w1_max": 0.05, "ratio_sigma": 3.0},
    # a chain separates from the reference when the mean ratio is off by
    # more than separation_sigma standard errors OR the distributional gap
    # (W1) exceeds w1_separation_min; cycles match the reference mean yet
    # fail in shape, so the mean statistic alone cannot flag them
    "counterexample": {"separation_sigma": 3.0, "w1_separation_min": 0.08},
    "envelope": {
        "alpha_max": 0.2,
        "beta_max": 0.2,
        "quantile_dev_max": 0.1,
        "min_meeting_ratio_band": [0.8, 1.2],
    },
    "duality": {"permutation_percentile": 99.0},
    "correlation": {"product_bound_tol": 1e-9},
    "diagnostics": {},
}


@dataclass
class ExperimentReport:
    """Metrics, pass/fail flags and reproduction metadata for one experiment."""

    kind: str
    config: dict
    metrics: dict
    flags: dict
    tolerances: dict
    metadata: dict
    tables: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(bool(v) for v in self.flags.values())

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "config": self.config,
            "metrics": _plain(self.metrics),
            "flags": {k: bool(v) for k, v in self.flags.items()},
            "tolerances": _plain(self.tolerances),
            "metadata": _plain(self.metadata),
            "tables": sorted(self.tables),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def validate_config(config) -> dict:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc.message}") from exc
    sources = [k for k in ("graph", "chain", "chain_path") if k in config]
    if config["experiment"] != "diagnostics" or sources:
        if len(sources) != 1:
            raise ConfigError("exactly one of graph/chain/chain_path is required")
    return config


def _build_chain(config):
    if "graph" in config:
        spec = GraphSpec.from_dict(config["graph"])
        graph = build_graph(spec)
        transitive = config.get("transitive", is_transitive_family(spec))
        return walk_generator(graph), transitive, spec
    if "chain" in config:
        return RateGenerator.from_json_dict(config["chain"]), config.get("transitive", False), None
    doc = json.loads(Path(config["chain_path"]).read_text())
    return RateGenerator.from_json_dict(doc), config.get("transitive", False), None


def _tolerances(config):
    tol = dict(DEFAULT_TOLERANCES[config["experiment"]])
    tol.update(config.get("tolerances", {}))
    return tol


def run_experiment(config, out_dir=None, workers=None, seed=None) -> ExperimentReport:
    """Validate the config, run the experiment, optionally write outputs."""
    config = dict(config)
    if workers is not None:
        config["workers"] = int(workers)
    if seed is not None:
        config["seed"] = int(seed)
    validate_config(config)
    runner = _RUNNERS[config["experiment"]]
    tic = time.perf_counter()
    report = runner(config)
    report.metadata.setdefault("seed", config.get("seed", 0))
    report.metadata["package_version"] = __version__
    report.metadata["numpy_version"] = np.__version__
    report.metadata["walltime_s"] = time.perf_counter() - tic
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _meanfield_metrics(config):
    chain, transitive, spec = _build_chain(config)
    n = chain.n
    reps = config.get("replications", 1000)
    seed = config.get("seed", 0)
    workers = config.get("workers", 1)
    budget = config.get("state_budget", 400_000)
    pi = stationary_distribution(chain)
    _, _, u_pair = pair_meeting_times(chain, pi=pi, state_budget=budget)
    m_stationary = float(_pair_start(chain, pi, False) @ u_pair)
    m_off = float(_pair_start(chain, pi, True) @ u_pair)
    normalizer = config.get("normalizer", "off_diagonal")
    m_norm = m_off if normalizer == "off_diagonal" else m_stationary
    metrics = {
        "n": n,
        "meeting_mean_stationary": m_stationary,
        "meeting_mean_off_diagonal": m_off,
        "normalizer": normalizer,
    }
    if config.get("include_mixing", True):
        profile = mixing_time(chain, 0.25, pi=pi)
        diag = chain_diagnostics(
            chain, mixing=profile, pi=pi, meeting_mean=m_stationary, transitive=transitive
        )
        metrics.update(
            mixing_time=profile.time,
            mixing_ratio=diag.mixing_ratio,
            mixing_collision_bound=diag.mixing_collision_bound,
            error_scale=diag.error_scale,
        )
    cfg = RunConfig(
        start="all_vertices",
        replications=reps,
        seed=seed,
        stop_at=1,
        max_events=config.get("max_events", 50_000_000),
    )
    result = sample_full_coalescence(chain, cfg, workers=workers)
    values = result.values(1) / m_norm
    ref = MeanFieldReference(config.get("n_ref", n))
    w1 = w1_sample_vs_ref(values, ref)
    mean, se = mean_and_se(values)
    metrics.update(
        replications=reps,
        ref_n=ref.n_ref,
        ref_mean=ref.mean,
        w1=w1,
        ratio_mean=mean,
        ratio_se=se,
        mean_gap=abs(mean - ref.mean),
    )
    tables = {
        "cdf_compare": _cdf_table(values, ref),
        "samples": _sample_table(result, m_norm),
    }
    return chain, metrics, tables, values, ref


def _run_meanfield(config):
    tol = _tolerances(config)
    chain, metrics, tables, values, ref = _meanfield_metrics(config)
    flags = recompute_flags("meanfield", metrics, tol)
    return ExperimentReport(
        "meanfield", config, metrics, flags, tol, {"chain_n": chain.n}, tables
    )


def _run_counterexample(config):
    tol = _tolerances(config)
    chain, metrics, tables, values, ref = _meanfield_metrics(config)
    metrics["separation_gap"] = abs(metrics["ratio_mean"] - metrics["ref_mean"])
    metrics["expected_separation"] = config.get("expect_separation", True)
    flags = recompute_flags("counterexample", metrics, tol)
    return ExperimentReport(
        "counterexample", config, metrics, flags, tol, {"chain_n": chain.n}, tables
    )


def _run_envelope(config):
    tol = _tolerances(config)
    chain, transitive, spec = _build_chain(config)
    n = chain.n
    budget = config.get("state_budget", 400_000)
    pi = stationary_distribution(chain)
    reversible = is_reversible(chain, pi)
    prod2 = product_chain(chain, 2, state_budget=budget)
    diag2 = pair_diagonal(prod2, n, 2, 0, 1)
    w2 = np.outer(pi, pi).ravel() if reversible else None
    if config.get("start", "stationary") == "diagonal_uniform":
        start2 = np.zeros(n * n)
        start2[diag2.states] = 1.0 / diag2.states.size
    else:
        start2 = np.outer(pi, pi).ravel()
    curve2 = SurvivalCurve(prod2, diag2, start2, reversible_weights=w2)
    m = curve2.mean
    profile = mixing_time(chain, 0.25, pi=pi)
    diagn = chain_diagnostics(
        chain, mixing=profile, pi=pi, meeting_mean=m if m > 0 else None, transitive=transitive
    )
    err = diagn.error_scale if (transitive and m > 0) else diagn.error_scale_general
    metrics = {
        "n": n,
        "meeting_mean_stationary": m,
        "mixing_time": profile.time,
        "error_scale": err,
    }
    tables = {}
    if m <= 0 or curve2(0.0) <= 0.0:
        metrics.update(applicable=False, early_hit_probability=1.0)
        flags = recompute_flags("envelope", metrics, tol)
        return ExperimentReport(
            "envelope", config, metrics, flags, tol, {"chain_n": n}, tables
        )
    thr = None
    if 0 < err < 1:
        thr = mixing_time(chain, max(err**2, 1e-6), pi=pi).time
    fit = envelope_fit(curve2, m, r_threshold=thr)
    # the quantile check needs the non-degenerate regime: condition the
    # start off the target, which removes the instant-hit atom (at these
    # chain sizes the atom is comparable to epsilon itself)
    start_off = start2.copy()
    start_off[diag2.states] = 0.0
    start_off /= start_off.sum()
    curve_off = SurvivalCurve(prod2, diag2, start_off, reversible_weights=w2)
    eps = config.get("epsilon", 0.05)
    q = quantile(curve_off, eps)
    metrics.update(
        applicable=fit.applicable,
        alpha=fit.alpha,
        beta=fit.beta,
        w1_bound=fit.envelope.w1_bound() if fit.envelope else float("nan"),
        early_hit_probability=fit.early_hit_probability,
        epsilon=eps,
        quantile_time=q.time,
        quantile_deviation=q.mean_quantile_deviation,
    )
    tables["survival_vs_envelope"] = _envelope_table(curve2, fit)
    k = config.get("k", 3)
    if k >= 3 and n**k <= budget:
        prodk = product_chain(chain, k, state_budget=budget)
        diagk = meeting_diagonal(prodk, n, k)
        startk = pi
        for _ in range(k - 1):
            startk = np.multiply.outer(startk, pi)
        startk = startk.ravel()
        wk = startk if reversible else None
        # condition both sides on distinct starts: at these chain sizes the
        # instant-collision atom (often tens of percent) would swamp the
        # min-of-exponentials comparison
        startk_off = startk.copy()
        startk_off[diagk.states] = 0.0
        startk_off /= startk_off.sum()
        m_off = curve_off.mean
        curvek = SurvivalCurve(prodk, diagk, startk_off, reversible_weights=wk)
        ell = k * (k - 1) // 2
        fitk = envelope_fit(curvek, m_off / ell)
        ratio = curvek.mean / (m_off / ell)
        metrics.update(
            k=k,
            min_meeting_mean=curvek.mean,
            min_meeting_expected=m_off / ell,
            min_meeting_ratio=ratio,
            alpha_k=fitk.alpha,
            beta_k=fitk.beta,
        )
    flags = recompute_flags("envelope", metrics, tol)
    return ExperimentReport("envelope", config, metrics, flags, tol, {"chain_n": n}, tables)


def _run_duality(config):
    tol = _tolerances(config)
    chain, _, _ = _build_chain(config)
    if "opinion_distribution" not in config:
        raise ConfigError("duality experiments need opinion_distribution")
    mu = np.asarray(config["opinion_distribution"], dtype=float)
    mu = mu / mu.sum()
    reps = config.get("replications", 1000)
    seed = config.get("seed", 0)
    workers = config.get("workers", 1)
    dual = sample_voter(chain, mu, reps, seed=seed, mode="dual", workers=workers)
    forward = sample_voter(chain, mu, reps, seed=seed + 1, mode="forward", workers=workers)
    metrics = {
        "replications": reps,
        "dual_mean": float(dual.mean()),
        "forward_mean": float(forward.mean()),
        "point_mass": bool(mu.max() >= 1.0 - 1e-15),
    }
    if metrics["point_mass"]:
        metrics["all_zero"] = bool(np.all(dual == 0.0) and np.all(forward == 0.0))
        metrics["w1"] = float(w1_samples(dual, forward))
    else:
        test = w1_permutation_test(
            dual, forward,
            n_shuffles=int(tol.get("n_shuffles", 1000)),
            seed=seed + 2, percentile=tol.get("permutation_percentile", 99.0),
        )
        metrics.update(
            w1=test.statistic,
            permutation_threshold=test.threshold,
            permutation_p_value=test.p_value,
        )
    flags = recompute_flags("duality", metrics, tol)
    tables = {"consensus_samples": {
        "columns": {"dual": dual, "forward": forward},
    }}
    return ExperimentReport("duality", config, metrics, flags, tol, {"chain_n": chain.n}, tables)


def _run_correlation(config):
    tol = _tolerances(config)
    chain, transitive, _ = _build_chain(config)
    k = config.get("k", 3)
    epsilons = config.get("epsilons", [config.get("epsilon", 0.05)])
    budget = config.get("state_budget", 200_000)
    seed = config.get("seed", 0)
    metrics = {"k": k, "transitive": transitive, "per_epsilon": []}
    rows = []
    for eps in epsilons:
        rep = correlation_xi(chain, k, eps, state_budget=budget, seed=seed)
        entry = {
            "epsilon": eps,
            "mode": rep.mode,
            "meeting_mean": rep.mean,
            "marginal_max": float(rep.marginals.max()),
            "marginal_min": float(rep.marginals.min()),
            "max_joint": rep.max_joint,
            "product_bound_slack": rep.pairwise_product_bound_slack(),
            "correlation_index": rep.correlation_index,
        }
        metrics["per_epsilon"].append(entry)
        for j in rep.joints:
            rows.append((eps, j.label_a, j.label_b, j.overlap, j.probability))
    flags = recompute_flags("correlation", metrics, tol)
    tables = {"joint_probabilities": {
        "columns": {
            "epsilon": np.array([r[0] for r in rows]),
            "pair_a": [r[1] for r in rows],
            "pair_b": [r[2] for r in rows],
            "overlap": [r[3] for r in rows],
            "probability": np.array([r[4] for r in rows]),
        },
    }}
    return ExperimentReport(
        "correlation", config, metrics, flags, tol, {"chain_n": chain.n}, tables
    )


def _run_diagnostics(config):
    tol = _tolerances(config)
    chain, transitive, _ = _build_chain(config)
    pi = stationary_distribution(chain)
    profile = mixing_time(chain, 0.25, pi=pi)
    m = None
    budget = config.get("state_budget", 200_000)
    if chain.n**2 <= budget:
        m = meeting_mean(chain, pi=pi, state_budget=budget)
    diag = chain_diagnostics(
        chain, mixing=profile, pi=pi, meeting_mean=m, transitive=transitive
    )
    metrics = {
        "n": chain.n,
        "q_max": diag.q_max,
        "max_single_rate": diag.max_single_rate,
        "pi_max": diag.pi_max,
        "mixing_time": diag.mixing_time,
        "mixing_collision_bound": diag.mixing_collision_bound,
        "meeting_mean_stationary": m,
        "mixing_ratio": diag.mixing_ratio,
        "error_scale_general": diag.error_scale_general,
        "error_scale_transitive": diag.error_scale_transitive,
    }
    return ExperimentReport("diagnostics", config, metrics, {}, tol, {"chain_n": chain.n})


_RUNNERS = {
    "meanfield": _run_meanfield,
    "counterexample": _run_counterexample,
    "envelope": _run_envelope,
    "duality": _run_duality,
    "correlation": _run_correlation,
    "diagnostics": _run_diagnostics,
}


# ---------------------------------------------------------------------------
# tables and files


def _cdf_table(values, ref):
    v = np.sort(np.asarray(values))
    f_emp = np.arange(1, v.size + 1) / v.size
    f_ref = 1.0 - np.asarray(ref.survival(v))
    return {"columns": {"t": v, "F_empirical": f_emp, "F_reference": f_ref}}


def _sample_table(result, m_norm):
    cols = {"replica": np.arange(result.replications)}
    for p in sorted(result.levels):
        cols[f"C_{p}"] = result.levels[p]
    cols["normalized"] = result.values() / m_norm
    cols["walltime"] = result.walltimes
    return {"columns": cols}


def _envelope_table(curve, fit):
    grid = fit.grid
    surv = np.asarray(curve(grid))
    lower, upper = fit.envelope.bounds(grid)
    return {"columns": {"t": grid, "survival": surv, "lower": lower, "upper": upper}}


def _format_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table_csv(table, path):
    cols = table["columns"]
    names = list(cols)
    length = len(next(iter(cols.values())))
    if any(len(c) != length for c in cols.values()):
        raise ValueError("table columns have unequal lengths")
    if length == 0:
        raise ValueError("refusing to write an empty table")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow([_format_cell(cols[name][i]) for name in names])


def emit_plotdata(report: ExperimentReport, out_dir):
    """Write every table of the report as a CSV file; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in sorted(report.tables.items()):
        path = out / f"{name}.csv"
        write_table_csv(table, path)
        paths.append(path)
    return paths


def write_report(report: ExperimentReport, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = emit_plotdata(report, out)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return [report_path, *paths]


def recompute_flags(kind, metrics, tolerances):
    """Derive the pass/fail flags from metrics and tolerances.

    Used both to build reports and to audit persisted ones, so every flag is
    a pure function of the stored numbers.
    """
    flags = {}
    if kind in ("meanfield", "counterexample"):
        flags["mean_gap_le_w1"] = metrics["mean_gap"] <= metrics["w1"] + 1e-9
    if kind == "meanfield":
        if "w1_max" in tolerances:
            flags["w1_within"] = metrics["w1"] <= tolerances["w1_max"]
        if "ratio_sigma" in tolerances:
            flags["ratio_within_sigma"] = (
                abs(metrics["ratio_mean"] - metrics["ref_mean"])
                <= tolerances["ratio_sigma"] * metrics["ratio_se"]
            )
        if "ratio_band" in tolerances:
            lo, hi = tolerances["ratio_band"]
            flags["ratio_in_band"] = lo <= metrics["ratio_mean"] <= hi
    elif kind == "counterexample":
        sigma = tolerances.get("separation_sigma", 3.0)
        mean_sep = metrics["separation_gap"] > sigma * metrics["ratio_se"]
        w1_sep = metrics["w1"] > tolerances.get("w1_separation_min", np.inf)
        flags["separation_as_expected"] = (mean_sep or w1_sep) == metrics["expected_separation"]
    elif kind == "envelope":
        if not metrics.get("applicable", True):
            flags["degenerate_flagged"] = metrics["early_hit_probability"] >= 1.0
        else:
            flags["alpha_within"] = metrics["alpha"] <= tolerances["alpha_max"]
            flags["beta_within"] = metrics["beta"] <= tolerances["beta_max"]
            flags["quantile_dev_within"] = (
                metrics["quantile_deviation"] <= tolerances["quantile_dev_max"]
            )
            if "min_meeting_ratio" in metrics:
                lo, hi = tolerances["min_meeting_ratio_band"]
                flags["min_meeting_ratio_in_band"] = (
                    lo <= metrics["min_meeting_ratio"] <= hi
                )
    elif kind == "duality":
        if metrics.get("point_mass"):
            flags["point_mass_all_zero"] = metrics["all_zero"]
        else:
            flags["distributions_match"] = metrics["w1"] <= metrics["permutation_threshold"]
    elif kind == "correlation":
        for entry in metrics["per_epsilon"]:
            key = f"eps_{entry['epsilon']:g}"
            flags[f"joints_below_marginals_{key}"] = (
                entry["max_joint"] <= entry["marginal_max"] + 1e-12
            )
            if metrics.get("transitive"):
                flags[f"product_bound_{key}"] = (
                    entry["product_bound_slack"] <= tolerances["product_bound_tol"]
                )
    return flags
