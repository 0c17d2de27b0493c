"""Experiment orchestration: config parsing, dispatch, artifacts, exit codes.

One experiment per invocation.  Artifacts are a summary.json plus CSV
files under data/; identical config and seed give byte-identical
artifacts in single-worker mode, and identical verdicts for any worker
count (replica chunks are merged in index order).

Exit codes: 0 all requested verdicts pass; 1 runtime failure; 2 config
error; 3 preconditions unmet without --exploratory.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bdp, coupling, stats, walk
from .environment import InitDistSpec, LatticeEnvironment
from .rng import StreamPool


class ConfigError(ValueError):
    pass


_SCHEMA_VERSION = 1
_TOP_KEYS = {"version", "model", "run", "analysis"}
_MODEL_KEYS = {"d", "params", "phi", "pi", "init"}
_RUN_KEYS = {"stop", "replicas", "seed", "workers"}


def _require_keys(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


class ExperimentConfig:
    """Validated experiment description; every condition check is recorded."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _require_keys(raw, _TOP_KEYS, "config")
        if raw.get("version") != _SCHEMA_VERSION:
            raise ConfigError(f"config version must be {_SCHEMA_VERSION}")
        model = raw.get("model")
        if not isinstance(model, dict):
            raise ConfigError("missing model block")
        _require_keys(model, _MODEL_KEYS, "model")
        try:
            self.d = int(model["d"])
            self.params = bdp.BDParams.from_json_dict(model["params"])
            phi = model.get("phi", {"table": [1.0], "tail": 1.0})
            self.phi = bdp.make_rate_function(phi["table"], phi["tail"])
            self.pi = walk.JumpDistribution.from_json_value(
                model.get("pi", [{"dx": [1], "p": 0.5}, {"dx": [-1], "p": 0.5}]))
            self.init = InitDistSpec.from_json_value(model.get("init", "zero"))
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"bad model block: {exc}") from exc
        if self.pi.d != self.d:
            raise ConfigError("pi dimension does not match d")
        run = raw.get("run", {})
        _require_keys(run, _RUN_KEYS, "run")
        self.stop = run.get("stop", {"n_jumps": 100})
        if not (isinstance(self.stop, dict)
                and ({"n_jumps", "t_end"} & set(self.stop))):
            raise ConfigError("run.stop needs n_jumps or t_end")
        self.replicas = int(run.get("replicas", 1000))
        self.seed = int(run.get("seed", 0))
        self.workers = int(run.get("workers", 1))
        self.analysis = raw.get("analysis", {})
        self.raw = raw

    def conditions(self) -> dict:
        erg = bdp.check_ergodic(self.params)
        strong = bdp.check_strong_ergodic(self.params)
        return {
            "ergodic": erg["holds"],
            "ergodic_sum": erg["value"],
            "strongly_ergodic": strong["holds"],
            "strongly_ergodic_sum": strong["value"],
            "phi_non_increasing": self.phi.monotone,
            "phi_strictly_positive": self.phi.strictly_positive,
            "pi_mean_zero": self.pi.mean_zero,
            "pi_symmetric": self.pi.symmetric,
            "pi_support_radius": self.pi.support_radius,
            "init_dominated_by_stationary":
                self.init.dominated_by_stationary(self.params),
        }


def _float_cell(v) -> str:
    return repr(float(v))


def write_artifacts(out_dir: Path, summary: dict, csvs: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "data").mkdir(exist_ok=True)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, (header, rows) in csvs.items():
        with open(out_dir / "data" / name, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(c) for c in row) + "\n")


def _chunked(replicas: int, workers: int) -> list:
    k = max(1, math.ceil(replicas / max(workers, 1) / 4))
    return [(lo, min(lo + k, replicas)) for lo in range(0, replicas, k)]


def _replica_worker(payload):
    cfg = ExperimentConfig(payload["config"])
    lo, hi = payload["range"]
    return _RUNNERS[payload["kind"]](cfg, lo, hi)


def map_replicas(kind: str, cfg: ExperimentConfig) -> list:
    """Per-replica records, merged in replica order regardless of workers."""
    chunks = _chunked(cfg.replicas, cfg.workers)
    payloads = [{"config": cfg.raw, "range": c, "kind": kind} for c in chunks]
    if cfg.workers <= 1:
        parts = [_replica_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_replica_worker, payloads))
    out = []
    for part in parts:
        out.extend(part)
    return out


def _run_mu_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> list:
    pool = StreamPool()
    n = int(cfg.stop.get("n_jumps", 100))
    rows = []
    for rep in range(lo, hi):
        env = LatticeEnvironment(cfg.d, cfg.params, cfg.init,
                                 coupling.replica_seed(cfg.seed, rep),
                                 pool=pool, anchored=True)
        if cfg.phi.strictly_positive:
            path = walk.simulate_timechange(env, cfg.phi, cfg.pi,
                                            {"n_jumps": n})
        else:
            path = walk.simulate_thinning(env, cfg.phi, cfg.pi,
                                          {"n_jumps": n})
        rows.append((float(path.taus[-1]), float(path.taus[n // 2]),
                     float(path.taus[1])))
    return rows


def _run_endpoint_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> list:
    pool = StreamPool()
    t_end = float(cfg.stop["t_end"])
    rows = []
    for rep in range(lo, hi):
        env = LatticeEnvironment(cfg.d, cfg.params, cfg.init,
                                 coupling.replica_seed(cfg.seed, rep),
                                 pool=pool, anchored=True)
        if cfg.phi.strictly_positive:
            path = walk.simulate_timechange(env, cfg.phi, cfg.pi,
                                            {"t_end": t_end})
        else:
            path = walk.simulate_thinning(env, cfg.phi, cfg.pi,
                                          {"t_end": t_end})
        rows.append(tuple(int(v) for v in path.positions[path.jump_count(t_end)]))
    return rows


def _run_window_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> list:
    pool = StreamPool()
    ns = tuple(int(v) for v in cfg.analysis.get("jumps", (200, 400)))
    M = int(cfg.analysis.get("window_radius", 1))
    rows = []
    use_tc = cfg.phi.strictly_positive
    for rep in range(lo, hi):
        env = LatticeEnvironment(cfg.d, cfg.params, cfg.init,
                                 coupling.replica_seed(cfg.seed, rep),
                                 pool=pool, anchored=use_tc)
        if use_tc:
            path = walk.simulate_timechange(env, cfg.phi, cfg.pi,
                                            {"n_jumps": max(ns)},
                                            record_windows=(M, ns))
            wins = path.windows
        else:
            path = walk.simulate_thinning(env, cfg.phi, cfg.pi,
                                          {"n_jumps": max(ns)})
            wins = {nn: walk.window_states_at(env, path, nn, M) for nn in ns}
        rows.append(tuple(wins[nn] for nn in ns))
    return rows


def _run_domination_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> list:
    n_jumps = int(cfg.stop.get("n_jumps", 100))
    rows = []
    for rep in range(lo, hi):
        rec = coupling.dominating_array(
            cfg.d, cfg.params, cfg.phi, cfg.pi, cfg.init, n_jumps,
            seed=coupling.replica_seed(cfg.seed, rep))
        rows.append((rec.jump_order_violations, rec.order_violations,
                     rec.audit_checks, rec.audit_violations,
                     rec.refresh_values.tolist(),
                     float(rec.taus[-1]), float(rec.taus_dominating[-1])))
    return rows


def _run_table_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> list:
    N = int(cfg.analysis.get("table_n", 30))
    rows = []
    for rep in range(lo, hi):
        tab = coupling.dominated_array(
            cfg.d, cfg.params, cfg.phi, cfg.pi, N,
            seed=coupling.replica_seed(cfg.seed ^ 0x5AB, rep))
        rows.append((tab.superadditivity_violations, tab.order_violations))
    return rows


_RUNNERS = {
    "mu": _run_mu_chunk,
    "endpoint": _run_endpoint_chunk,
    "window": _run_window_chunk,
    "domination": _run_domination_chunk,
    "table": _run_table_chunk,
}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_check(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    reports = []
    nu = bdp.stationary_distribution(cfg.params)
    results = {"stationary_head": [float(v) for v in nu.weights[:8]]}
    if cfg.phi.strictly_positive:
        nupsi = bdp.modified_stationary(cfg.params, cfg.phi)
        dominated = bdp.cdf_dominates(nupsi, nu)
        k = min(len(nupsi.weights), len(nu.weights))
        gap = float(np.min(nupsi.cdf()[:k] - nu.cdf()[:k]))
        reports.append(stats.TestReport(
            "modified_stationary_dominated", -gap, 1e-12, 0.0,
            "pass" if dominated else "fail", [k]).to_json_dict())
        results["modified_stationary_head"] = \
            [float(v) for v in nupsi.weights[:8]]
    ok = conds["ergodic"] and conds["strongly_ergodic"] and \
        all(r["verdict"] == "pass" for r in reports)
    summary = _summary("check", cfg, conds, results, reports,
                       "pass" if ok else "fail", exploratory)
    write_artifacts(out, summary, {})
    return 0 if ok else 1


def cmd_simulate(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    env = LatticeEnvironment(cfg.d, cfg.params, cfg.init, cfg.seed)
    construction = cfg.analysis.get("construction", "thinning")
    if construction == "thinning":
        path = walk.simulate_thinning(env, cfg.phi, cfg.pi, cfg.stop)
    elif construction == "timechange":
        path = walk.simulate_timechange(env, cfg.phi, cfg.pi, cfg.stop)
    else:
        raise ConfigError(f"unknown construction {construction!r}")
    reports = []
    if cfg.analysis.get("clock_ks", False):
        incs = walk.clock_increments(path, env, cfg.phi)
        alpha = float(cfg.analysis.get("alpha", 0.01))
        reports.append(stats.ks_exponential_test(incs, alpha).to_json_dict())
    rows = [(n, _float_cell(path.taus[n]),
             *[int(v) for v in path.positions[n]])
            for n in range(path.n_jumps + 1)]
    csvs = {"path.csv": (("n", "tau", *[f"x{i+1}" for i in range(cfg.d)]),
                         rows)}
    ok = all(r["verdict"] == "pass" for r in reports)
    summary = _summary("simulate", cfg, conds,
                       {"n_jumps": path.n_jumps,
                        "final_time": float(path.taus[-1]),
                        "construction": construction},
                       reports, "pass" if ok else "fail", exploratory)
    write_artifacts(out, summary, csvs)
    return 0 if ok else 1


def _mu_from_records(records, n: int) -> dict:
    arr = np.array([r[0] for r in records])
    halves = np.array([r[1] for r in records])
    firsts = np.array([r[2] for r in records])
    mu_hat = float(arr.mean()) / n
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) / n
    z = 2.5758293035489004
    return {
        "mu_hat": mu_hat, "se": se,
        "ci": (mu_hat - z * se, mu_hat + z * se),
        "mu_hat_half_horizon": float(halves.mean()) / max(n // 2, 1),
        "mean_first_jump_time": float(firsts.mean()),
        "n": n, "replicas": len(arr),
        "positive": mu_hat - z * se > 0.0,
    }


def cmd_estimate_mu(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    failures = coupling.check_mu_conditions(cfg.params, cfg.phi)
    if failures and not exploratory:
        _write_refusal(out, "estimate-mu", cfg, conds, failures)
        return 3
    n = int(cfg.stop.get("n_jumps", 100))
    res = _mu_from_records(map_replicas("mu", cfg), n)
    results = {"mu_hat": res["mu_hat"], "ci": list(res["ci"]),
               "n": res["n"], "replicas": res["replicas"],
               "se": res["se"],
               "mu_hat_half_horizon": res["mu_hat_half_horizon"],
               "mean_first_jump_time": res["mean_first_jump_time"]}
    reports = [stats.TestReport("mu_positive", 0.0,
                                res["ci"][0], 0.01,
                                "pass" if res["positive"] else "fail",
                                [res["replicas"]], relation="le").to_json_dict()]
    ok = res["positive"]
    summary = _summary("estimate-mu", cfg, conds, results, reports,
                       "pass" if ok else "fail",
                       exploratory or bool(failures))
    write_artifacts(out, summary, {})
    return 0 if ok else 1


def _mu_subconfig(cfg: ExperimentConfig) -> ExperimentConfig:
    blk = dict(cfg.analysis.get("mu", {}))
    raw = json.loads(json.dumps(cfg.raw))
    raw["run"]["stop"] = {"n_jumps": int(blk.get("n", 100))}
    raw["run"]["replicas"] = int(blk.get("replicas", 2000))
    raw["run"]["seed"] = cfg.seed ^ 0x11C0
    raw["analysis"] = {}
    return ExperimentConfig(raw)


def cmd_lln(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    failures = coupling.check_mu_conditions(cfg.params, cfg.phi)
    if failures and not exploratory:
        _write_refusal(out, "lln", cfg, conds, failures)
        return 3
    t_end = float(cfg.stop["t_end"])
    endpoints = np.array(map_replicas("endpoint", cfg), dtype=float)
    lln = stats.lln_slope(endpoints, t_end)
    mu_cfg = _mu_subconfig(cfg)
    mu = _mu_from_records(map_replicas("mu", mu_cfg),
                          int(mu_cfg.stop["n_jumps"]))
    alpha = float(cfg.analysis.get("alpha", 0.01))
    rep = stats.velocity_consistency(lln, cfg.pi.mean, mu, alpha)
    results = {"velocity": [float(v) for v in lln["velocity"]],
               "velocity_ci": [[float(v) for v in lln["ci"][0]],
                               [float(v) for v in lln["ci"][1]]],
               "mu_hat": mu["mu_hat"],
               "target": [float(v) for v in cfg.pi.mean / mu["mu_hat"]]}
    summary = _summary("lln", cfg, conds, results, [rep.to_json_dict()],
                       rep.verdict, exploratory or bool(failures))
    write_artifacts(out, summary, {})
    return 0 if rep.passed else 1


def cmd_clt(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    failures = coupling.check_mu_conditions(cfg.params, cfg.phi)
    if not cfg.pi.mean_zero:
        failures.append("step law is not centered")
    if cfg.d == 2 and not cfg.pi.symmetric:
        failures.append("d=2 needs a symmetric step law")
    if failures and not exploratory:
        _write_refusal(out, "clt", cfg, conds, failures)
        return 3
    t_end = float(cfg.stop["t_end"])
    endpoints = np.array(map_replicas("endpoint", cfg), dtype=float)
    mu_cfg = _mu_subconfig(cfg)
    mu = _mu_from_records(map_replicas("mu", mu_cfg),
                          int(mu_cfg.stop["n_jumps"]))
    scaled = endpoints / math.sqrt(t_end / mu["mu_hat"])
    alpha = float(cfg.analysis.get("alpha", 0.01))
    rep = stats.normality_test(scaled, cfg.pi.cov, alpha)
    rows = [tuple(_float_cell(v) for v in row) for row in scaled]
    csvs = {"scaled_endpoints.csv":
            (tuple(f"x{i+1}" for i in range(cfg.d)), rows)}
    results = {"mu_hat": mu["mu_hat"], "t": t_end,
               "replicas": len(endpoints)}
    summary = _summary("clt", cfg, conds, results, [rep.to_json_dict()],
                       rep.verdict, exploratory or bool(failures))
    write_artifacts(out, summary, csvs)
    return 0 if rep.passed else 1


def cmd_dominance_audit(cfg: ExperimentConfig, out: Path,
                        exploratory: bool) -> int:
    conds = cfg.conditions()
    failures = []
    if not cfg.phi.monotone:
        failures.append("rate function is not non-increasing")
    if not conds["init_dominated_by_stationary"]:
        failures.append("initial law not dominated by the stationary law")
    if failures and not exploratory:
        _write_refusal(out, "dominance-audit", cfg, conds, failures)
        return 3
    dom = map_replicas("domination", cfg)
    table = map_replicas("table", cfg) if cfg.analysis.get("table_n") else []
    violation_rows = []
    refresh_pool = []
    for rep_idx, rec in enumerate(dom):
        jv, ov, ac, av, refresh, tau_n, btau_n = rec
        refresh_pool.extend(refresh)
        if jv or ov or av:
            violation_rows.append((rep_idx, jv, ov, av))
    sup_viol = sum(r[0] for r in table)
    ord_viol = sum(r[1] for r in table)
    for i, r in enumerate(table):
        if r[0] or r[1]:
            violation_rows.append((f"table_{i}", 0, r[1], r[0]))
    reports = []
    alpha = float(cfg.analysis.get("alpha", 0.01))
    nu = bdp.stationary_distribution(cfg.params, mass_tol=1e-15)
    counts = np.bincount(np.array(refresh_pool, dtype=int),
                         minlength=len(nu.weights)).astype(float)
    k = len(nu.weights)
    reports.append(stats.chi_square_gof_test(
        counts[:k], nu.weights / nu.weights.sum(), alpha,
        name="refresh_marginal_stationary").to_json_dict())
    total_jv = sum(r[0] for r in dom)
    total_ov = sum(r[1] for r in dom)
    total_av = sum(r[3] for r in dom)
    for nm, v in (("jump_time_order", total_jv),
                  ("pathwise_order", total_ov),
                  ("audit_order", total_av),
                  ("superadditivity", sup_viol),
                  ("restart_order", ord_viol)):
        reports.append(stats.TestReport(
            f"zero_{nm}_violations", float(v), 0.0, 0.0,
            "pass" if v == 0 else "fail", [len(dom)]).to_json_dict())
    csvs = {"violations.csv": (("replica", "jump_order", "pathwise_order",
                                "audit_order"), violation_rows)}
    ok = all(r["verdict"] == "pass" for r in reports)
    results = {"replicas": len(dom), "audit_checks": sum(r[2] for r in dom),
               "refresh_count": len(refresh_pool),
               "table_replicas": len(table)}
    summary = _summary("dominance-audit", cfg, conds, results, reports,
                       "pass" if ok else "fail", exploratory)
    write_artifacts(out, summary, csvs)
    return 0 if ok else 1


def cmd_env_window(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    wconds = stats.window_conditions(cfg.pi, cfg.phi, cfg.d)
    flagged = not wconds["any"]
    if flagged and not exploratory:
        _write_refusal(out, "env-window", cfg, conds,
                       ["no convergence hypothesis holds"])
        return 3
    ns = tuple(int(v) for v in cfg.analysis.get("jumps", (200, 400)))
    M = int(cfg.analysis.get("window_radius", 1))
    rows = map_replicas("window", cfg)
    wins = {}
    for i, nn in enumerate(ns):
        counts: dict = {}
        for row in rows:
            counts[row[i]] = counts.get(row[i], 0) + 1
        wins[nn] = stats.WindowDistribution(M=M, d=cfg.d, counts=counts,
                                            replicas=len(rows))
    results = {"jumps": list(ns), "window_radius": M,
               "replicas": len(rows), "conditions": wconds}
    if len(ns) >= 2:
        tv = stats.tv_distance(wins[ns[0]].freqs(), wins[ns[-1]].freqs())
        results["tv_between_first_last"] = tv
    csvs = {}
    for nn, win in wins.items():
        rows_n = sorted(("|".join(str(s) for s in cfg_), cnt)
                        for cfg_, cnt in win.counts.items())
        csvs[f"window_n{nn}.csv"] = (("config", "count"), rows_n)
    summary = _summary("env-window", cfg, conds, results, [],
                       "pass", exploratory or flagged)
    write_artifacts(out, summary, csvs)
    return 0


def cmd_ladder(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    n = int(cfg.stop.get("n_jumps", 400))
    M = int(cfg.analysis.get("window_radius", 0))
    pool = StreamPool()
    complete_exc, complete_chi, censored = [], [], 0
    for rep in range(cfg.replicas):
        emb = walk.embedded_chain(coupling.replica_seed(cfg.seed, rep),
                                  pool, cfg.pi, n)
        z = walk.backward_walk(emb, n + 1)
        for step in stats.ladder_statistics(z[:, 0], M):
            if step.complete:
                complete_exc.append(step.excursion)
                complete_chi.append(step.overshoot)
            else:
                censored += 1
    exc = np.array(complete_exc, dtype=float)
    chi = np.array(complete_chi, dtype=float)
    grid = [1, 2, 4, 8, 16, 32]
    rows = [(m, _float_cell((exc > m).mean() if len(exc) else 0.0),
             _float_cell((chi > m).mean() if len(chi) else 0.0))
            for m in grid]
    csvs = {"ladder_tails.csv": (("m", "excursion_survival",
                                  "overshoot_survival"), rows)}
    results = {"complete_steps": int(len(exc)), "censored_steps": censored,
               "mean_excursion": float(exc.mean()) if len(exc) else None}
    summary = _summary("ladder", cfg, conds, results, [], "pass",
                       exploratory)
    write_artifacts(out, summary, csvs)
    return 0


def cmd_tails(cfg: ExperimentConfig, out: Path, exploratory: bool) -> int:
    conds = cfg.conditions()
    reports = []
    results = {}
    csvs = {}
    fp = cfg.analysis.get("first_passage")
    if fp:
        res = stats.overshoot_tails(
            cfg.pi, L_grid=tuple(fp.get("levels", (0,))),
            m_grid=tuple(fp.get("m_grid", (16, 64, 256, 1024))),
            replicas=int(fp.get("replicas", cfg.replicas)),
            seed=cfg.seed)
        results["first_passage"] = {
            "m_grid": [int(v) for v in res["m_grid"]],
            "survival_plus": [float(v) for v in res["survival_plus"]],
            "scaled": [float(p * math.sqrt(m))
                       for m, p in zip(res["m_grid"], res["survival_plus"])],
            "censored": res["censored"],
        }
        if res["slope_overshoot"] is not None:
            results["first_passage"]["overshoot_slope"] = \
                [float(v) for v in res["slope_overshoot"]]
        csvs["first_passage.csv"] = (
            ("m", "survival_plus", "survival_minus"),
            [(int(m), _float_cell(p), _float_cell(q))
             for m, p, q in zip(res["m_grid"], res["survival_plus"],
                                res["survival_minus"])])
    im = cfg.analysis.get("interval_max")
    if im:
        res = stats.interval_max_tail(
            cfg.params, tuple(im.get("L", (4, 8, 16, 32))),
            rate=float(im.get("rate", 1.0)),
            replicas=int(im.get("replicas", cfg.replicas)),
            seed=cfg.seed)
        results["interval_max"] = {
            "L": [int(v) for v in res["L"]],
            "p_exceed": [float(v) for v in res["p_exceed"]],
            "strictly_decreasing": res["strictly_decreasing"],
        }
        reports.append(stats.TestReport(
            "interval_max_decreasing", 0.0,
            0.0, 0.0,
            "pass" if res["consistent_with_superpolynomial_decay"] else "fail",
            [int(im.get("replicas", cfg.replicas))]).to_json_dict())
        csvs["interval_max.csv"] = (
            ("L", "threshold", "p_exceed"),
            [(int(L), _float_cell(t), _float_cell(p))
             for L, t, p in zip(res["L"], res["thresholds"],
                                res["p_exceed"])])
    ok = all(r["verdict"] == "pass" for r in reports)
    summary = _summary("tails", cfg, conds, results, reports,
                       "pass" if ok else "fail", exploratory)
    write_artifacts(out, summary, csvs)
    return 0 if ok else 1


def _summary(command, cfg, conds, results, reports, verdict, exploratory):
    # worker count is execution infrastructure, not experiment identity:
    # excluding it keeps artifacts byte-identical for any worker split
    echo = json.loads(json.dumps(cfg.raw))
    echo.get("run", {}).pop("workers", None)
    return {
        "command": command,
        "config": echo,
        "conditions": conds,
        "exploratory": bool(exploratory),
        "results": results,
        "reports": reports,
        "verdict": verdict,
    }


def _write_refusal(out, command, cfg, conds, failures):
    summary = _summary(command, cfg, conds, {"refused": failures}, [],
                       "conditions-unmet", False)
    write_artifacts(out, summary, {})


_COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "estimate-mu": cmd_estimate_mu,
    "lln": cmd_lln,
    "clt": cmd_clt,
    "dominance-audit": cmd_dominance_audit,
    "env-window": cmd_env_window,
    "ladder": cmd_ladder,
    "tails": cmd_tails,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bdwalk",
        description="Simulation and verification of random walks driven by "
                    "birth-and-death environments")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=Path("bdwalk-out"))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--replicas", type=int, default=None)
    parser.add_argument("--exploratory", action="store_true")
    args = parser.parse_args(argv)
    try:
        raw = json.loads(args.config.read_text())
        if args.seed is not None:
            raw.setdefault("run", {})["seed"] = args.seed
        if args.workers is not None:
            raw.setdefault("run", {})["workers"] = args.workers
        if args.replicas is not None:
            raw.setdefault("run", {})["replicas"] = args.replicas
        cfg = ExperimentConfig(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        code = _COMMANDS[args.command](cfg, args.out, args.exploratory)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except coupling.ConditionsUnmet as exc:
        print(f"conditions unmet: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if code == 0:
        print(f"{args.command}: ok ({args.out}/summary.json)")
    elif code == 3:
        print(f"{args.command}: refused, conditions unmet", file=sys.stderr)
    else:
        print(f"{args.command}: verdict fail ({args.out}/summary.json)",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
