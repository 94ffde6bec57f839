"""``satlab`` command line: one subcommand per experiment.

    satlab <counterexample|covariance|ntk|timecat> --config PATH --out DIR [--jobs N] [--seed S]

Configs are JSON checked against ``satlab/schemas/<command>.json`` (unknown
fields are rejected); defaults come from the schema and the filled-in config
is written to ``DIR/effective_config.json``. Outputs are assembled in a
temporary sibling directory and renamed into place only on success, and
contain nothing run-dependent, so reruns produce identical bytes.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np
from jsonschema import Draft202012Validator

from . import oracle, rng
from .ensembles import gence_plan, gence_train_config, run_timecat
from .errors import ConfigError, NonFinite, SatlabError
from .mixtures import MixtureSpec, counterexample_components, mix
from .models import ArchSpec, flatten_params, linear_model
from .training import TrainConfig, direct_train, pretrain
from .transfer import gap_row, gap_table_csv, gap_table_json, linear_probe, linearization_error, ntk_probe

log = logging.getLogger("satlab")

COMMANDS = ("counterexample", "covariance", "ntk", "timecat")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMPONENT_NAMES = ("P1", "P2", "P3", "P4")


# -- config ----------------------------------------------------------------

def load_schema(command: str) -> dict:
    text = resources.files("satlab").joinpath("schemas", f"{command}.json").read_text()
    return json.loads(text)


def fill_defaults(schema: dict, doc):
    """Copy of ``doc`` with missing properties set from the schema's defaults."""
    if schema.get("type") != "object" or not isinstance(doc, dict):
        return doc
    out = dict(doc)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = json.loads(json.dumps(sub["default"]))
        if key in out:
            out[key] = fill_defaults(sub, out[key])
    return out


def _check(validator, doc):
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}")


def validate(command: str, doc) -> dict:
    """Validate, fill defaults and validate the result again; raises ConfigError."""
    schema = load_schema(command)
    v = Draft202012Validator(schema)
    _check(v, doc)
    filled = fill_defaults(schema, doc)
    _check(v, filled)
    return filled


def load_config(command: str, path: str, seed=None) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if seed is not None:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = {**doc, "seed": seed}
    return validate(command, doc)


def _train_cfg(doc: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(**doc, seed=seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _arch(doc: dict, input_dim: int) -> ArchSpec:
    return ArchSpec(input_dim=input_dim, **{**doc, "hidden": tuple(doc["hidden"])})


def _mixture(weights) -> MixtureSpec:
    w = np.asarray(weights, float)
    return MixtureSpec(tuple(counterexample_components()), tuple(w / w.sum()))


# -- output ----------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_atomic(out_dir: str, files: dict) -> None:
    """Write ``{name: text}`` into ``out_dir``, replacing it in one rename."""
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".satlab-", dir=parent)
    try:
        for name, text in sorted(files.items()):
            with open(os.path.join(tmp, name), "w", newline="") as f:
                f.write(text)
        old = None
        if os.path.exists(out_dir):
            old = tempfile.mkdtemp(prefix=".satlab-old-", dir=parent)
            os.rmdir(old)
            os.rename(out_dir, old)
        os.rename(tmp, out_dir)
        if old:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _pmap(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


# -- commands ----------------------------------------------------------------

def _direct(args):
    target, arch, cfg = args
    return direct_train(target, arch, cfg)


def cmd_counterexample(cfg: dict, jobs: int = 1) -> dict:
    spec = _mixture(cfg["lambda"])
    arch = _arch(cfg["arch"], 2)
    tc = _train_cfg(cfg["train"], cfg["seed"])
    comps = spec.components
    direct = _pmap(_direct, [(c, arch, tc) for c in comps], jobs)
    pre = pretrain(spec, arch, tc)
    probes = [linear_probe(pre.model.extractor, c) for c in comps]
    rows = [gap_row(n, d, p) for n, d, p in zip(COMPONENT_NAMES, direct, probes)]

    merged = mix(spec)
    opt = oracle.optimal_affine_classifier(merged)
    orows = []
    for n, c in zip(COMPONENT_NAMES, comps):
        orows.append((n, oracle.optimal_affine_classifier(c).risk,
                      oracle.optimal_risk_in_span(c, [0]), oracle.optimal_risk_in_span(c, [1])))
    orows.append(("mixture", opt.risk, oracle.optimal_risk_in_span(merged, [0]),
                  oracle.optimal_risk_in_span(merged, [1])))
    gates = {
        "pretrain": {"surviving": sorted(pre.surviving_gates), "exact_risk": pre.exact_risk,
                     "gates": [float(g) for g in pre.model.extractor.gates]
                     if cfg["arch"]["kind"] == "dictionary" else None,
                     "oracle_sparse_feature": oracle.sparse_feature(merged)},
        "direct": {n: sorted(d.surviving_gates) for n, d in zip(COMPONENT_NAMES, direct)},
    }
    oracle_doc = {
        "mixture_risk": opt.risk,
        "ignored_points": [list(merged.points[i].features) for i in sorted(opt.ignored_points)],
        "weights": list(spec.weights),
    }
    return {
        "gap_table.csv": gap_table_csv(rows),
        "gap_table.json": gap_table_json(rows) + "\n",
        "oracle.csv": _csv(("component", "oracle_risk", "span_phi1_risk", "span_phi2_risk"), orows),
        "oracle.json": _json(oracle_doc),
        "gates.json": _json(gates),
        "pretrain_trace.csv": pre.trace_csv(),
    }


def cmd_covariance(cfg: dict, jobs: int = 1) -> dict:
    comps = counterexample_components()
    phi = cfg["phi"]
    covs = np.array([oracle.covariance(phi, c) for c in comps])
    if not np.any(covs != 0):
        raise ConfigError("phi has zero covariance with the label on every component")
    probe = oracle.cancellation_set_probe(covs, cfg["trials"], rng.derive_seed(cfg["seed"], 0))
    lams, reports = oracle.mixture_cov_sweep(phi, comps, cfg["sweep_rows"], rng.derive_seed(cfg["seed"], 1))
    rows = []
    for lam, rep in zip(lams, reports):
        rows.append((*[float(v) for v in rep.weights], rep.mixture_cov, rep.weighted_sum, rep.between_term,
                     rep.identity_residual))
    doc = {
        "component_covs": [float(c) for c in covs],
        "trials": probe.trials, "hits": probe.hits, "hit_fraction": probe.hit_fraction,
        "tolerance": oracle.CANCEL_TOL, "min_abs_weighted_sum": probe.min_abs_sum,
        "cancellation": None,
    }
    if probe.constructed_lambda is not None:
        rep = oracle.covariance_report(phi, MixtureSpec(tuple(comps), tuple(probe.constructed_lambda)))
        doc["cancellation"] = {"lambda": [float(v) for v in probe.constructed_lambda],
                               "weighted_sum": probe.constructed_sum, **rep.to_dict()}
    canon = oracle.covariance_report(phi, _mixture([0.5, 0.2, 0.2, 0.1]))
    doc["canonical"] = canon.to_dict()
    cancel_rows = [("present", *doc["cancellation"]["lambda"], probe.constructed_sum)
                   if doc["cancellation"] else ("absent", "", "", "", "", "")]
    sweep = oracle.lambda_sweep_rows(comps, lams[:cfg["oracle_rows"]])
    sweep = [(*r[:-1], "" if r[-1] is None else r[-1]) for r in sweep]
    return {
        "covariance.json": _json(doc),
        "lambda_sweep.csv": _csv(("lambda1", "lambda2", "lambda3", "lambda4", "oracle_risk",
                                  "surviving_feature"), sweep),
        "sweep.csv": _csv(("lambda1", "lambda2", "lambda3", "lambda4", "mixture_cov", "weighted_sum",
                           "between_term", "identity_residual"), rows),
        "cancellation.csv": _csv(("status", "lambda1", "lambda2", "lambda3", "lambda4", "weighted_sum"),
                                 cancel_rows),
    }


def scaling_rows(label, model, direction, base_norm, halvings, X):
    rows, prev = [], None
    for h in range(halvings + 1):
        norm = base_norm / 2 ** h
        err = linearization_error(model, direction * norm, X)
        ratio = prev / err if prev and err > 0 else float("nan")
        rows.append((label, norm, err, ratio))
        prev = err
    return rows


def cmd_ntk(cfg: dict, jobs: int = 1) -> dict:
    spec = _mixture(cfg["lambda"])
    comps = spec.components
    arch = _arch(cfg["arch"], 2)
    pre = pretrain(spec, arch, _train_cfg(cfg["train"], cfg["seed"]))
    model = pre.model
    X = mix(spec).X

    def unit(seed, n):
        v = rng.uniform_range(seed, n, -1.0, 1.0)
        return v / np.linalg.norm(v)

    P = len(flatten_params(model))
    lin = linear_model(unit(rng.derive_seed(cfg["seed"], 3), 2), 0.0)
    rows = scaling_rows("linear", lin, unit(rng.derive_seed(cfg["seed"], 4), 3), cfg["delta_norm"],
                        cfg["halvings"], X)
    rows += scaling_rows(arch.kind, model, unit(rng.derive_seed(cfg["seed"], 5), P), cfg["delta_norm"],
                         cfg["halvings"], X)
    prows = []
    for n, c in zip(COMPONENT_NAMES, comps):
        lp, npb = linear_probe(model.extractor, c), ntk_probe(model, c)
        prows.append((n, lp.exact_risk, npb.exact_risk, npb.exact_risk <= lp.exact_risk + 1e-12))
    return {
        "linearization.csv": _csv(("model", "delta_norm", "error", "ratio"), rows),
        "probes.csv": _csv(("component", "linear_probe_risk", "ntk_probe_risk", "ntk_le_linear"), prows),
        "pretrain_trace.csv": pre.trace_csv(),
    }


def _timecat_seed(args):
    plan, = args
    return run_timecat(plan)


def cmd_timecat(cfg: dict, jobs: int = 1) -> dict:
    K = cfg["K"]
    weights = cfg["weights"]
    if weights is not None:
        if len(weights) != 2 * K:
            raise ConfigError(f"weights needs {2 * K} entries for K={K}")
        weights = list(np.asarray(weights, float) / np.sum(weights))
    tc = gence_train_config(K, base=_train_cfg({**cfg["train"], "steps": 0}, 0))
    seeds = [rng.derive_seed(cfg["seed"], i) for i in range(cfg["base_seeds"])]
    plans = [gence_plan(s, K=K, total_budget=cfg["total_budget"], splits=cfg["splits"], weights=weights,
                        cfg=tc, baseline_bonus=cfg["baseline_bonus"]) for s in seeds]
    reports = _pmap(_timecat_seed, [(p,) for p in plans], jobs)

    first = reports[0]
    header = ["method", "n", "steps_per_member", "total_steps"]
    cols = ["in_mixture", *first.target_names, "minority_mean"]
    for c in cols:
        header += [f"{c}_mean", f"{c}_std"]
    agg = []
    for i, r0 in enumerate(first.rows):
        vals = np.array([[r.rows[i].in_mixture_risk, *r.rows[i].target_risks, r.rows[i].minority_mean]
                         for r in reports])
        row = [r0.method, r0.n, r0.steps_per_member, r0.total_steps]
        for m, s in zip(vals.mean(axis=0), vals.std(axis=0)):
            row += [float(m), float(s)]
        agg.append(row)

    n_lo, n_hi = min(cfg["splits"]), max(cfg["splits"])
    dec = [r.row(n_hi).minority_mean < r.row(n_lo).minority_mean for r in reports]
    summary = {
        "base_seeds": [str(s) for s in seeds],
        "minority": [first.target_names[i] for i in first.minority],
        "compared_splits": [n_lo, n_hi],
        "minority_decreasing_seeds": int(sum(dec)),
        "mean_minority_improvement": float(np.mean([r.row(n_lo).minority_mean - r.row(n_hi).minority_mean
                                                    for r in reports])),
        "max_in_mixture_change": float(max(abs(r.row(n_lo).in_mixture_risk - r.row(n_hi).in_mixture_risk)
                                           for r in reports)),
        "per_seed": [r.to_dict() for r in reports],
    }
    long_rows = []
    for s, r in zip(seeds, reports):
        for line in r.to_long_csv().splitlines()[1:]:
            long_rows.append(f"{s},{line}")
    long_csv = "base_seed,method,n,steps_per_member,total_steps,column,risk,minority\n"
    long_csv += "".join(l + "\n" for l in long_rows)
    return {
        "timecat.csv": _csv(header, agg),
        "timecat.json": _json(summary),
        "timecat_long.csv": long_csv,
    }


HANDLERS = {
    "counterexample": cmd_counterexample,
    "covariance": cmd_covariance,
    "ntk": cmd_ntk,
    "timecat": cmd_timecat,
}


# -- entry point -------------------------------------------------------------

def _jobs(value) -> int:
    if value is None:
        env = os.environ.get("SATLAB_JOBS")
        if env is None or env == "":
            return 1
        value = env
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"jobs must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("jobs must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satlab", description="Feature-learning experiments on finite supports.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory (replaced atomically)")
    p.add_argument("--jobs", default=None, help="parallel workers (default: $SATLAB_JOBS or 1)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="satlab: %(message)s")
    try:
        jobs = _jobs(args.jobs)
        cfg = load_config(args.command, args.config, args.seed)
        log.info("effective config: %s", json.dumps(cfg, sort_keys=True))
        files = HANDLERS[args.command](cfg, jobs)
        files["effective_config.json"] = _json(cfg)
        write_atomic(args.out, files)
    except (NonFinite, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"satlab: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SatlabError) as e:
        print(f"satlab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
