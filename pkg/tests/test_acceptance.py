"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured numbers and
its runtime; the lines are repeated in the pytest terminal summary. Run with
``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
"""
import json
import os
import sys
import tempfile
import time

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from _oracles import central_diff, sweep_min_risk  # noqa: E402
from satlab import cli, oracle, rng  # noqa: E402
from satlab.ensembles import gence_plan, run_timecat  # noqa: E402
from satlab.mixtures import (  # noqa: E402
    DiscreteDistribution, MixtureSpec, canonical_mixture, counterexample_components, mix,
)
from satlab.models import (  # noqa: E402
    ArchSpec, ComposedModel, DictionaryExtractor, LinearHead, MlpExtractor, features_batch, flatten_params,
    grad_params, init_model, linear_model, loss_and_grad, same_params, unflatten_params,
)
from satlab.training import TrainConfig, direct_train, exact_zero_one_risk, pretrain  # noqa: E402
from satlab.transfer import linear_probe, linearization_error, ntk_probe  # noqa: E402

RESULTS = []


def report(n, title, checks, elapsed, limit=None):
    ok = all(v for v, _ in checks) and (limit is None or elapsed < limit)
    detail = "; ".join(f"{'ok' if v else 'BAD'} {d}" for v, d in checks)
    budget = f" (limit {limit:g}s)" if limit else ""
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} [{title}] {elapsed:.2f}s{budget}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# 1 ---------------------------------------------------------------------------

def test_criterion_1_counterexample():
    t0 = time.perf_counter()
    comps = counterexample_components()
    spec = canonical_mixture()
    merged = mix(spec)
    opt = oracle.optimal_affine_classifier(merged)
    ignored = [merged.points[i].features for i in opt.ignored_points]
    independent = sweep_min_risk(merged.X, merged.y, merged.mass)
    least = min(p.mass for p in merged.points)

    target = oracle.sparse_feature(merged)
    arch = ArchSpec()
    hits = 0
    for s in range(20):
        hits += pretrain(spec, arch, TrainConfig(seed=s)).surviving_gates == {target}

    pre = pretrain(spec, arch, TrainConfig())
    probes = [linear_probe(pre.model.extractor, c).exact_risk for c in comps]
    direct = [direct_train(c, arch, TrainConfig()).exact_risk for c in comps]
    elapsed = time.perf_counter() - t0
    checks = [
        (abs(opt.risk - 0.175) <= 1e-12 and abs(least - 0.175) <= 1e-12
         and abs(independent - 0.175) <= 1e-12, f"oracle risk {opt.risk:.6g} (sweep {independent:.6g})"),
        (ignored == [(-1.0, 0.0)], f"ignored {ignored}"),
        (hits >= 19, f"single matching gate in {hits}/20 seeds"),
        (all(abs(p - e) <= 1e-9 for p, e in zip(probes, (0, 0, 0.25, 0.25))), f"probe risks {probes}"),
        (direct == [0.0] * 4, f"direct risks {direct}"),
    ]
    assert report(1, "counterexample", checks, elapsed, 30)


# 2 ---------------------------------------------------------------------------

def _skewed_components():
    a = DiscreteDistribution.from_arrays([[0.0], [1.0], [2.0]], [1, 1, -1], [0.5, 0.3, 0.2])
    b = DiscreteDistribution.from_arrays([[3.0], [4.0]], [-1, 1], [0.9, 0.1])
    c = DiscreteDistribution.from_arrays([[5.0], [6.0]], [1, 1], [0.4, 0.6])
    return [a, b, c]


def test_criterion_2_covariance():
    t0 = time.perf_counter()
    comps = counterexample_components()
    covs = [oracle.covariance(0, c) for c in comps]
    probe = oracle.cancellation_set_probe(covs, 10000, 0)
    lams, reports = oracle.mixture_cov_sweep(0, comps, 200, 1)
    skew = _skewed_components()
    off = []
    for s in range(50):
        lam = rng.uniform_range(rng.derive_seed(s, 2), 3, 0.05, 1.0)
        off.append(oracle.covariance_report(0, MixtureSpec(tuple(skew), tuple(lam / lam.sum()))))
    constructed = oracle.covariance_report(0, MixtureSpec(tuple(comps), tuple(probe.constructed_lambda)))
    elapsed = time.perf_counter() - t0
    family_resid = max(r.identity_residual for r in reports + [constructed])
    off_resid = max(r.identity_residual for r in off)
    between = max(abs(r.between_term) for r in reports + [constructed])
    checks = [
        (np.allclose(covs, [0.5, -0.5, 0, 0], atol=1e-15), f"component covs {covs}"),
        (probe.trials == 10000 and probe.hits == 0, f"{probe.hits} hits in {probe.trials} draws"),
        (abs(probe.constructed_sum) < 1e-12 and abs(constructed.mixture_cov) < 1e-12,
         f"constructed lambda {[float(v) for v in probe.constructed_lambda]} sum {probe.constructed_sum:.3g}"),
        (family_resid <= 1e-12 and off_resid <= 1e-12,
         f"identity residual {max(family_resid, off_resid):.3g} over {len(reports) + 51} mixtures"),
        (between <= 1e-15, f"max |between_term| on family {between:.3g}"),
    ]
    assert report(2, "covariance", checks, elapsed, 5)


# 3 ---------------------------------------------------------------------------

def test_criterion_3_ntk():
    t0 = time.perf_counter()
    spec = canonical_mixture()
    X = mix(spec).X
    lin = linear_model([0.6, -0.8], 0.2)
    lin_err = max(linearization_error(lin, rng.uniform_range(s, 3, -100, 100), X) for s in range(20))

    arch = ArchSpec(kind="mlp", input_dim=2, hidden=(8,))
    model = pretrain(spec, arch, TrainConfig(steps=3000, l1_gate=0.0, l2=1e-3)).model
    P = len(flatten_params(model))
    all_ratios = []
    for s in range(5):
        d = rng.uniform_range(rng.derive_seed(s, 11), P, -1, 1)
        d = d / np.linalg.norm(d) * 0.1
        errs = [linearization_error(model, d / 2**h, X) for h in range(4)]
        all_ratios += [a / b for a, b in zip(errs, errs[1:])]
    rows = []
    for c in spec.components:
        rows.append((ntk_probe(model, c).exact_risk, linear_probe(model.extractor, c).exact_risk))
    elapsed = time.perf_counter() - t0
    checks = [
        (lin_err < 1e-12, f"linear-model error {lin_err:.3g}"),
        (all(3 <= r <= 5 for r in all_ratios),
         f"halving ratios in [{min(all_ratios):.3f}, {max(all_ratios):.3f}] (5 directions x 3 halvings)"),
        (all(a <= b + 1e-12 for a, b in rows), f"(ntk, linear) risks {rows}"),
    ]
    assert report(3, "ntk", checks, elapsed, 30)


# 4 ---------------------------------------------------------------------------

def test_criterion_4_timecat():
    t0 = time.perf_counter()
    dec, gains, drift = 0, [], []
    for s in range(10):
        rep = run_timecat(gence_plan(s))
        a, b = rep.row(1), rep.row(4)
        dec += b.minority_mean < a.minority_mean
        gains.append(a.minority_mean - b.minority_mean)
        drift.append(abs(a.in_mixture_risk - b.in_mixture_risk))
    elapsed = time.perf_counter() - t0
    checks = [
        (dec >= 8, f"minority risk decreases 1->4 in {dec}/10 seeds"),
        (np.mean(gains) >= 0.05, f"mean improvement {np.mean(gains):.4f}"),
        (max(drift) <= 0.02, f"max in-mixture change {max(drift):.4f}"),
    ]
    assert report(4, "timecat", checks, elapsed, 600)


# 5 ---------------------------------------------------------------------------

GRAD_ARCHS = [
    ArchSpec(kind="dictionary", input_dim=2),
    ArchSpec(kind="dictionary", input_dim=8),
    ArchSpec(kind="mlp", input_dim=2, hidden=(8,), activation="tanh"),
    ArchSpec(kind="mlp", input_dim=3, hidden=(5, 4), activation="tanh"),
    ArchSpec(kind="mlp", input_dim=2, hidden=(6, 3), activation="relu"),
]


def _random_models(n, seed):
    for i in range(n):
        if i % 3 == 0:
            w = rng.uniform_range(rng.derive_seed(seed, i), 3, -2, 2)
            yield ComposedModel(DictionaryExtractor([1.0, 1.0]), LinearHead(w[:2], w[2]))
        else:
            a = ArchSpec(kind="dictionary" if i % 3 == 1 else "mlp", input_dim=2, hidden=(4,))
            m = init_model(a, rng.derive_seed(seed, i))
            v = flatten_params(m)
            yield unflatten_params(m, rng.uniform_range(rng.derive_seed(seed, i, 1), len(v), -3, 3))


def _oracle_never_beaten():
    comps = counterexample_components()
    dists = [*comps, mix(canonical_mixture()), mix(MixtureSpec(tuple(comps), (0.25,) * 4)),
             mix(MixtureSpec(tuple(comps), (0.05, 0.15, 0.3, 0.5)))]
    worst = np.inf
    for k, d in enumerate(dists):
        best = oracle.optimal_affine_classifier(d).risk
        for m in _random_models(200, k):
            if isinstance(m.extractor, MlpExtractor):
                # compare an MLP with the best affine head on its own features
                ref = oracle.optimal_risk_on_features(features_batch(m.extractor, d.X), d.y, d.mass)
            else:
                ref = best
            worst = min(worst, exact_zero_one_risk(m, d) - ref)
    return worst >= -1e-12, f"min(random - oracle) over {len(dists)}x200 models = {worst:.3g}"


def _gradients():
    worst = 0.0
    for arch in GRAD_ARCHS:
        for loss in ("logistic", "squared"):
            for k in range(50):
                m = init_model(arch, 1000 + k)
                v = flatten_params(m) + rng.uniform_range(rng.derive_seed(k, 9), len(flatten_params(m)), -.5, .5)
                m = unflatten_params(m, v)
                x = rng.uniform_range(rng.derive_seed(k, 8), arch.input_dim, -1.5, 1.5)
                y = 1 if k % 2 else -1
                g = grad_params(m, x, y, loss)

                def f(p):
                    return loss_and_grad(unflatten_params(m, p), x[None, :], np.array([y]), np.ones(1), loss)[0]

                fd = central_diff(f, v)
                worst = max(worst, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))))
    return worst < 1e-6, f"max relative gradient error {worst:.3g} ({len(GRAD_ARCHS)} archs x 2 losses x 50)"


def _determinism():
    cfg = TrainConfig(steps=500, seed=4)
    a, b = pretrain(canonical_mixture(), GRAD_ARCHS[2], cfg), pretrain(canonical_mixture(), GRAD_ARCHS[2], cfg)
    same = same_params(a.model, b.model) and a.loss_trace == b.loss_trace

    def read(d):
        return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))}

    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "c.json")
        with open(cfg_path, "w") as f:
            json.dump({"train": {"steps": 1500}}, f)
        out = os.path.join(tmp, "out")
        codes = [cli.main(["counterexample", "--config", cfg_path, "--out", out])]
        first = read(out)
        codes.append(cli.main(["counterexample", "--config", cfg_path, "--out", out, "--jobs", "2"]))
        rerun_same = read(out) == first
        with open(cfg_path, "w") as f:
            json.dump({"train": {"steps": 200, "loss": "squared", "step_size": 50}}, f)
        codes.append(cli.main(["counterexample", "--config", cfg_path, "--out", out]))
        with open(cfg_path, "w") as f:
            json.dump({"unknown": 1}, f)
        codes.append(cli.main(["counterexample", "--config", cfg_path, "--out", out]))
        kept = read(out) == first
        leftovers = [n for n in os.listdir(tmp) if n.startswith(".satlab")]
    ok = same and rerun_same and kept and not leftovers and codes == [0, 0, 3, 2]
    return ok, (f"training repeatable {same}, rerun byte-identical {rerun_same}, exit codes {codes}, "
                f"failed runs left output intact {kept} with {len(leftovers)} temp dirs")


def test_criterion_5_properties():
    t0 = time.perf_counter()
    checks = [_oracle_never_beaten(), _gradients(), _determinism()]
    assert report(5, "property suites", checks, time.perf_counter() - t0)


if __name__ == "__main__":
    fns = [test_criterion_1_counterexample, test_criterion_2_covariance, test_criterion_3_ntk,
           test_criterion_4_timecat, test_criterion_5_properties]
    failed = 0
    for fn in fns:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
