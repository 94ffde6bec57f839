import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satlab import rng
from satlab.errors import DimMismatch, InvalidK, LabelConflict
from satlab.mixtures import (
    CANONICAL_LAMBDA, DiscreteDistribution, LabeledPoint, MixtureSpec, counterexample_components, dumps,
    embed_pair, gen_counterexample_family, loads, mix, sample,
)


def masses(d):
    return {p.features: p.mass for p in d.points}


def labels(d):
    return {p.features: p.label for p in d.points}


def test_components_as_listed(comps):
    p1, p2, p3, p4 = comps
    assert masses(p1) == {(1.0, 0.0): 0.5, (0.0, 1.0): 0.25, (0.0, -1.0): 0.25}
    assert labels(p1) == {(1.0, 0.0): 1, (0.0, 1.0): -1, (0.0, -1.0): -1}
    assert masses(p3) == {(0.0, 1.0): 0.5, (1.0, 0.0): 0.25, (-1.0, 0.0): 0.25}
    assert labels(p3) == {(0.0, 1.0): -1, (1.0, 0.0): 1, (-1.0, 0.0): 1}
    assert masses(p2)[(-1.0, 0.0)] == 0.5 and labels(p2)[(-1.0, 0.0)] == 1
    assert masses(p4)[(0.0, -1.0)] == 0.5 and labels(p4)[(0.0, -1.0)] == -1
    for c in comps:
        assert c.dim == 2
        assert abs(c.mass.sum() - 1) <= 1e-12


def test_canonical_merge(canon_dist):
    # hand-summed: lambda_j * mass_j over the four components
    lam = CANONICAL_LAMBDA
    want = {
        (1.0, 0.0): lam[0] * 0.5 + lam[2] * 0.25 + lam[3] * 0.25,
        (-1.0, 0.0): lam[1] * 0.5 + lam[2] * 0.25 + lam[3] * 0.25,
        (0.0, 1.0): lam[0] * 0.25 + lam[1] * 0.25 + lam[2] * 0.5,
        (0.0, -1.0): lam[0] * 0.25 + lam[1] * 0.25 + lam[3] * 0.5,
    }
    got = masses(canon_dist)
    assert set(got) == set(want)
    for k in want:
        assert abs(got[k] - want[k]) <= 1e-12
    assert abs(got[(1.0, 0.0)] - 0.325) <= 1e-12
    assert abs(got[(-1.0, 0.0)] - 0.175) <= 1e-12
    assert abs(got[(0.0, 1.0)] - 0.275) <= 1e-12
    assert abs(got[(0.0, -1.0)] - 0.225) <= 1e-12


def test_positive_on_axis_negative_off(canon_dist):
    for p in canon_dist.points:
        assert p.label == (1 if p.features[1] == 0 else -1)


def test_identity_mixture(comps):
    d = mix(MixtureSpec((comps[2],), (1.0,)))
    assert masses(d) == masses(comps[2]) and labels(d) == labels(comps[2])


def test_label_conflict():
    a = DiscreteDistribution((LabeledPoint((0.0,), 1, 1.0),), 1)
    b = DiscreteDistribution((LabeledPoint((0.0,), -1, 1.0),), 1)
    with pytest.raises(LabelConflict):
        mix(MixtureSpec((a, b), (0.5, 0.5)))


def test_dim_mismatch():
    a = DiscreteDistribution((LabeledPoint((0.0,), 1, 1.0),), 1)
    b = DiscreteDistribution((LabeledPoint((0.0, 1.0), 1, 1.0),), 2)
    with pytest.raises(DimMismatch):
        MixtureSpec((a, b), (0.5, 0.5))


@pytest.mark.parametrize("bad", [
    dict(weights=(0.5, 0.6)), dict(weights=(1.0, 0.0)), dict(weights=(1.0,)),
])
def test_mixture_weight_invariants(comps, bad):
    with pytest.raises(ValueError):
        MixtureSpec(tuple(comps[:2]), bad["weights"])


def test_distribution_invariants():
    with pytest.raises(ValueError):
        DiscreteDistribution((LabeledPoint((0.0,), 1, 0.5),), 1)
    with pytest.raises(ValueError):
        DiscreteDistribution((LabeledPoint((0.0,), 1, 0.5), LabeledPoint((0.0,), 1, 0.5)), 1)
    with pytest.raises(ValueError):
        LabeledPoint((0.0,), 0, 1.0)
    with pytest.raises(ValueError):
        LabeledPoint((0.0,), 1, 0.0)


lam_strategy = st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4).map(
    lambda v: tuple(np.asarray(v) / np.sum(v)))


@settings(max_examples=60, deadline=None)
@given(lam_strategy)
def test_mix_is_pointwise_linear(lam):
    comps = counterexample_components()
    spec = MixtureSpec(tuple(comps), lam)
    d = mix(spec)
    assert len(d) == 4
    assert abs(d.mass.sum() - 1) <= 1e-12
    for p in d.points:
        want = sum(l * c.mass_at(p.features) for l, c in zip(lam, comps))
        assert abs(p.mass - want) <= 1e-12


def test_family_base_case(comps):
    fam = gen_counterexample_family(2)
    assert len(fam) == 4
    for a, b in zip(fam, comps):
        assert masses(a) == masses(b) and labels(a) == labels(b)


def test_family_k4_coordinate_swap(comps):
    fam = gen_counterexample_family(4)
    assert len(fam) == 8
    for j in range(4):
        lo, hi = fam[j], fam[4 + j]
        moved = {(0.0, 0.0, x[0], x[1]): m for x, m in masses(comps[j]).items()}
        assert masses(hi) == moved
        swapped = {(x[2], x[3], x[0], x[1]): m for x, m in masses(hi).items()}
        assert swapped == masses(lo)
    for c in fam:
        assert abs(c.mass.sum() - 1) <= 1e-12


@pytest.mark.parametrize("K", [4, 6, 8])
def test_family_restricted_to_pair(comps, K):
    fam = gen_counterexample_family(K)
    for i, c in enumerate(fam):
        m = i // 4
        assert np.all(np.delete(c.X, [2 * m, 2 * m + 1], axis=1) == 0)
        local = {(x[2 * m], x[2 * m + 1]): v for x, v in masses(c).items()}
        assert local == masses(comps[i % 4])


@pytest.mark.parametrize("K", [0, 1, 3, -2, 2.0])
def test_family_bad_k(K):
    with pytest.raises(InvalidK):
        gen_counterexample_family(K)


def test_embed_pair(comps):
    e = embed_pair(comps[0], 6, 2)
    assert masses(e)[(0.0, 0.0, 0.0, 0.0, 1.0, 0.0)] == 0.5


def test_sample_frequency_single(comps):
    ds = sample(comps[0], 4000, 7)
    freq = np.mean(np.all(ds.X == [1.0, 0.0], axis=1))
    assert abs(freq - 0.5) <= 0.03
    assert np.all(ds.component_id == 0)


def test_sample_component_frequency(canon):
    ds = sample(canon, 10000, 1)
    # component ids are 0-based: id 0 is the first component (weight 0.5)
    assert abs(np.mean(ds.component_id == 0) - 0.5) <= 0.02
    assert set(np.unique(ds.component_id)) <= {0, 1, 2, 3}


def test_sample_draws_match_component(canon):
    ds = sample(canon, 2000, 5)
    for x, y, c in ds.examples[:300]:
        comp = canon.components[c]
        assert comp.mass_at(x) > 0
        assert comp.points[comp.index_of(x)].label == y


def test_sample_deterministic(canon, comps):
    assert sample(canon, 500, 3).to_bytes() == sample(canon, 500, 3).to_bytes()
    assert sample(comps[1], 500, 3).to_bytes() == sample(comps[1], 500, 3).to_bytes()
    assert sample(canon, 500, 3).to_bytes() != sample(canon, 500, 4).to_bytes()


def test_sample_converges(canon, canon_dist):
    ds = sample(canon, 100_000, 11)
    for p in canon_dist.points:
        emp = np.mean(np.all(ds.X == p.features, axis=1))
        assert abs(emp - p.mass) < 0.01


def test_sample_uses_documented_streams(comps):
    # single distribution: inverse CDF of stream derive_seed(seed, 1)
    d = comps[0]
    u = rng.uniform(rng.derive_seed(9, 1), 50)
    idx = np.searchsorted(np.cumsum(d.mass), u, side="right")
    assert np.array_equal(sample(d, 50, 9).X, d.X[idx])


def test_sample_rejects_zero(comps):
    with pytest.raises(ValueError):
        sample(comps[0], 0, 1)


def test_json_round_trip(canon):
    text = dumps(canon)
    doc = json.loads(text)
    assert doc["version"] == 1 and doc["dim"] == 2 and len(doc["components"]) == 4
    back = loads(text)
    assert back.weights == canon.weights
    for a, b in zip(back.components, canon.components):
        assert masses(a) == masses(b) and labels(a) == labels(b)


def test_json_single_distribution(comps):
    back = loads(dumps(comps[3]))
    assert back.weights == (1.0,) and masses(back.components[0]) == masses(comps[3])


def test_json_bad_version(canon):
    doc = json.loads(dumps(canon))
    doc["version"] = 99
    with pytest.raises(ValueError):
        loads(json.dumps(doc))
