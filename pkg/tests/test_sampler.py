import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpussd.errors import DegenerateSplit, ZeroMeanPositiveVariance
from gpussd.gpu import KernelDescriptor, load_kernels, loads_trace
from gpussd.sampler import (KernelGroup, SamplerConfig, compact, emit_sampled_trace, group_kernels,
                            groups_from_arrays, min_samples, predict_total, required_samples,
                            sample_group, split_group, two_means)


def k(name="k", grid=1, block=1, exec_ns=100, i=0, wl="w"):
    return KernelDescriptor(wl, i, name, grid, block, exec_ns)


def group_of(values, key=("k", 1, 1)):
    return groups_from_arrays([key] * len(values), values)[0]


def test_grouping_examples():
    assert [g.size for g in group_kernels([k(), k()])] == [2]
    assert len(group_kernels([k(grid=1), k(grid=2)])) == 2
    assert group_kernels([]) == []


@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(1, 3), st.integers(1, 2)), max_size=60))
def test_grouping_is_partition(keys):
    groups = groups_from_arrays(keys, list(range(len(keys))))
    members = sorted(int(m) for g in groups for m in g.members)
    assert members == list(range(len(keys)))
    assert sum(g.size for g in groups) == len(keys)
    firsts = [int(g.members[0]) for g in groups]
    assert firsts == sorted(firsts)
    for g in groups:
        assert all(keys[m] == g.key for m in g.members)


def test_no_split_when_homogeneous():
    assert len(split_group(group_of([500] * 10))) == 1
    assert len(split_group(group_of([5]))) == 1


def _brute_force_best_threshold(values):
    """Exhaustive 2-partition of sorted values minimizing within-cluster squared error."""
    xs = sorted(values)
    best = None
    for cut in range(1, len(xs)):
        lo, hi = np.array(xs[:cut]), np.array(xs[cut:])
        sse = ((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum()
        if best is None or sse < best[0]:
            best = (sse, cut)
    return best[1]


def test_bimodal_split_matches_brute_force():
    values = [1_000] * 10 + [100_000] * 10
    parts = split_group(group_of(values), SamplerConfig(cv_split_threshold=0.2))
    assert sorted(p.size for p in parts) == [10, 10]
    assert _brute_force_best_threshold(values) == 10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=4, max_size=40))
def test_split_preserves_membership_and_keys(values):
    g = group_of(values)
    parts = split_group(g)
    assert sorted(int(m) for p in parts for m in p.members) == list(range(len(values)))
    assert all(p.key == g.key for p in parts)
    for p in parts:
        assert p.size < 4 or p.cv <= 0.2 or len(set(p.exec_ns.tolist())) == 1 or len(parts) >= 1


def test_two_means_degenerate():
    with pytest.raises(DegenerateSplit):
        two_means(np.array([3.0, 3.0, 3.0]))


def test_min_samples_examples():
    cfg = SamplerConfig(epsilon=0.05)
    assert required_samples(100_000, 20_000, 1000, 0.05) == 62
    assert required_samples(100_000, 20_000, 30, 0.05) == 30
    assert min_samples(group_of([7] * 9), cfg) == 1
    with pytest.raises(ZeroMeanPositiveVariance):
        required_samples(0, 1, 10, 0.05)


def test_min_samples_monotone_on_grid():
    sigmas = [0, 1, 10, 100, 1000, 5000]
    mus = [1, 10, 100, 1000, 10_000]
    epss = [0.01, 0.05, 0.1, 0.5]
    for mu, eps in itertools.product(mus, epss):
        ms = [required_samples(mu, s, 10**6, eps) for s in sigmas]
        assert ms == sorted(ms)
    for s, eps in itertools.product(sigmas, epss):
        ms = [required_samples(mu, s, 10**6, eps) for mu in mus]
        assert ms == sorted(ms, reverse=True)
    for s, mu in itertools.product(sigmas, mus):
        ms = [required_samples(mu, s, 10**6, eps) for eps in epss]
        assert ms == sorted(ms, reverse=True)


def test_sampling():
    g = group_of([2, 4, 6, 8])
    sample_group(g, 4, seed=1)
    assert g.sample_mean_ns == g.mean_ns and g.sample_var_ns2 == 0
    a = sample_group(group_of(list(range(100))), 10, seed=3).sampled.tolist()
    b = sample_group(group_of(list(range(100))), 10, seed=3).sampled.tolist()
    assert a == b and len(set(a)) == 10
    g = sample_group(group_of([2, 4, 6]), 1, seed=5)
    assert g.sample_mean_ns in (2, 4, 6)


def test_predict_total():
    g1 = group_of([2_000] * 100)
    g2 = group_of([10_000] * 50, key=("j", 1, 1))
    for g in (g1, g2):
        sample_group(g, 1, seed=0)
    y, hw = predict_total([g1, g2])
    assert y == 700_000 and hw == 0
    g3 = group_of([1, 5, 9, 13])
    sample_group(g3, 4, seed=0)
    assert predict_total([g3]) == (28.0, 0.0)


def test_emit_and_replay(tmp_path):
    kernels = [k("a", exec_ns=1000 + (i % 3), i=i) for i in range(1000)]
    result = compact(kernels, SamplerConfig(epsilon=0.05, seed=1))
    g = result.groups[0]
    sample_group(g, 10, seed=2)
    buf = io.StringIO()
    assert emit_sampled_trace(result.groups, kernels, buf) == 10
    lines = buf.getvalue().splitlines()
    assert len(lines) == 11 and '"weight":100' in lines[0]
    assert len(loads_trace(buf.getvalue())["w"]) == 1000


def test_exhaustive_emit_equals_input():
    kernels = [k(name=n, exec_ns=e, i=i) for i, (n, e) in enumerate([("a", 1), ("b", 50), ("a", 1), ("b", 50)])]
    result = compact(kernels)
    for g in result.groups:
        sample_group(g, g.size, 0)
    buf = io.StringIO()
    emit_sampled_trace(result.groups, kernels, buf)
    assert load_kernels(io.StringIO(buf.getvalue())) == kernels


def test_emit_is_deterministic():
    rng = np.random.default_rng(0)
    kernels = [k(name=f"n{i % 3}", exec_ns=int(rng.integers(900, 1100)), i=i) for i in range(3000)]
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        emit_sampled_trace(compact(kernels, SamplerConfig(seed=4)).groups, kernels, buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_large_trace_compaction_ratio():
    # kernel count of a large transformer inference trace, spread over low-variance groups
    total = 1_858_800
    rng = np.random.default_rng(11)
    sizes = np.full(40, total // 40)
    sizes[: total - sizes.sum()] += 1
    keys, execs = [], []
    for gi, n in enumerate(sizes):
        mean = float(np.exp(rng.uniform(np.log(1e3), np.log(1e6))))
        keys.append(np.full(n, gi))
        execs.append(np.maximum(1, rng.normal(mean, mean * 0.08, size=n)))
    keys = np.concatenate(keys)
    execs = np.concatenate(execs)
    groups = []
    for gi in range(40):
        idx = np.flatnonzero(keys == gi)
        groups.append(KernelGroup((f"kernel{gi}", 128, 256), idx, execs[idx]))
    from gpussd.sampler import compact_groups
    result = compact_groups(groups, SamplerConfig(epsilon=0.05, seed=1))
    assert result.total_kernels == total
    assert result.kept <= 0.01 * total
    assert abs(result.predicted_ns - result.true_total_ns) / result.true_total_ns <= 0.05
