import random

import pytest
from hypothesis import given, settings, strategies as st

from gpussd.errors import OutOfRange, UnalignedAccess
from gpussd.flash import Cause, FlashGeometry, TxnKind
from gpussd.ftl import (Allocation, Ftl, GcConfig, Mapping, MappingGranularity, Scheme,
                        WriteFragment, plane_order, table_footprint_bytes)

FULL = (0, 1, 2, 3)


def small(**kw):
    base = dict(channels=2, ways_per_channel=1, dies_per_way=1, planes_per_die=2,
                blocks_per_plane=8, pages_per_block=8)
    base.update(kw)
    return FlashGeometry(**base)


def kinds(txns, kind, cause=None):
    return [t for t in txns if t.kind is kind and (cause is None or t.cause is cause)]


def plane_of(t):
    return t.target[:4]


# ------------------------------------------------------------------- placement
def test_plane_order_examples():
    geo = FlashGeometry(channels=2, ways_per_channel=2, dies_per_way=2, planes_per_die=2)
    assert plane_order(Scheme.CWDP, geo)[:3] == [(0, 0, 0, 0), (1, 0, 0, 0), (0, 1, 0, 0)]
    assert plane_order(Scheme.CDWP, geo)[2] == (0, 0, 1, 0)
    assert plane_order(Scheme.WCDP, geo)[1] == (0, 1, 0, 0)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.sampled_from(list(Scheme)))
def test_plane_order_is_bijection(c, w, d, p, scheme):
    geo = FlashGeometry(c, w, d, p)
    order = plane_order(scheme, geo)
    assert len(order) == len(set(order)) == geo.planes
    assert all(0 <= x < b for coord in order for x, b in zip(coord, (c, w, d, p)))


def test_dynamic_full_pages_one_per_channel():
    geo = FlashGeometry(channels=4, ways_per_channel=1, dies_per_way=1, planes_per_die=1,
                        blocks_per_plane=8, pages_per_block=8)
    ftl = Ftl(geo, Mapping.FINE, Allocation.DYNAMIC)
    txns = ftl.write([WriteFragment(lpn, FULL) for lpn in range(4)])
    progs = kinds(txns, TxnKind.PROGRAM)
    assert sorted(t.target.channel for t in progs) == [0, 1, 2, 3]


@pytest.mark.parametrize("mapping", list(Mapping))
def test_static_same_plane(mapping):
    geo = small()
    ftl = Ftl(geo, mapping, Allocation.STATIC)
    txns = ftl.write([WriteFragment(0, FULL), WriteFragment(geo.planes, FULL)], flush=True)
    progs = kinds(txns, TxnKind.PROGRAM)
    assert len(progs) == 2 and plane_of(progs[0]) == plane_of(progs[1])


@given(st.integers(1, 4), st.sampled_from(list(Scheme)))
def test_dynamic_spread_distinct_planes(n_scale, scheme):
    geo = small(ways_per_channel=2)
    n = min(geo.planes, n_scale * 2)
    ftl = Ftl(geo, Mapping.COARSE, Allocation.DYNAMIC, scheme)
    progs = kinds(ftl.write([WriteFragment(lpn, FULL) for lpn in range(n)]), TxnKind.PROGRAM)
    assert len({plane_of(t) for t in progs}) == n


# -------------------------------------------------------------- write paths
def test_coarse_partial_overwrite_is_rmw():
    ftl = Ftl(small(), Mapping.COARSE)
    ftl.write([WriteFragment(3, FULL, tag=1)])
    txns = ftl.write([WriteFragment(3, (2,), tag=2)])
    reads, progs = kinds(txns, TxnKind.READ), kinds(txns, TxnKind.PROGRAM)
    assert len(reads) == 1 and reads[0].cause is Cause.RMW and len(progs) == 1
    assert progs[0].after == reads
    assert [ftl.read_content(12 + s) for s in range(4)] == [1, 1, 2, 1]


def test_coarse_unmapped_partial_write_skips_read():
    ftl = Ftl(small(), Mapping.COARSE)
    txns = ftl.write([WriteFragment(5, (1,), tag=9)])
    assert not kinds(txns, TxnKind.READ) and len(kinds(txns, TxnKind.PROGRAM)) == 1
    assert [ftl.read_content(20 + s) for s in range(4)] == [0, 9, 0, 0]


def test_fine_never_reads_and_packs_pages():
    ftl = Ftl(small(), Mapping.FINE)
    ftl.write([WriteFragment(lpn, FULL) for lpn in range(4)], flush=True)
    txns = ftl.write([WriteFragment(lpn, (1,)) for lpn in range(4)], flush=True)
    assert not kinds(txns, TxnKind.READ)
    progs = kinds(txns, TxnKind.PROGRAM)
    assert len(progs) == 1 and progs[0].payload_sectors == FULL


def test_fine_read_of_scattered_sectors():
    ftl = Ftl(small(), Mapping.FINE, Allocation.DYNAMIC)
    for s in range(4):
        ftl.write([WriteFragment(0, (s,))], flush=True)
    plan = ftl.translate_read([(0, FULL)])
    assert len(plan.groups) == 4
    assert len({g.location[:4] for g in plan.groups}) == 4
    assert not plan.unmapped


def test_unmapped_reads_reported():
    ftl = Ftl(small(), Mapping.FINE)
    ftl.write([WriteFragment(0, (0,))], flush=True)
    plan = ftl.translate_read([(0, (0, 1))])
    assert plan.unmapped == [1] and len(plan.groups) == 1


def test_fragment_validation():
    ftl = Ftl(small())
    with pytest.raises(UnalignedAccess):
        ftl.write([WriteFragment(0, (4,))])
    with pytest.raises(OutOfRange):
        ftl.write([WriteFragment(ftl.logical_pages, (0,))])


# ---------------------------------------------------------------------- gc
def _fill_block(ftl, plane_lpns):
    return ftl.write([WriteFragment(lpn, FULL) for lpn in plane_lpns], flush=True)


def one_plane(**kw):
    return FlashGeometry(channels=1, ways_per_channel=1, dies_per_way=1, planes_per_die=1,
                         blocks_per_plane=8, pages_per_block=2, **kw)


def test_gc_empty_victim_is_single_erase():
    ftl = Ftl(one_plane(), Mapping.FINE, gc=GcConfig(0.05))
    _fill_block(ftl, [0, 1])
    _fill_block(ftl, [0, 1])          # first block now fully invalid
    _fill_block(ftl, [2])             # close the second block
    txns = ftl.garbage_collect(0, force=True)
    assert len(kinds(txns, TxnKind.ERASE)) == 1
    assert not kinds(txns, TxnKind.READ) and not kinds(txns, TxnKind.PROGRAM)


def test_gc_relocates_valid_sectors():
    ftl = Ftl(one_plane(), Mapping.FINE, gc=GcConfig(0.05))
    _fill_block(ftl, [0, 1])
    ftl.write([WriteFragment(0, (0, 1, 2, 3)), WriteFragment(1, (0,))], flush=True)  # 3 valid left
    _fill_block(ftl, [2, 3])
    before = [ftl.read_content(x) for x in range(16)]
    txns = ftl.garbage_collect(0, force=True)
    reads = kinds(txns, TxnKind.READ, Cause.GC)
    assert sum(len(r.payload_sectors) for r in reads) == 3
    assert len(kinds(txns, TxnKind.PROGRAM, Cause.GC)) >= 1
    assert len(kinds(txns, TxnKind.ERASE)) == 1
    assert [ftl.read_content(x) for x in range(16)] == before


def test_gc_picks_fewest_valid():
    ftl = Ftl(one_plane(), Mapping.FINE, gc=GcConfig(0.05))
    _fill_block(ftl, [0, 1])          # block A
    _fill_block(ftl, [2, 3])          # block B
    _fill_block(ftl, [4, 5])          # closes B, C active
    ftl.write([WriteFragment(0, (0, 1))], flush=True)             # A: 6 valid
    ftl.write([WriteFragment(2, (0, 1, 2)), WriteFragment(3, FULL)], flush=True)  # B: 1 valid
    txns = ftl.garbage_collect(0, force=True)
    victim = kinds(txns, TxnKind.ERASE)[0].target.block
    assert victim == 1


def test_table_footprint():
    geo = FlashGeometry()
    gib = 1 << 30
    assert table_footprint_bytes(MappingGranularity.for_geometry(Mapping.COARSE, geo), gib) == 262_144
    assert table_footprint_bytes(MappingGranularity.for_geometry(Mapping.FINE, geo), gib) == 4 * 262_144
    assert table_footprint_bytes(MappingGranularity.for_geometry(Mapping.FINE, geo), 0) == 0


# -------------------------------------------------------------- properties
TINY = FlashGeometry(channels=2, ways_per_channel=1, dies_per_way=1, planes_per_die=1,
                     blocks_per_plane=16, pages_per_block=4)
ops = st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 3), st.integers(0, 3),
                         st.booleans(), st.booleans()), min_size=1, max_size=300)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(Mapping)), st.sampled_from(list(Allocation)), st.sampled_from(list(Scheme)), ops)
def test_referential_integrity_and_no_fine_rmw(mapping, allocation, scheme, seq):
    ftl = Ftl(TINY, mapping, allocation, scheme, GcConfig(0.2), overprovision=0.25)
    flat = [0] * ftl.logical_sectors
    txns = []
    for version, (lpn, a, b, is_write, flush) in enumerate(seq, 1):
        lpn %= ftl.logical_pages
        a, b = min(a, b), max(a, b)
        if is_write:
            txns += ftl.write([WriteFragment(lpn, tuple(range(a, b + 1)), None, version)], flush=flush)
            for s in range(a, b + 1):
                flat[lpn * 4 + s] = version
    assert [ftl.read_content(x) for x in range(len(flat))] == flat
    # every written logical sector resolves to exactly one valid physical sector
    live = [psn for psn in range(TINY.total_sectors) if ftl.valid[psn]]
    owners = [ftl.p2l[psn] for psn in live]
    assert len(owners) == len(set(owners))
    assert sum(ftl.block_valid) == len(live)
    if mapping is Mapping.FINE:
        assert not [t for t in txns if t.kind is TxnKind.READ and t.cause is not Cause.GC]
        assert len(live) == sum(1 for v in flat if v)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(Mapping)), ops)
def test_forced_gc_preserves_contents(mapping, seq):
    ftl = Ftl(TINY, mapping, Allocation.DYNAMIC, gc=GcConfig(0.2), overprovision=0.25)
    for version, (lpn, a, b, _, flush) in enumerate(seq, 1):
        a, b = min(a, b), max(a, b)
        ftl.write([WriteFragment(lpn % ftl.logical_pages, tuple(range(a, b + 1)), None, version)], flush=flush)
    ftl.flush()
    before = [ftl.read_content(x) for x in range(ftl.logical_sectors)]
    for pl in range(TINY.planes):
        ftl.garbage_collect(pl, force=True)
    assert [ftl.read_content(x) for x in range(ftl.logical_sectors)] == before


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 3)), min_size=1, max_size=200))
def test_coarse_each_partial_overwrite_one_read_one_program(seq):
    geo = small(blocks_per_plane=32)
    ftl = Ftl(geo, Mapping.COARSE, gc=GcConfig(0.05, enabled=False))
    n = 16
    ftl.write([WriteFragment(lpn, FULL) for lpn in range(n)])
    for lpn, s in seq:
        txns = ftl.write([WriteFragment(lpn % n, (s,))])
        assert len(kinds(txns, TxnKind.READ, Cause.RMW)) == 1
        assert len(kinds(txns, TxnKind.PROGRAM, Cause.HOST)) == 1


@pytest.mark.slow
@pytest.mark.parametrize("mapping,allocation", [(m, a) for m in Mapping for a in Allocation])
def test_flat_array_oracle_all_modes(mapping, allocation):
    from test_acceptance import ftl_oracle_run
    mismatches, gc_runs = ftl_oracle_run(mapping, allocation, ops=30_000, seed=11)
    assert mismatches == 0 and gc_runs > 0
