import numpy as np

from database.cache_connector import CacheConnector
from database.cache_init import MANIFEST_SCHEMA, CacheInitializer
from database.cache_operations import EigenCacheOperations
from services.geometry_service import Circle, CosineSpace, eigensystem, geometry_fingerprint
from utils.app_initializer import initialize_cache_with_retry


def test_empty_cache_lists_nothing(tmp_path):
    ops = EigenCacheOperations(CacheConnector(tmp_path / 'missing'))
    assert ops.list_entries() == []
    assert ops.purge() == 0
    assert ops.verify() == []


def test_initializer_writes_manifest(tmp_path):
    connector = CacheConnector(tmp_path / 'cache')
    initialize_cache_with_retry(connector, max_retries=2, delay=0.0)
    manifest = CacheInitializer(connector).read_manifest()
    assert manifest['schema'] == MANIFEST_SCHEMA
    assert manifest['entries'] == {}


def test_manifest_upgrade_fills_missing_fields(tmp_path):
    connector = CacheConnector(tmp_path / 'cache')
    init = CacheInitializer(connector)
    connector.create_directory()
    init.write_manifest({'schema': 1, 'entries': {'abc': {'count': 3}}})
    init.update_manifest_structure()
    manifest = init.read_manifest()
    assert manifest['schema'] == MANIFEST_SCHEMA
    assert set(manifest['entries']['abc']) >= {'geometry', 'count', 'size_bytes', 'app_version', 'created_at'}
    assert manifest['entries']['abc']['count'] == 3


def test_round_trip_through_cache(cache_ops):
    g = Circle(f=CosineSpace(1.0, 0.2), n=32)
    computed = eigensystem(g, 12, cache=cache_ops)
    entries = cache_ops.list_entries()
    assert [e['fingerprint'] for e in entries] == [geometry_fingerprint(g, 12)]
    assert entries[0]['count'] == 12
    loaded = cache_ops.load(computed.fingerprint)
    assert np.allclose(loaded.eigenvalues, computed.eigenvalues, atol=1e-12)
    assert np.allclose(loaded.vectors, computed.vectors, atol=1e-12)
    again = eigensystem(g, 12, cache=cache_ops)
    assert np.array_equal(again.eigenvalues, loaded.eigenvalues)


def test_verify_reports_residuals(cache_ops):
    eigensystem(Circle(n=32), 8, cache=cache_ops)
    report = cache_ops.verify()
    assert len(report) == 1
    assert report[0]['ok'] and report[0]['error'] is None
    assert report[0]['max_residual'] < 1e-8


def test_corrupt_entry_is_recomputed(cache_ops):
    g = Circle(n=32)
    es = eigensystem(g, 8, cache=cache_ops)
    path = cache_ops.cache_connector.entry_path(es.fingerprint)
    path.write_bytes(b'not a zip archive')
    assert cache_ops.load(es.fingerprint) is None
    report = cache_ops.verify()
    assert not report[0]['ok'] and report[0]['error']
    fresh = eigensystem(g, 8, cache=cache_ops)
    assert np.allclose(fresh.eigenvalues, es.eigenvalues)
    assert cache_ops.load(es.fingerprint) is not None


def test_purge_removes_entries(cache_ops):
    eigensystem(Circle(n=32), 4, cache=cache_ops)
    eigensystem(Circle(n=40), 4, cache=cache_ops)
    assert cache_ops.purge() == 2
    assert cache_ops.list_entries() == []
