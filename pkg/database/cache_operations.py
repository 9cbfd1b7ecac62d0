import datetime
import os
import zipfile
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from database.cache_connector import CacheConnector
from database.cache_init import CacheInitializer
from services.geometry_service import EigenSystem, DiscreteLaplacian
from utils.errors import CacheCorruptionError
from utils.logger import setup_logger

# 设置日志记录器
logger = setup_logger('cache_op')

_REQUIRED_KEYS = ('fingerprint', 'eigenvalues', 'vectors', 'weights', 'shape',
                  'k_data', 'k_indices', 'k_indptr')


class EigenCacheOperations:
    """特征系统缓存操作类：条目为 <fingerprint>.npz，清单记录元数据"""

    def __init__(self, cache_connector: Optional[CacheConnector] = None):
        self.cache_connector = cache_connector or CacheConnector()
        self.initializer = CacheInitializer(self.cache_connector)

    def save(self, es: EigenSystem, lap: DiscreteLaplacian, geometry: str = '') -> bool:
        """保存特征系统；写入失败只告警，不中断运行"""
        from utils.app_initializer import APP_VERSION

        path = self.cache_connector.entry_path(es.fingerprint)
        tmp = path.with_name(path.stem + '.tmp.npz')
        try:
            with self.cache_connector.exclusive_lock():
                k = lap.stiffness.tocsr()
                np.savez(tmp, fingerprint=np.array(es.fingerprint), eigenvalues=es.eigenvalues,
                         vectors=es.vectors, weights=es.weights, shape=np.array(es.shape),
                         k_data=k.data, k_indices=k.indices, k_indptr=k.indptr)
                os.replace(tmp, path)
                manifest = self.initializer.read_manifest()
                manifest.setdefault('entries', {})[es.fingerprint] = {
                    'geometry': geometry,
                    'count': es.count,
                    'size_bytes': path.stat().st_size,
                    'app_version': APP_VERSION,
                    'created_at': datetime.datetime.now().isoformat(timespec='seconds'),
                }
                self.initializer.write_manifest(manifest)
            logger.debug(f"特征系统 {es.fingerprint[:12]} 已写入缓存")
            return True
        except OSError as e:
            logger.warning(f"⚠️ 特征系统写入缓存失败，继续运行: {e}")
            if tmp.exists():
                tmp.unlink()
            return False

    def _read_entry(self, fingerprint: str):
        path = self.cache_connector.entry_path(fingerprint)
        try:
            with np.load(path, allow_pickle=False) as data:
                missing = [k for k in _REQUIRED_KEYS if k not in data.files]
                if missing:
                    raise CacheCorruptionError(f"缓存条目缺少字段 {missing}")
                payload = {k: data[k] for k in _REQUIRED_KEYS}
        except (OSError, ValueError, zipfile.BadZipFile, EOFError) as e:
            raise CacheCorruptionError(f"缓存条目 {path.name} 不可读: {e}") from e

        if str(payload['fingerprint']) != fingerprint:
            raise CacheCorruptionError(f"缓存条目 {path.name} 的指纹与文件名不符")
        shape = tuple(int(v) for v in payload['shape'])
        n = int(np.prod(shape))
        vectors = payload['vectors']
        if vectors.ndim != 2 or vectors.shape[0] != n or vectors.shape[1] != payload['eigenvalues'].size:
            raise CacheCorruptionError(f"缓存条目 {path.name} 的数组形状不一致")
        es = EigenSystem(eigenvalues=payload['eigenvalues'], vectors=vectors,
                         weights=payload['weights'], shape=shape, fingerprint=fingerprint)
        stiffness = sp.csr_matrix((payload['k_data'], payload['k_indices'], payload['k_indptr']), shape=(n, n))
        lap = DiscreteLaplacian(stiffness=stiffness, weights=payload['weights'], shape=shape)
        return es, lap

    def load(self, fingerprint: str) -> Optional[EigenSystem]:
        """读取缓存条目；不存在返回 None，损坏则告警并返回 None（由调用方重新计算）"""
        if not self.cache_connector.entry_path(fingerprint).exists():
            return None
        try:
            es, _ = self._read_entry(fingerprint)
            return es
        except CacheCorruptionError as e:
            logger.warning(f"⚠️ {e}，将重新计算")
            return None

    def list_entries(self) -> List[Dict[str, Any]]:
        """列出缓存条目（指纹与大小）"""
        directory = self.cache_connector.cache_dir
        if not directory.exists():
            return []
        manifest = self.initializer.read_manifest() if self.cache_connector.manifest_path.exists() else {}
        known = manifest.get('entries', {})
        entries = []
        for path in sorted(directory.glob('*.npz')):
            if path.name.endswith('.tmp.npz'):
                continue
            fingerprint = path.stem
            meta = known.get(fingerprint, {})
            entries.append({
                'fingerprint': fingerprint,
                'size_bytes': path.stat().st_size,
                'count': meta.get('count', 0),
                'geometry': meta.get('geometry', ''),
            })
        return entries

    def purge(self) -> int:
        """删除全部条目（含损坏条目），返回删除个数"""
        directory = self.cache_connector.cache_dir
        if not directory.exists():
            return 0
        removed = 0
        with self.cache_connector.exclusive_lock():
            for path in directory.glob('*.npz'):
                path.unlink()
                removed += 1
            if self.cache_connector.manifest_path.exists():
                manifest = self.initializer.read_manifest()
                manifest['entries'] = {}
                self.initializer.write_manifest(manifest)
        logger.info(f"🧹 已清除 {removed} 个缓存条目")
        return removed

    def verify(self, tol: float = 1e-8) -> List[Dict[str, Any]]:
        """重新计算每个条目的特征残差；损坏条目在报告中点名"""
        report = []
        for entry in self.list_entries():
            fingerprint = entry['fingerprint']
            try:
                es, lap = self._read_entry(fingerprint)
                worst = float(np.max(es.residuals(lap))) if es.count else 0.0
                report.append({'fingerprint': fingerprint, 'max_residual': worst,
                               'ok': worst <= tol, 'error': None})
            except CacheCorruptionError as e:
                logger.warning(f"⚠️ {e}")
                report.append({'fingerprint': fingerprint, 'max_residual': None, 'ok': False, 'error': str(e)})
        return report
