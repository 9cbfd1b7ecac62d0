import json
import os

from utils.logger import setup_logger

# 设置日志记录器
logger = setup_logger('cache_in')

MANIFEST_SCHEMA = 2


class CacheInitializer:
    """缓存目录初始化类"""

    def __init__(self, cache_connector):
        self.cache_connector = cache_connector

    def initialize_cache(self):
        """初始化缓存目录与清单"""
        self.cache_connector.create_directory()
        with self.cache_connector.exclusive_lock(blocking=False):
            self.create_manifest()
            self.update_manifest_structure()

    def create_manifest(self):
        """清单不存在时创建空清单"""
        path = self.cache_connector.manifest_path
        if path.exists():
            return
        self.write_manifest({'schema': MANIFEST_SCHEMA, 'entries': {}})
        logger.info(f"已创建缓存清单 {path}")

    def read_manifest(self) -> dict:
        try:
            with open(self.cache_connector.manifest_path, encoding='utf-8') as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"⚠️ 缓存清单不可读，将重建: {e}")
            return {'schema': MANIFEST_SCHEMA, 'entries': {}}

    def write_manifest(self, manifest: dict):
        path = self.cache_connector.manifest_path
        tmp = path.with_suffix('.json.tmp')
        with open(tmp, 'w', encoding='utf-8') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        os.replace(tmp, path)

    def update_manifest_structure(self):
        """检查并升级清单结构，补齐旧版本缺失的字段"""
        manifest = self.read_manifest()
        changed = False
        if not isinstance(manifest.get('entries'), dict):
            manifest['entries'] = {}
            changed = True

        required_fields = {
            'geometry': '',
            'count': 0,
            'size_bytes': 0,
            'app_version': '',
            'created_at': '',
        }
        for fingerprint, entry in manifest['entries'].items():
            for field_name, default in required_fields.items():
                if field_name not in entry:
                    entry[field_name] = default
                    changed = True
                    logger.debug(f"已为条目 {fingerprint[:12]} 补充字段 {field_name}")

        if manifest.get('schema') != MANIFEST_SCHEMA:
            logger.info(f"缓存清单结构由 {manifest.get('schema')} 升级到 {MANIFEST_SCHEMA}")
            manifest['schema'] = MANIFEST_SCHEMA
            changed = True
        if changed:
            self.write_manifest(manifest)
