import fcntl
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

from utils.logger import setup_logger

# 设置日志记录器
logger = setup_logger('cache_cn')

LOCK_NAME = '.lock'
MANIFEST_NAME = 'manifest.json'


class CacheConnector:
    """特征系统缓存目录连接器"""

    def __init__(self, cache_dir: Optional[os.PathLike] = None):
        """解析缓存目录：显式参数优先，其次 WAVEMOLLIFY_CACHE_DIR，默认 ~/.cache/wavemollify"""
        raw = cache_dir or os.getenv('WAVEMOLLIFY_CACHE_DIR') or Path.home() / '.cache' / 'wavemollify'
        self.cache_dir = Path(raw).expanduser()

    @property
    def manifest_path(self) -> Path:
        return self.cache_dir / MANIFEST_NAME

    def entry_path(self, fingerprint: str) -> Path:
        return self.cache_dir / f"{fingerprint}.npz"

    def create_directory(self):
        """创建缓存目录（如果不存在）"""
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            logger.debug(f"缓存目录 '{self.cache_dir}' 已创建或已存在")
        except OSError as e:
            logger.error(f"创建缓存目录时出错: {e}")
            raise

    @contextmanager
    def exclusive_lock(self, blocking: bool = True):
        """写入时持有的排他文件锁；读取不加锁（完成的文件通过 os.replace 原子出现）"""
        self.create_directory()
        handle = open(self.cache_dir / LOCK_NAME, 'a+')
        try:
            flags = fcntl.LOCK_EX if blocking else fcntl.LOCK_EX | fcntl.LOCK_NB
            fcntl.flock(handle.fileno(), flags)
            yield
        finally:
            try:
                fcntl.flock(handle.fileno(), fcntl.LOCK_UN)
            finally:
                handle.close()
