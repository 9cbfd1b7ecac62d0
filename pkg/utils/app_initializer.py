import logging
import logging.config
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from database.cache_connector import CacheConnector
from database.cache_init import CacheInitializer
from utils.logger import setup_logger, set_global_level, CLI_LOGGING_CONFIG

# 全局版本号
APP_VERSION = "0.3.1"

logger = setup_logger('app_init')


@dataclass(frozen=True)
class RuntimeSettings:
    """运行期设置：环境变量默认值与命令行覆盖合并后的结果"""
    cache_dir: Path
    output_dir: Path
    threads: int


def initialize_cache_with_retry(cache_connector: CacheConnector,
                                max_retries: int = 10,
                                delay: float = 0.5) -> None:
    """
    重试机制：尝试获取缓存锁并初始化缓存目录，直到成功或达到最大重试次数。

    Args:
        cache_connector: 缓存连接器实例
        max_retries: 最大重试次数
        delay: 重试间隔（秒）

    Raises:
        RuntimeError: 超过最大重试次数仍未成功
    """
    cache_initializer = CacheInitializer(cache_connector)
    for attempt in range(1, max_retries + 1):
        try:
            cache_initializer.initialize_cache()
            logger.debug("✅ 缓存目录初始化完成")
            return
        except (OSError, BlockingIOError) as e:
            logger.warning(
                f"缓存初始化失败 (第 {attempt}/{max_retries} 次)：{e}，"
                f"{delay}s 后重试…"
            )
            time.sleep(delay)
    raise RuntimeError("❌ 超过最大重试次数，缓存初始化失败")


def resolve_settings(cache_dir: Optional[str] = None,
                     output_dir: Optional[str] = None,
                     threads: Optional[int] = None) -> RuntimeSettings:
    """合并环境变量（.env 已由 main.py 加载）与命令行覆盖"""
    cache = cache_dir or os.getenv('WAVEMOLLIFY_CACHE_DIR') or str(Path.home() / '.cache' / 'wavemollify')
    output = output_dir or os.getenv('WAVEMOLLIFY_OUTPUT_DIR') or './results'
    if threads is None:
        raw = os.getenv('WAVEMOLLIFY_THREADS', '1')
        try:
            threads = int(raw)
        except ValueError:
            logger.warning(f"⚠️ WAVEMOLLIFY_THREADS={raw!r} 不是整数，改用 1")
            threads = 1
    return RuntimeSettings(cache_dir=Path(cache).expanduser(), output_dir=Path(output), threads=max(1, threads))


def configure_runtime(verbose: bool = False) -> None:
    """命令行启动时的日志设置：第三方库日志、numpy/scipy 警告、--verbose"""
    logging.config.dictConfig(CLI_LOGGING_CONFIG)
    logging.captureWarnings(True)
    np.seterr(all='warn')
    if verbose:
        set_global_level(logging.DEBUG)
        logger.setLevel(logging.DEBUG)
