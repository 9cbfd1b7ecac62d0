"""
实验控制器
组装缓存、几何服务与实验服务，执行一次实验并写出结果文件
"""

import time
from pathlib import Path
from typing import Dict, Optional

from database.cache_connector import CacheConnector
from database.cache_operations import EigenCacheOperations
from services.experiment_service import ExperimentOutcome, ExperimentService
from services.geometry_service import GeometryService
from utils.app_initializer import APP_VERSION, RuntimeSettings, initialize_cache_with_retry
from utils.config_loader import ExperimentConfig
from utils.logger import setup_logger
from utils.serialization_helpers import write_outputs

logger = setup_logger('exp_ctrl')


class ExperimentController:
    """实验控制器"""

    def __init__(self, settings: RuntimeSettings, cache_ops: Optional[EigenCacheOperations] = None):
        self.settings = settings
        if cache_ops is None:
            cache_ops = self._open_cache(settings.cache_dir)
        self.cache_ops = cache_ops
        self.geometry_service = GeometryService(cache_ops)

    @staticmethod
    def _open_cache(cache_dir: Path) -> Optional[EigenCacheOperations]:
        """缓存不可用时降级为不缓存，实验照常运行"""
        connector = CacheConnector(cache_dir)
        try:
            initialize_cache_with_retry(connector, max_retries=3, delay=0.2)
        except (RuntimeError, OSError) as e:
            logger.warning(f"⚠️ 缓存目录 {cache_dir} 不可用，本次不使用缓存: {e}")
            return None
        return EigenCacheOperations(connector)

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        service = ExperimentService(config, self.geometry_service, threads=self.settings.threads)
        return service.run()

    def _echo(self, config: ExperimentConfig) -> dict:
        """配置回显并入命令行与环境变量解析后的运行期设置"""
        echo = config.echo()
        echo.update({
            'output_dir': str(self.settings.output_dir),
            'cache_dir': str(self.settings.cache_dir),
            'threads': self.settings.threads,
        })
        return echo

    def run_and_write(self, config: ExperimentConfig) -> tuple:
        """运行实验并写出 net.csv / verdict.json / diag.json

        Returns:
            (ExperimentOutcome, 文件路径字典)
        """
        started = time.perf_counter()
        outcome = self.run(config)
        runtime = time.perf_counter() - started
        verdict = {
            'experiment': outcome.name,
            'passed': outcome.passed,
            'verdict': outcome.verdict,
            'tolerances': outcome.tolerances,
            'runtime_seconds': runtime,
            'seed': config.seed,
            'version': APP_VERSION,
            'config': self._echo(config),
        }
        paths: Dict[str, Path] = write_outputs(self.settings.output_dir, outcome.table, verdict,
                                               outcome.diagnostics)
        logger.info(f"⏱️ 实验 {outcome.name} 用时 {runtime:.2f}s")
        return outcome, paths
