"""
命令控制器
处理 run / cache 命令：配置合并、实验执行、退出码映射、缓存管理报告
"""

from typing import Optional

import click

from controllers.experiment_controller import ExperimentController
from database.cache_connector import CacheConnector
from database.cache_operations import EigenCacheOperations
from utils.app_initializer import APP_VERSION, configure_runtime, resolve_settings
from utils.config_loader import load_config
from utils.display_helpers import get_verdict_display
from utils.errors import ConfigError, WaveMollifyError
from utils.logger import setup_logger

logger = setup_logger('cmd_ctrl')

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FAIL = 2


class CommandController:
    """命令控制器"""

    def handle_run(self, config_path: str, output_dir: Optional[str] = None, cache_dir: Optional[str] = None,
                   threads: Optional[int] = None, seed: Optional[int] = None, verbose: bool = False) -> int:
        """执行 `wavemollify run`

        Returns:
            退出码：0 判定通过，2 判定未通过，1 执行错误
        """
        configure_runtime(verbose)
        logger.info(f"🌊 wavemollify {APP_VERSION} 启动")
        try:
            config = load_config(config_path)
        except ConfigError as e:
            logger.error(f"❌ 配置错误: {e}")
            click.echo(f"配置错误: {e}", err=True)
            return EXIT_ERROR

        # 命令行覆盖 > 配置文件 > 环境变量
        overrides = {}
        if seed is not None:
            overrides['seed'] = seed
        if overrides:
            config = config.model_copy(update=overrides)
        settings = resolve_settings(cache_dir or config.cache_dir, output_dir or config.output_dir, threads)

        try:
            controller = ExperimentController(settings)
            outcome, paths = controller.run_and_write(config)
        except WaveMollifyError as e:
            logger.error(f"❌ 实验 {config.experiment} 执行失败: {type(e).__name__}: {e}")
            click.echo(f"执行错误: {e}", err=True)
            return EXIT_ERROR
        except (ValueError, OSError) as e:
            logger.error(f"❌ 实验 {config.experiment} 执行失败: {e}")
            click.echo(f"执行错误: {e}", err=True)
            return EXIT_ERROR

        click.echo(f"{config.experiment}: {get_verdict_display(outcome.passed)}  → {paths['verdict'].parent}")
        return EXIT_PASS if outcome.passed else EXIT_FAIL

    def handle_cache(self, command: str, cache_dir: Optional[str] = None, tol: float = 1e-8) -> int:
        """执行 `wavemollify cache list|purge|verify`"""
        configure_runtime(False)
        ops = EigenCacheOperations(CacheConnector(cache_dir))
        try:
            if command == 'list':
                entries = ops.list_entries()
                if not entries:
                    click.echo("缓存为空")
                for entry in entries:
                    click.echo(f"{entry['fingerprint']}  {entry['count']:>6} 对  "
                               f"{entry['size_bytes']:>10} B  {entry['geometry']}")
                return EXIT_PASS
            if command == 'purge':
                removed = ops.purge()
                click.echo(f"已删除 {removed} 个缓存条目")
                return EXIT_PASS
            report = ops.verify(tol)
            if not report:
                click.echo("缓存为空")
            for row in report:
                if row['error'] is not None:
                    click.echo(f"{row['fingerprint']}  损坏: {row['error']}")
                else:
                    click.echo(f"{row['fingerprint']}  最大残差 {row['max_residual']:.3e}  "
                               f"{get_verdict_display(row['ok'])}")
            return EXIT_PASS if all(row['ok'] for row in report) else EXIT_FAIL
        except OSError as e:
            logger.error(f"❌ 缓存操作 {command} 失败: {e}")
            click.echo(f"缓存操作失败: {e}", err=True)
            return EXIT_ERROR
