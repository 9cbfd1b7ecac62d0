import sys

import click
from dotenv import load_dotenv

from controllers.command_controller import CommandController
from utils.app_initializer import APP_VERSION
from utils.logger import setup_logger

# 加载环境变量
load_dotenv()
logger = setup_logger('main')


@click.group()
@click.version_option(APP_VERSION, prog_name='wavemollify')
def cli():
    """波动群几何正则化：实验运行与缓存管理"""


@cli.command()
@click.argument('config', type=click.Path(dir_okay=False))
@click.option('--output-dir', default=None, help='结果目录（覆盖配置与 WAVEMOLLIFY_OUTPUT_DIR）')
@click.option('--cache-dir', default=None, help='特征系统缓存目录（覆盖 WAVEMOLLIFY_CACHE_DIR）')
@click.option('--threads', type=click.IntRange(min=1), default=None, help='ε 网并行线程数')
@click.option('--seed', type=int, default=None, help='随机分布种子')
@click.option('--verbose', is_flag=True, help='输出 DEBUG 日志')
def run(config, output_dir, cache_dir, threads, seed, verbose):
    """运行 CONFIG 中指定的实验"""
    code = CommandController().handle_run(config, output_dir, cache_dir, threads, seed, verbose)
    sys.exit(code)


@cli.command()
@click.argument('command', type=click.Choice(['list', 'purge', 'verify']))
@click.option('--cache-dir', default=None, help='特征系统缓存目录')
@click.option('--tol', type=float, default=1e-8, show_default=True, help='verify 的残差容差')
def cache(command, cache_dir, tol):
    """管理特征系统缓存"""
    sys.exit(CommandController().handle_cache(command, cache_dir, tol))


if __name__ == "__main__":
    cli()
