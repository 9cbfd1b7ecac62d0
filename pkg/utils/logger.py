import logging
import datetime
import os
from typing import Optional

# 日志格式常量
DEFAULT_LOG_FORMAT = "%(asctime)s - %(lineno)-4d - %(name)-8.8s - %(levelname)-8s - %(message)s"
DEFAULT_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _level_from_env() -> int:
    """从环境变量 WAVEMOLLIFY_LOG_LEVEL 读取日志级别，默认 INFO"""
    name = os.getenv("WAVEMOLLIFY_LOG_LEVEL", "INFO").upper()
    return getattr(logging, name, logging.INFO)


class CustomFormatter(logging.Formatter):
    """时间戳固定为本地时间 DEFAULT_DATE_FORMAT，与实验输出里的时间对齐"""
    def formatTime(self, record, datefmt: Optional[str] = None) -> str:
        ct = datetime.datetime.fromtimestamp(record.created)
        if datefmt:
            s = ct.strftime(datefmt)
        else:
            s = ct.strftime(DEFAULT_DATE_FORMAT)
        return s


class LoggerNameFilter(logging.Filter):
    """把 py.warnings 与 scipy 子模块的记录器名折叠成短名，便于和 exp_ctrl 等并排阅读"""
    def filter(self, record) -> bool:
        name = record.name
        if name == "py.warnings":
            record.name = "warn"
        elif name.startswith("scipy"):
            record.name = "scipy"
        return True


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """按模块短名取记录器；首次调用时挂上 stderr 处理器、统一格式与短名过滤

    Args:
        name: 日志记录器名称
        level: 日志级别，默认取 WAVEMOLLIFY_LOG_LEVEL（INFO）

    Returns:
        配置好的日志记录器实例
    """
    logger = logging.getLogger(name)
    logger.setLevel(level if level is not None else _level_from_env())

    # 只有在没有处理器时才添加新的处理器，避免重复
    if not logger.handlers:
        console_handler = logging.StreamHandler()
        console_handler.addFilter(LoggerNameFilter())
        formatter = CustomFormatter(
            DEFAULT_LOG_FORMAT,
            datefmt=DEFAULT_DATE_FORMAT
        )
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)
        logger.propagate = False

    return logger


def set_global_level(level: int) -> None:
    """统一调整所有已创建日志记录器的级别（--verbose 使用）"""
    for logger_name in list(logging.root.manager.loggerDict):
        existing = logging.getLogger(logger_name)
        if existing.handlers:
            existing.setLevel(level)


# 命令行运行时的日志配置（第三方库与警告）
CLI_LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "()": "utils.logger.CustomFormatter",
            "fmt": DEFAULT_LOG_FORMAT,
            "datefmt": DEFAULT_DATE_FORMAT,
        },
    },
    "filters": {
        "logger_name_filter": {
            "()": "utils.logger.LoggerNameFilter",
        },
    },
    "handlers": {
        "default": {
            "formatter": "default",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "filters": ["logger_name_filter"],
        },
    },
    "loggers": {
        "py.warnings": {"handlers": ["default"], "level": "WARNING", "propagate": False},
        "scipy": {"handlers": ["default"], "level": "WARNING", "propagate": False},
    },
}
