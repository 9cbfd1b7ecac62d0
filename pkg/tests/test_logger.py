import logging

import pytest

from utils.logger import DEFAULT_DATE_FORMAT, CustomFormatter, LoggerNameFilter, setup_logger


def make_record(name):
    return logging.LogRecord(name, logging.WARNING, __file__, 1, 'msg', None, None)


@pytest.mark.parametrize('name, short', [
    ('py.warnings', 'warn'),
    ('scipy.sparse.linalg', 'scipy'),
    ('exp_ctrl', 'exp_ctrl'),
])
def test_name_filter_shortens_library_loggers(name, short):
    record = make_record(name)
    assert LoggerNameFilter().filter(record) is True
    assert record.name == short


def test_formatter_uses_fixed_date_format():
    record = make_record('exp_ctrl')
    record.created = 0.0
    stamp = CustomFormatter().formatTime(record)
    assert len(stamp) == len('1970-01-01 00:00:00')
    assert CustomFormatter().formatTime(record, '%Y') == stamp[:4]
    assert DEFAULT_DATE_FORMAT == "%Y-%m-%d %H:%M:%S"


def test_setup_logger_attaches_one_handler():
    first = setup_logger('test_logger_once')
    second = setup_logger('test_logger_once')
    assert first is second
    assert len(first.handlers) == 1
    assert first.propagate is False
