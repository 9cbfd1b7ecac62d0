"""
结果文件编解码工具
net.csv（ε 网或表格）、verdict.json（判定与配置回显）、diag.json（引擎诊断）的写入与读取
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from utils.logger import setup_logger

logger = setup_logger('ser_hlp')

NET_FILE = 'net.csv'
VERDICT_FILE = 'verdict.json'
DIAG_FILE = 'diag.json'


def to_jsonable(obj: Any) -> Any:
    """递归转换 numpy 类型；非有限浮点数编码为字符串 "inf" / "-inf" / "nan" """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isfinite(value):
            return value
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(obj, complex):
        return {'real': to_jsonable(obj.real), 'imag': to_jsonable(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    return obj


def from_jsonable(obj: Any) -> Any:
    """to_jsonable 的逆：字符串形式的非有限数还原为 float"""
    if isinstance(obj, dict):
        return {k: from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    if obj in ('inf', '-inf', 'nan'):
        return float(obj)
    return obj


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, ensure_ascii=False), encoding='utf-8')
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    return from_jsonable(json.loads(Path(path).read_text(encoding='utf-8')))


def write_table(path: Union[str, Path], table: pd.DataFrame) -> Path:
    path = Path(path)
    # 固定浮点格式，保证同配置同种子的输出逐字节一致
    table.to_csv(path, index=False, float_format='%.17g')
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


def write_outputs(output_dir: Union[str, Path], table: pd.DataFrame,
                  verdict: Dict[str, Any], diagnostics: Dict[str, Any]) -> Dict[str, Path]:
    """在输出目录写出 net.csv / verdict.json / diag.json"""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        'net': write_table(out / NET_FILE, table),
        'verdict': write_json(out / VERDICT_FILE, verdict),
        'diag': write_json(out / DIAG_FILE, diagnostics),
    }
    logger.info(f"💾 结果已写入 {out}")
    return paths
