"""
实验配置加载
YAML（或 JSON）文件经 pydantic 模型校验为 ExperimentConfig；
解析错误与校验错误统一转换为 ConfigError，能定位时附带行号
"""

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError
from utils.logger import setup_logger

logger = setup_logger('cfg_load')

EXPERIMENTS = (
    'multiplier-check', 'mollifier-moments', 'approx-identity', 'negligibility', 'sobolev-detect',
    'support-check', 'isometry-check', 'weyl', 'commutator', 'dt-commutator', 'mult-commutator',
    'slice', 'slice-assoc', 'wf-probe', 'cross-engine',
)

ExperimentName = Literal[
    'multiplier-check', 'mollifier-moments', 'approx-identity', 'negligibility', 'sobolev-detect',
    'support-check', 'isometry-check', 'weyl', 'commutator', 'dt-commutator', 'mult-commutator',
    'slice', 'slice-assoc', 'wf-probe', 'cross-engine',
]


class _Block(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ProfileBlock(_Block):
    """度量剖面内置函数：constant | sine_time | cosine_space"""
    name: Literal['constant', 'sine_time', 'cosine_space'] = 'constant'
    value: float = 1.0
    a: float = 1.0
    b: float = 0.3
    period: Optional[float] = None
    k: int = 1


class GeometryBlock(_Block):
    kind: Literal['circle', 'flat_torus', 'warped_slab', 'robertson_walker', 'euclidean_line'] = 'circle'
    # circle
    n: int = 256
    circumference: Optional[float] = None
    # flat_torus
    l1: Optional[float] = None
    l2: Optional[float] = None
    n1: int = 64
    n2: int = 64
    # warped_slab / robertson_walker
    period: float = 12.0
    nt: int = 48
    ntheta: int = 48
    f: ProfileBlock = Field(default_factory=ProfileBlock)
    beta: ProfileBlock = Field(default_factory=ProfileBlock)
    # euclidean_line
    half_length: float = 8.0
    spacing: float = 1.0 / 64.0

    @field_validator('n', 'n1', 'n2', 'nt', 'ntheta')
    @classmethod
    def _grid_size(cls, v: int) -> int:
        if v < 8:
            raise ValueError(f"网格尺寸至少为 8，当前为 {v}")
        return v


class KernelBlock(_Block):
    plateau_radius: float = 1.0
    support_radius: float = 2.0
    c: float = 1.0
    tol: float = 1e-12

    @model_validator(mode='after')
    def _radii(self):
        if not (0 < self.plateau_radius < self.support_radius):
            raise ValueError("需要 0 < plateau_radius < support_radius")
        if self.c <= 0 or self.tol <= 0:
            raise ValueError("c 与 tol 必须为正")
        return self


class DistributionBlock(_Block):
    kind: Literal['delta', 'delta_prime', 'sawtooth', 'smooth_bump', 'sobolev_random',
                  'band_limited', 'delta_line', 'constant'] = 'delta'
    x0: Union[float, Tuple[float, float]] = 0.0
    center: Union[float, Tuple[float, float], None] = None
    width: float = 1.0
    s: float = 3.0
    K: int = 8
    position: float = 3.141592653589793
    seed: Optional[int] = None
    time_bump: Tuple[float, float, float] = (4.0, 8.0, 1.5)


class EpsWindow(_Block):
    """ε = 2^{-first} … 2^{-last}，或显式给出 values"""
    first: int = 2
    last: int = 8
    values: Optional[List[float]] = None

    @model_validator(mode='after')
    def _range(self):
        if self.values is not None:
            if len(self.values) == 0:
                raise ValueError("ε 列表不能为空")
            bad = [e for e in self.values if not (0 < e <= 1)]
            if bad:
                raise ValueError(f"ε 必须在 (0, 1] 内，发现 {bad}")
            if any(b >= a for a, b in zip(self.values, self.values[1:])):
                raise ValueError("ε 列表必须严格递减")
        elif self.first < 0 or self.last < self.first:
            raise ValueError(f"ε 指数窗口无效: first={self.first}, last={self.last}")
        return self

    def grid(self) -> List[float]:
        if self.values is not None:
            return list(self.values)
        return [2.0 ** -j for j in range(self.first, self.last + 1)]


class RegularizerBlock(_Block):
    nodes_per_unit: int = 64
    cfl: float = 0.5
    eigencount: Optional[int] = None
    cross_tol: float = 1e-6
    energy_tol: float = 1e-6


class SlicesBlock(_Block):
    count: int = 17
    margin: Optional[float] = None
    t_index: Optional[int] = None
    theta0: float = 3.141592653589793


class ProbeBlock(_Block):
    x0: Tuple[float, float] = (3.141592653589793, 3.141592653589793)
    directions: List[Tuple[float, float]] = Field(default_factory=lambda: [(1.0, 0.0), (0.0, 1.0)])
    half_angle: float = 0.39269908169872414
    window_radius: float = 1.0
    l_max: int = 6
    smooth_width: float = 2.5


class ExperimentConfig(_Block):
    experiment: ExperimentName
    geometry: GeometryBlock = Field(default_factory=GeometryBlock)
    geometries: Optional[List[GeometryBlock]] = None
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    distribution: DistributionBlock = Field(default_factory=DistributionBlock)
    eps_window: EpsWindow = Field(default_factory=EpsWindow)
    engine: Literal['spectral', 'wave'] = 'spectral'
    regularizer: RegularizerBlock = Field(default_factory=RegularizerBlock)
    slices: SlicesBlock = Field(default_factory=SlicesBlock)
    probe: ProbeBlock = Field(default_factory=ProbeBlock)
    alpha: str = 'one_plus_half_cos'
    output_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    seed: int = 0
    tolerances: Dict[str, float] = Field(default_factory=dict)

    def echo(self) -> dict:
        """完整解析后的配置（写入 verdict.json）"""
        return self.model_dump(mode='json')


def _line_of(text: str, loc: Tuple) -> Optional[int]:
    """按字段路径在原文中找出第一个键所在的行"""
    if not loc:
        return None
    key = str(loc[-1]) if isinstance(loc[-1], str) else (str(loc[-2]) if len(loc) > 1 else None)
    if key is None:
        return None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip().lstrip('"')
        if stripped.startswith(f"{key}:") or stripped.startswith(f'{key}":'):
            return number
    return None


def parse_config(text: str, fmt: str = 'yaml') -> ExperimentConfig:
    """解析配置文本；fmt 为 'yaml' 或 'json'"""
    try:
        if fmt == 'json':
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigError(f"YAML 解析失败: {e.problem}", line=line) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 解析失败: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 解析失败: {e.msg}", line=e.lineno) from e

    if not isinstance(raw, dict):
        raise ConfigError("配置文件顶层必须是键值映射")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        path = '.'.join(str(p) for p in first['loc'])
        raise ConfigError(f"配置校验失败 [{path}]: {first['msg']}", line=_line_of(text, first['loc'])) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """读取配置文件，按扩展名区分 JSON 与 YAML"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
    fmt = 'json' if path.suffix.lower() == '.json' else 'yaml'
    config = parse_config(text, fmt)
    logger.debug(f"配置已加载: {path} (实验 {config.experiment})")
    return config
