import logging
import os
import sys
from pathlib import Path
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# 加载环境变量
load_dotenv()


class Config:
    """应用配置类"""

    # 求解器配置
    CONE_SOLVER = os.getenv('NOMA_EE_SOLVER', 'CLARABEL').upper()
    SOLVER_TOL = 1e-8
    FEASIBILITY_TOL = 1e-6

    # 日志配置
    LOG_DIR = os.getenv('NOMA_EE_LOG_DIR', 'logs')
    LOG_LEVEL = os.getenv('NOMA_EE_LOG_LEVEL', 'INFO').upper()

    # 应用配置
    DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

    @classmethod
    def validate(cls):
        """验证配置是否完整"""
        if not cls.CONE_SOLVER:
            raise ValueError("请设置NOMA_EE_SOLVER环境变量")
        if not isinstance(logging.getLevelName(cls.LOG_LEVEL), int):
            raise ValueError(f"未知的日志级别: {cls.LOG_LEVEL}")
        return True


DesignName = Literal["gee-max", "mmee", "pf"]
ALL_DESIGNS = ["gee-max", "mmee", "pf"]


class ScenarioTemplate(BaseModel):
    """仿真场景模板（默认值为标准仿真参数）"""
    model_config = ConfigDict(frozen=True)

    num_antennas: int = Field(default=3, ge=1)
    distances_m: List[float] = Field(default=[1.0, 5.5, 25.0], min_length=1)
    path_loss_exp: float = Field(default=2.0, ge=0.0)
    noise_var: float = Field(default=2.0, gt=0.0)
    sinr_threshold: float = Field(default=1e-3, ge=0.0)
    power_loss_dbm: float = Field(default=45.0)
    amp_efficiency: float = Field(default=0.65, gt=0.0, le=1.0)
    bandwidth_hz: float = Field(default=1e6, gt=0.0)

    @field_validator('distances_m')
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(d <= 0 for d in value):
            raise ValueError(f"用户距离必须为正数: {value}")
        return value

    @property
    def num_users(self) -> int:
        return len(self.distances_m)

    @property
    def power_loss_w(self) -> float:
        return 10.0 ** ((self.power_loss_dbm - 30.0) / 10.0)


class SweepConfig(BaseModel):
    """蒙特卡洛扫描配置"""
    model_config = ConfigDict(frozen=True)

    scenario: ScenarioTemplate = Field(default_factory=ScenarioTemplate)
    designs: List[DesignName] = Field(default_factory=lambda: list(ALL_DESIGNS), min_length=1)
    tx_snr_db: List[float] = Field(default=[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0], min_length=1)
    d3_sweep_m: Optional[List[float]] = Field(default=None, description="设置后扫描最弱用户距离")
    trials: int = Field(default=200, ge=1)
    base_seed: int = Field(default=20240601, ge=0, lt=2 ** 64)
    output_dir: Path = Field(default=Path('results'))
    parallelism: int = Field(default=1, ge=1)
    eps: float = Field(default=1e-3, gt=0.0)
    max_outer: int = Field(default=100, ge=1)
    max_resample: int = Field(default=10, ge=0)
    dump_subproblems: bool = False

    @field_validator('d3_sweep_m')
    @classmethod
    def _positive_d3(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and (not value or any(d <= 0 for d in value)):
            raise ValueError(f"d3 扫描列表必须非空且为正数: {value}")
        return value


DEFAULT_CONFIG_PATH = Path(__file__).resolve().with_name('default_config.toml')


def load_sweep_config(path: Optional[Path] = None) -> SweepConfig:
    """读取 TOML 配置；path 为 None 时读取仓库中的 default_config.toml"""
    path = DEFAULT_CONFIG_PATH if path is None else path
    with open(path, 'rb') as f:
        data = tomllib.load(f)
    return SweepConfig.model_validate(data)


def write_default_config(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(DEFAULT_CONFIG_PATH.read_text(encoding='utf-8'), encoding='utf-8')
    return path
