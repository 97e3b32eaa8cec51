"""
MISO NOMA 系统模型 - 场景、用户排序与精确性能指标

所有用户/天线下标在Python接口中从0开始：用户0为信道最强的用户。
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ScenarioError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 单位换算
# ---------------------------------------------------------------------------

def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    """dBm -> W，例如 45 dBm -> 31.6228 W"""
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def tx_snr_to_power(tx_snr_db: float, noise_var: float) -> float:
    """TX-SNR(dB) = 10 log10(P_ava / sigma^2)，反解得到 P_ava"""
    return noise_var * db_to_linear(tx_snr_db)


# ---------------------------------------------------------------------------
# 数据类型
# ---------------------------------------------------------------------------

class Fading(str, Enum):
    RAYLEIGH = 'rayleigh'


class ChannelModelConfig(BaseModel):
    """信道生成配置: h_i = sqrt(d_i^-kappa) * v_i"""
    model_config = ConfigDict(frozen=True)

    distances_m: List[float] = Field(description="各用户到基站的距离（米）")
    path_loss_exp: float = Field(default=2.0, ge=0.0, description="路径损耗指数 kappa")
    fading: Fading = Field(default=Fading.RAYLEIGH, description="小尺度衰落类型")
    rng_seed: int = Field(default=0, ge=0, lt=2 ** 64, description="64位随机种子")

    @field_validator('distances_m')
    @classmethod
    def _positive_distances(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("至少需要一个用户距离")
        if any(not np.isfinite(d) or d <= 0 for d in value):
            raise ValueError(f"用户距离必须为正数: {value}")
        return value

    @property
    def num_users(self) -> int:
        return len(self.distances_m)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Beamformers:
    """K个长度为N的复数预编码向量，按行存放"""
    vectors: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.array(self.vectors, dtype=complex))
        if arr.ndim != 2:
            raise ScenarioError(f"波束成形矩阵维度错误: {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ScenarioError("波束成形向量包含非有限值")
        object.__setattr__(self, 'vectors', _frozen_array(arr, complex))

    @classmethod
    def zeros(cls, num_users: int, num_antennas: int) -> 'Beamformers':
        return cls(np.zeros((num_users, num_antennas), dtype=complex))

    @property
    def num_users(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.vectors.shape[1]

    @property
    def powers(self) -> np.ndarray:
        """每个用户的发射功率 P_i = ||w_i||^2"""
        return np.sum(np.abs(self.vectors) ** 2, axis=1)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))


@dataclass(frozen=True)
class SystemScenario:
    """单个问题实例：信道、噪声、功率预算、功耗模型与速率门限"""
    channels: np.ndarray
    noise_vars: np.ndarray
    p_available: float
    amp_efficiency: float
    power_loss_per_user: np.ndarray
    bandwidth_hz: float
    sinr_thresholds: np.ndarray

    def __post_init__(self):
        channels = np.atleast_2d(np.array(self.channels, dtype=complex))
        k = channels.shape[0]
        object.__setattr__(self, 'channels', _frozen_array(channels, complex))
        for name in ('noise_vars', 'power_loss_per_user', 'sinr_thresholds'):
            values = np.array(getattr(self, name), dtype=float).reshape(-1)
            if values.shape != (k,):
                raise ScenarioError(f"{name} 长度应为 {k}，实际为 {values.shape}")
            object.__setattr__(self, name, _frozen_array(values, float))
        self._validate()

    def _validate(self):
        if not np.all(np.isfinite(self.channels)):
            raise ScenarioError("信道包含非有限值")
        if np.any(self.noise_vars <= 0) or not np.all(np.isfinite(self.noise_vars)):
            raise ScenarioError(f"噪声方差必须为正: {self.noise_vars}")
        if not (np.isfinite(self.p_available) and self.p_available >= 0):
            raise ScenarioError(f"功率预算非法: {self.p_available}")
        if not (0.0 < self.amp_efficiency <= 1.0):
            raise ScenarioError(f"放大器效率必须在 (0,1] 内: {self.amp_efficiency}")
        if np.any(self.power_loss_per_user < 0) or not np.all(np.isfinite(self.power_loss_per_user)):
            raise ScenarioError(f"电路损耗功率非法: {self.power_loss_per_user}")
        if not (np.isfinite(self.bandwidth_hz) and self.bandwidth_hz > 0):
            raise ScenarioError(f"带宽必须为正: {self.bandwidth_hz}")
        if np.any(self.sinr_thresholds < 0) or not np.all(np.isfinite(self.sinr_thresholds)):
            raise ScenarioError(f"SINR门限非法: {self.sinr_thresholds}")

    @classmethod
    def uniform(cls, channels, noise_var: float, p_available: float, amp_efficiency: float = 0.65,
                power_loss: float = 1.0, bandwidth_hz: float = 1.0,
                sinr_threshold: float = 1e-3) -> 'SystemScenario':
        """所有用户共享同一噪声方差、损耗功率与门限时的便捷构造"""
        k = np.atleast_2d(channels).shape[0]
        return cls(
            channels=channels,
            noise_vars=np.full(k, noise_var),
            p_available=p_available,
            amp_efficiency=amp_efficiency,
            power_loss_per_user=np.full(k, power_loss),
            bandwidth_hz=bandwidth_hz,
            sinr_thresholds=np.full(k, sinr_threshold),
        )

    @property
    def num_users(self) -> int:
        return self.channels.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[1]

    @property
    def channel_gains(self) -> np.ndarray:
        return np.sum(np.abs(self.channels) ** 2, axis=1)

    @property
    def min_rates(self) -> np.ndarray:
        """R_i^min = log2(1 + eta_i^min)，由门限推导而来，不单独存储"""
        return np.log2(1.0 + self.sinr_thresholds)

    @property
    def total_power_loss(self) -> float:
        return float(np.sum(self.power_loss_per_user))

    @property
    def is_ordered(self) -> bool:
        gains = self.channel_gains
        return bool(np.all(gains[:-1] >= gains[1:]))

    def with_power(self, p_available: float) -> 'SystemScenario':
        return replace(self, p_available=p_available)

    def ordered(self) -> Tuple['SystemScenario', np.ndarray]:
        """按信道强度降序重排所有逐用户参数，返回 (新场景, 置换)"""
        _, perm = order_users(self.channels)
        scenario = replace(
            self,
            channels=self.channels[perm],
            noise_vars=self.noise_vars[perm],
            power_loss_per_user=self.power_loss_per_user[perm],
            sinr_thresholds=self.sinr_thresholds[perm],
        )
        return scenario, perm


@dataclass(frozen=True)
class Metrics:
    per_user_sinr: np.ndarray
    per_user_rate: np.ndarray
    per_user_ee: np.ndarray
    per_user_power: np.ndarray
    gee: float

    @property
    def min_ee(self) -> float:
        return float(np.min(self.per_user_ee))

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.per_user_rate))

    @property
    def sum_log_ee(self) -> float:
        with np.errstate(divide='ignore'):
            return float(np.sum(np.log2(self.per_user_ee)))


@dataclass(frozen=True)
class FeasibilityReport:
    sic_ok: bool
    power_ok: bool
    rate_ok: bool
    margins: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.sic_ok and self.power_ok and self.rate_ok


# ---------------------------------------------------------------------------
# 信道生成与排序
# ---------------------------------------------------------------------------

def generate_channels(config: ChannelModelConfig, n_antennas: int) -> np.ndarray:
    """
    生成瑞利衰落信道 h_i = sqrt(d_i^-kappa) v_i

    Args:
        config: 信道模型配置（距离、路径损耗指数、随机种子）
        n_antennas: 基站天线数 N

    Returns:
        形状为 (K, N) 的复数数组；对同一 (种子, 配置, N) 结果完全确定
    """
    if n_antennas < 1:
        raise ScenarioError(f"天线数必须为正: {n_antennas}")
    rng = np.random.default_rng(config.rng_seed)
    k = config.num_users
    v = (rng.standard_normal((k, n_antennas)) + 1j * rng.standard_normal((k, n_antennas))) / np.sqrt(2.0)
    distances = np.asarray(config.distances_m, dtype=float)
    scale = np.sqrt(distances ** (-config.path_loss_exp))
    return scale[:, None] * v


def order_users(channels) -> Tuple[np.ndarray, np.ndarray]:
    """按 ||h_i||^2 降序稳定排序；perm[排序后下标] = 原始下标"""
    channels = np.atleast_2d(np.asarray(channels, dtype=complex))
    gains = np.sum(np.abs(channels) ** 2, axis=1)
    perm = np.argsort(-gains, kind='stable')
    return channels[perm], perm


# ---------------------------------------------------------------------------
# SINR / 速率 / 能效
# ---------------------------------------------------------------------------

def gain_matrix(s: SystemScenario, w: Beamformers) -> np.ndarray:
    """G[k, j] = |h_k^H w_j|^2"""
    return np.abs(s.channels.conj() @ w.vectors.T) ** 2


def sinr_matrix(s: SystemScenario, w: Beamformers) -> np.ndarray:
    """
    S[k, i] 为用户k解码消息i的SINR（仅 k <= i 有意义，其余为 inf）

    干扰来自信道更强用户的消息 j < i，它们在SIC顺序中尚未被消除。
    """
    gains = gain_matrix(s, w)
    interference = np.cumsum(gains, axis=1) - gains
    sinr = gains / (interference + s.noise_vars[:, None])
    k = s.num_users
    upper = np.triu(np.ones((k, k), dtype=bool))
    return np.where(upper, sinr, np.inf)


def sinr_of_message_at_user(s: SystemScenario, w: Beamformers, i: int, k: int) -> float:
    if not 0 <= k <= i < s.num_users:
        raise ScenarioError(f"需要 0 <= k <= i < K，实际 i={i}, k={k}")
    h_k = s.channels[k]
    signal = abs(np.vdot(h_k, w.vectors[i])) ** 2
    interference = sum(abs(np.vdot(h_k, w.vectors[j])) ** 2 for j in range(i))
    return float(signal / (interference + s.noise_vars[k]))


def effective_sinr(s: SystemScenario, w: Beamformers, i: int) -> float:
    """SINR_i = min_{k<=i} SINR_k^(i)"""
    return min(sinr_of_message_at_user(s, w, i, k) for k in range(i + 1))


def effective_sinrs(s: SystemScenario, w: Beamformers) -> np.ndarray:
    return np.min(sinr_matrix(s, w), axis=0)


def metrics(s: SystemScenario, w: Beamformers, bandwidth_hz: Optional[float] = None) -> Metrics:
    """
    计算精确性能指标

    优化过程中带宽取1（bits/s/Hz），报告时乘以 B_w 得到 bits/Joule。
    bandwidth_hz 为 None 时使用场景带宽。
    """
    scale = s.bandwidth_hz if bandwidth_hz is None else bandwidth_hz
    sinr = effective_sinrs(s, w)
    rates = scale * np.log2(1.0 + sinr)
    powers = w.powers
    consumed = powers / s.amp_efficiency + s.power_loss_per_user
    with np.errstate(divide='ignore', invalid='ignore'):
        ee = np.where(consumed > 0, rates / consumed, 0.0)
    denominator = powers.sum() / s.amp_efficiency + s.total_power_loss
    gee = float(rates.sum() / denominator) if denominator > 0 else 0.0
    return Metrics(per_user_sinr=sinr, per_user_rate=rates, per_user_ee=ee,
                   per_user_power=powers, gee=gee)


def check_feasibility(s: SystemScenario, w: Beamformers, tol: float = 1e-6) -> FeasibilityReport:
    """检查SIC功率顺序、总功率预算与最小速率约束，返回报告而不抛异常"""
    gains = gain_matrix(s, w)
    if s.num_users > 1:
        sic_margin = float(np.min(gains[:, 1:] - gains[:, :-1]))
    else:
        sic_margin = float('inf')
    power_margin = float(s.p_available - w.total_power)
    rate_margin = float(np.min(effective_sinrs(s, w) - s.sinr_thresholds))
    report = FeasibilityReport(
        sic_ok=sic_margin >= -tol,
        power_ok=power_margin >= -tol,
        rate_ok=rate_margin >= -tol,
        margins={'sic': sic_margin, 'power': power_margin, 'rate': rate_margin},
    )
    if not report.ok:
        logger.debug(f"可行性检查未通过: {report.margins}")
    return report
