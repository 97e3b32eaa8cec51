"""
暴力网格搜索参考解 与 比例公平条件检查

只处理穷举可靠的小实例：N=1（标量波束），或 N=2 且信道为实数（功率 + 方向角）。
目标值一律在单位带宽下计算，与 sca.true_objective 可直接比较。
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize_scalar

from .errors import NoFeasiblePoint, ScenarioError
from .model import Beamformers, SystemScenario

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 10 ** 7
MAX_ORACLE_USERS = 3
CHUNK_SIZE = 1 << 16
PF_VIOLATION_TOL = 1e-3


class Objective(str, Enum):
    MIN_EE = 'MinEE'
    SUM_LOG_EE = 'SumLogEE'
    GEE = 'GEE'


class GridSpec(BaseModel):
    """每个用户的功率网格（N=2 时再加方向角网格，角度取 [0, pi]）"""
    model_config = ConfigDict(frozen=True)

    power_steps: int = Field(default=400, ge=2)
    angle_steps: int = Field(default=64, ge=2)
    power_min: float = Field(default=0.0, ge=0.0)
    power_max: Optional[float] = Field(default=None, description="None 表示取 P_ava")

    @model_validator(mode='after')
    def _check_range(self):
        if self.power_max is not None and self.power_max < self.power_min:
            raise ValueError(f"power_max={self.power_max} 小于 power_min={self.power_min}")
        return self

    def refined(self) -> 'GridSpec':
        """区间数加倍；新网格包含原网格的全部点"""
        return self.model_copy(update={'power_steps': 2 * self.power_steps - 1,
                                       'angle_steps': 2 * self.angle_steps - 1})

    def axes(self, s: SystemScenario) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        hi = s.p_available if self.power_max is None else min(self.power_max, s.p_available)
        lo = min(self.power_min, hi)
        powers = np.linspace(lo, hi, self.power_steps)
        angles = np.linspace(0.0, math.pi, self.angle_steps) if s.num_antennas == 2 else None
        return powers, angles


@dataclass(frozen=True)
class OracleResult:
    w: Beamformers
    value: float
    objective: Objective
    evaluated: int
    feasible: int
    cell_variation: float

    def tolerance(self, relative: float = 0.02) -> float:
        """SCA 结果被接受的下限与最优值的差距: max(相对容差, 一个网格单元内的目标变化)"""
        return max(relative * abs(self.value), self.cell_variation)


@dataclass(frozen=True)
class PfConditionReport:
    max_lhs: float
    violated: bool
    n_feasible: int
    n_drawn: int


# ---------------------------------------------------------------------------
# 批量精确评估
# ---------------------------------------------------------------------------

def batch_evaluate(s: SystemScenario, W: np.ndarray, tol: float = 0.0) -> dict:
    """
    对一批波束 W (M, K, N) 计算单位带宽下的能效指标与可行性

    Returns:
        dict: rates/ee (M, K)，gee (M,)，feasible (M,) 布尔掩码
    """
    k_users = s.num_users
    z = np.einsum('kn,mjn->mkj', s.channels.conj(), W)
    gains = np.abs(z) ** 2                                   # gains[m, k, j] = |h_k^H w_j|^2
    interference = np.cumsum(gains, axis=2) - gains
    sinr = gains / (interference + s.noise_vars[None, :, None])
    upper = np.triu(np.ones((k_users, k_users), dtype=bool))
    effective = np.min(np.where(upper[None], sinr, np.inf), axis=1)
    rates = np.log2(1.0 + effective)
    powers = np.sum(np.abs(W) ** 2, axis=2)
    consumed = powers / s.amp_efficiency + s.power_loss_per_user[None, :]
    with np.errstate(divide='ignore', invalid='ignore'):
        ee = np.where(consumed > 0, rates / consumed, 0.0)
        denominator = powers.sum(axis=1) / s.amp_efficiency + s.total_power_loss
        gee = np.where(denominator > 0, rates.sum(axis=1) / denominator, 0.0)
    if k_users > 1:
        sic_ok = np.all(gains[:, :, 1:] - gains[:, :, :-1] >= -tol, axis=(1, 2))
    else:
        sic_ok = np.ones(len(W), dtype=bool)
    power_ok = powers.sum(axis=1) <= s.p_available + tol
    rate_ok = np.all(effective >= s.sinr_thresholds[None, :] - tol, axis=1)
    return {'rates': rates, 'ee': ee, 'gee': gee, 'feasible': sic_ok & power_ok & rate_ok}


def _objective_values(evaluation: dict, objective: Objective) -> np.ndarray:
    if objective == Objective.MIN_EE:
        return np.min(evaluation['ee'], axis=1)
    if objective == Objective.SUM_LOG_EE:
        with np.errstate(divide='ignore'):
            return np.sum(np.log2(evaluation['ee']), axis=1)
    return evaluation['gee']


def _check_oracle_scenario(s: SystemScenario):
    if s.num_users > MAX_ORACLE_USERS:
        raise ScenarioError(f"网格搜索最多支持 {MAX_ORACLE_USERS} 个用户，实际 {s.num_users}")
    if s.num_antennas == 1:
        return
    if s.num_antennas == 2 and np.max(np.abs(s.channels.imag)) <= 1e-12:
        return
    raise ScenarioError("网格搜索只支持 N=1 或实信道的 N=2")


class _Grid:
    """把扁平下标映射为波束成形矩阵"""

    def __init__(self, s: SystemScenario, spec: GridSpec):
        self.s = s
        self.powers, self.angles = spec.axes(s)
        per_user = (len(self.powers),) if self.angles is None else (len(self.powers), len(self.angles))
        self.per_user = per_user
        self.shape = per_user * s.num_users
        self.size = int(np.prod(self.shape, dtype=np.int64))

    def beams(self, flat: np.ndarray) -> np.ndarray:
        coords = np.unravel_index(flat, self.shape)
        k_users = self.s.num_users
        W = np.zeros((len(flat), k_users, self.s.num_antennas), dtype=complex)
        step = len(self.per_user)
        for i in range(k_users):
            amplitude = np.sqrt(self.powers[coords[step * i]])
            if self.angles is None:
                W[:, i, 0] = amplitude
            else:
                theta = self.angles[coords[step * i + 1]]
                W[:, i, 0] = amplitude * np.cos(theta)
                W[:, i, 1] = amplitude * np.sin(theta)
        return W

    def power_order_mask(self, flat: np.ndarray) -> np.ndarray:
        """N=1 时 SIC 链退化为 p_1 <= ... <= p_K，评估前直接剪枝"""
        if self.angles is not None or self.s.num_users == 1:
            return np.ones(len(flat), dtype=bool)
        coords = np.unravel_index(flat, self.shape)
        order = np.stack(coords, axis=1)
        return np.all(np.diff(order, axis=1) >= 0, axis=1)

    def neighbours(self, flat: int) -> np.ndarray:
        coords = np.array(np.unravel_index(flat, self.shape))
        out = []
        for axis, length in enumerate(self.shape):
            for offset in (-1, 1):
                c = coords.copy()
                c[axis] += offset
                if 0 <= c[axis] < length:
                    out.append(np.ravel_multi_index(tuple(c), self.shape))
        return np.array(out, dtype=np.int64)


def grid_optimize(s: SystemScenario, objective, grid: Optional[GridSpec] = None,
                  chunk_size: int = CHUNK_SIZE) -> OracleResult:
    """
    在网格上穷举求可行最大点（可行性检查容差为0）

    分块评估，块内取第一个最大值，块间只在严格更大时更新，因此结果与分块大小无关。
    """
    objective = Objective(objective)
    grid = grid or GridSpec()
    _check_oracle_scenario(s)
    g = _Grid(s, grid)
    if g.size > MAX_GRID_POINTS:
        raise ValueError(f"网格点数 {g.size} 超过上限 {MAX_GRID_POINTS}")

    best_value, best_flat = -np.inf, -1
    evaluated = feasible = 0
    for start in range(0, g.size, chunk_size):
        flat = np.arange(start, min(start + chunk_size, g.size), dtype=np.int64)
        flat = flat[g.power_order_mask(flat)]
        if flat.size == 0:
            continue
        evaluation = batch_evaluate(s, g.beams(flat))
        evaluated += flat.size
        mask = evaluation['feasible']
        feasible += int(mask.sum())
        if not mask.any():
            continue
        values = np.where(mask, _objective_values(evaluation, objective), -np.inf)
        pos = int(np.argmax(values))
        if best_flat < 0 or values[pos] > best_value:
            best_value, best_flat = float(values[pos]), int(flat[pos])

    if best_flat < 0:
        raise NoFeasiblePoint(f"网格中没有可行点（共评估 {evaluated} 个）")

    neighbours = g.neighbours(best_flat)
    variation = 0.0
    if neighbours.size:
        evaluation = batch_evaluate(s, g.beams(neighbours))
        values = _objective_values(evaluation, objective)[evaluation['feasible']]
        values = values[np.isfinite(values)]
        if values.size:
            variation = float(np.max(np.abs(values - best_value)))

    w = Beamformers(g.beams(np.array([best_flat]))[0])
    logger.info(f"网格搜索完成: {objective.value}={best_value:.6g}, 可行点 {feasible}/{evaluated}")
    return OracleResult(w=w, value=best_value, objective=objective, evaluated=evaluated,
                        feasible=feasible, cell_variation=variation)


def single_user_ee_max(s: SystemScenario, xatol: float = 1e-12) -> Tuple[float, float]:
    """K=1 时用有界黄金分割求 EE 最大值，返回 (最优功率, 最优能效)"""
    if s.num_users != 1:
        raise ScenarioError("单用户参考解要求 K=1")
    gain = float(s.channel_gains[0])
    sigma2 = float(s.noise_vars[0])
    p_min = float(s.sinr_thresholds[0]) * sigma2 / gain
    if p_min > s.p_available:
        raise NoFeasiblePoint(f"最小速率所需功率 {p_min:.6g} 超过预算")

    def negative_ee(p: float) -> float:
        rate = math.log2(1.0 + p * gain / sigma2)
        return -rate / (p / s.amp_efficiency + float(s.power_loss_per_user[0]))

    result = minimize_scalar(negative_ee, bounds=(p_min, s.p_available), method='bounded',
                             options={'xatol': xatol})
    return float(result.x), float(-result.fun)


# ---------------------------------------------------------------------------
# 比例公平条件
# ---------------------------------------------------------------------------

def pf_condition_lhs(ee, ee_star) -> np.ndarray:
    """sum_i (EE_i - EE_i*) / EE_i*，ee 可以是 (K,) 或 (M, K)"""
    ee = np.asarray(ee, dtype=float)
    ee_star = np.asarray(ee_star, dtype=float)
    return np.sum((ee - ee_star) / ee_star, axis=-1)


def sample_beamformers(s: SystemScenario, count: int, rng: np.random.Generator) -> np.ndarray:
    """随机抽取一批满足功率预算的波束；N=1 时按升序分配功率，使 SIC 顺序自动成立"""
    k_users, n = s.num_users, s.num_antennas
    shares = rng.dirichlet(np.ones(k_users + 1), size=count)[:, :k_users]
    powers = shares * s.p_available
    if n == 1:
        powers = np.sort(powers, axis=1)
    directions = rng.standard_normal((count, k_users, n)) + 1j * rng.standard_normal((count, k_users, n))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    return np.sqrt(powers)[:, :, None] * directions


def pf_condition_check(s: SystemScenario, ee_star, trials: int = 10_000, rng_seed: int = 0,
                       max_draws: Optional[int] = None, batch: int = 4096) -> PfConditionReport:
    """
    用随机可行资源分配检验比例公平条件

    抽样直到得到 trials 个可行点或抽满 max_draws（默认 50·trials）；可行点不足时如实报告数量。
    ee_star 与 EE 均按单位带宽计算。
    """
    ee_star = np.asarray(ee_star, dtype=float)
    if np.any(ee_star <= 0):
        raise ValueError(f"EE* 必须全部为正: {ee_star}")
    rng = np.random.default_rng(rng_seed)
    max_draws = max_draws if max_draws is not None else 50 * trials
    n_drawn = n_feasible = 0
    max_lhs = -np.inf
    while n_feasible < trials and n_drawn < max_draws:
        count = min(batch, max_draws - n_drawn)
        evaluation = batch_evaluate(s, sample_beamformers(s, count, rng))
        n_drawn += count
        ee = evaluation['ee'][evaluation['feasible']][:trials - n_feasible]
        if ee.size:
            n_feasible += len(ee)
            max_lhs = max(max_lhs, float(np.max(pf_condition_lhs(ee, ee_star))))
    if n_feasible < trials:
        logger.warning(f"比例公平检验只得到 {n_feasible}/{trials} 个可行样本")
    return PfConditionReport(max_lhs=max_lhs, violated=bool(max_lhs > PF_VIOLATION_TOL),
                             n_feasible=n_feasible, n_drawn=n_drawn)
