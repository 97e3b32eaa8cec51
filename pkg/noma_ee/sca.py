"""
序列凸近似（SCA）波束成形设计

- MMEE: 最大化最小用户能效
- PF:   最大化各用户能效对数和（比例公平）
- GEE-Max: Dinkelbach 外层 + SCA 内层，最大化系统全局能效（基线）

所有优化均在单位带宽（bits/s/Hz）下进行，B_w 只作为报告时的缩放因子。
"""
import logging
import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import Config
from .cone import (ConeSolver, ConicBuilder, ConicProgram, complex_forms, dump_program,
                   encode_exp2, get_solver)
from .errors import (DegenerateExpansion, InfeasibleScenario, ScenarioError, SolverFailure,
                     ZeroEEInitialization)
from .model import (Beamformers, Metrics, SystemScenario, check_feasibility, gain_matrix, metrics)

logger = logging.getLogger(__name__)

TAU_CLAMP = 1e-6
TAU_DEGENERATE = 1e-9
POWER_FLOOR_RATIO = 1e-9
INIT_SAFETY = 1.0 + 1e-10
MAX_INIT_PASSES = 50


class Design(str, Enum):
    GEE_MAX = 'gee-max'
    MMEE = 'mmee'
    PF = 'pf'


class StopReason(str, Enum):
    TOLERANCE = 'tolerance'
    STALLED = 'stalled'
    MAX_OUTER = 'max_outer'
    INFEASIBLE = 'infeasible'


class ScaOptions(BaseModel):
    """SCA 迭代参数"""
    model_config = ConfigDict(frozen=True)

    eps: float = Field(default=1e-3, gt=0, description="收敛门限（PF 绝对，其余相对）")
    max_outer: int = Field(default=100, ge=1, description="SCA 最大迭代次数")
    max_dinkelbach: int = Field(default=30, ge=1, description="Dinkelbach 最大外层次数")
    damping: Tuple[float, ...] = Field(default=(1.0, 0.5, 0.25, 0.125), description="阻尼系数阶梯")
    solver_name: str = Field(default=Config.CONE_SOLVER)
    exp_cone: Optional[bool] = Field(default=None, description="None 表示由后端能力决定")
    solver_tol: float = Field(default=Config.SOLVER_TOL, gt=0)
    solver_max_iters: int = Field(default=200, ge=1)
    feas_tol: float = Field(default=Config.FEASIBILITY_TOL, ge=0)
    clamp_tau: bool = True
    dump_dir: Optional[Path] = None


@dataclass(frozen=True)
class ScaState:
    """当前迭代点：波束成形向量与全部松弛变量"""
    w: Beamformers
    alpha: float
    beta: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    rho: np.ndarray          # 下三角 K x K，rho[i, k] 仅 k <= i 有效
    mu: np.ndarray
    varsigma: np.ndarray
    iter: int = 0
    objective_trace: Tuple[float, ...] = ()


@dataclass
class DesignResult:
    design: Design
    w: Beamformers
    metrics: Metrics
    iterations: int
    converged: bool
    trace: List[float]
    subproblem_statuses: List[str]
    stop_reason: StopReason
    dinkelbach_lambda: Optional[float] = None
    solve_ms: float = 0.0
    message: str = ''
    accepted_steps: int = 0

    @property
    def feasible(self) -> bool:
        return self.stop_reason != StopReason.INFEASIBLE


# ---------------------------------------------------------------------------
# 线性化工具
# ---------------------------------------------------------------------------

def taylor_abs2_value(z_ref, z):
    """|z|^2 在 z_ref 处一阶展开的数值: |z_ref|^2 + 2 Re(conj(z_ref)(z - z_ref))"""
    z_ref = np.asarray(z_ref, dtype=complex)
    z = np.asarray(z, dtype=complex)
    return np.abs(z_ref) ** 2 + 2.0 * np.real(np.conj(z_ref) * (z - z_ref))


def taylor_abs2_lb(z_ref: complex, z_expr: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """
    |z|^2 的线性下界（切平面）

    Args:
        z_ref: 展开点（复数）
        z_expr: z 的 (实部仿射式, 虚部仿射式)

    Returns:
        仿射式 f，满足 f(z) <= |z|^2，且在 z = z_ref 处取等
    """
    re_form, im_form = z_expr
    a, b = float(np.real(z_ref)), float(np.imag(z_ref))
    f = 2.0 * a * re_form + 2.0 * b * im_form
    f[-1] -= a * a + b * b
    return f


def _rho_slot(i: int, k: int) -> int:
    return i * (i + 1) // 2 + k


def _user_w(builder: ConicBuilder, s: SystemScenario, i: int) -> np.ndarray:
    n = s.num_antennas
    return builder.variables['w'][2 * n * i: 2 * n * (i + 1)]


def _phase_refs(s: SystemScenario, w: Beamformers) -> np.ndarray:
    """phi[i, k] = arg(h_k^H w_i)"""
    z = s.channels.conj() @ w.vectors.T      # z[k, i] = h_k^H w_i
    return np.angle(z).T


def default_exp2_bounds(s: SystemScenario) -> Tuple[float, float]:
    """delta 的先验范围 [0, log2(1 + P_ava max||h||^2 / min sigma^2)]"""
    hi = math.log2(1.0 + s.p_available * float(np.max(s.channel_gains)) / float(np.min(s.noise_vars)))
    return 0.0, max(hi, 1e-6)


def _varsigma_bounds(s: SystemScenario, state: ScaState) -> Tuple[float, float]:
    # log2(1+x) <= x/ln2 给出 EE_i <= eps0 g_max / (sigma^2 ln2)
    ee_cap = s.amp_efficiency * float(np.max(s.channel_gains)) / (float(np.min(s.noise_vars)) * math.log(2.0))
    lo = float(np.min(state.varsigma[np.isfinite(state.varsigma)], initial=0.0)) - 20.0
    return lo, max(math.log2(ee_cap), lo + 1.0)


def _new_builder(s: SystemScenario, solver: Optional[ConeSolver]) -> ConicBuilder:
    has_exp = solver.has_exp_cone if solver is not None else True
    return ConicBuilder(has_exp_cone=has_exp, exp2_bounds=default_exp2_bounds(s))


def _declare(builder: ConicBuilder, s: SystemScenario, design: Design):
    k, n = s.num_users, s.num_antennas
    builder.add_variable('w', 2 * n * k)
    if design == Design.GEE_MAX:
        builder.add_variable('delta', k)
        builder.add_variable('tau', k)
        builder.add_variable('rho', k * (k + 1) // 2)
        builder.add_variable('t', 1)
        return
    builder.add_variable('alpha', 1)
    builder.add_variable('beta', k)
    builder.add_variable('delta', k)
    builder.add_variable('tau', k)
    builder.add_variable('rho', k * (k + 1) // 2)
    if design == Design.PF:
        builder.add_variable('mu', k)
        builder.add_variable('varsigma', k)


# ---------------------------------------------------------------------------
# 约束构造
# ---------------------------------------------------------------------------

def add_soc_min_rate(builder: ConicBuilder, s: SystemScenario, i: int,
                     phases: Optional[np.ndarray] = None):
    """
    最小速率约束的二阶锥形式:
        Re(e^{-j phi} h_k^H w_i) / sqrt(eta_i) >= ||[h_k^H w_1, ..., h_k^H w_{i-1}, sigma_k]||,  k <= i

    phases 为 None 时 phi = 0；eta_i = 0 时约束恒成立，直接跳过。
    """
    eta = float(s.sinr_thresholds[i])
    if eta <= 0:
        return
    scale = 1.0 / math.sqrt(eta)
    for k in range(i + 1):
        h_k = s.channels[k]
        phase = 0.0 if phases is None else float(phases[i, k])
        re_form, _ = complex_forms(builder, h_k, _user_w(builder, s, i), phase)
        u = []
        for j in range(i):
            u.extend(complex_forms(builder, h_k, _user_w(builder, s, j)))
        u.append(builder.const(math.sqrt(s.noise_vars[k])))
        builder.add_soc(scale * re_form, u, label=f'min_rate[{i},{k}]')


def add_sic_chain(builder: ConicBuilder, s: SystemScenario, state: ScaState):
    """
    每个接收端 r: f_{r,j+1} >= |h_r^H w_j|^2

    f 为 |h_r^H w_{j+1}|^2 在当前点的切平面（下界），右端保持精确，因此满足约束的点
    一定满足真实的 SIC 功率顺序。写成锥形式 (f+1)/2 >= ||[Re, Im, (f-1)/2]||。
    """
    k_users = s.num_users
    z_ref = s.channels.conj() @ state.w.vectors.T
    half = builder.const(0.5)
    for r in range(k_users):
        h_r = s.channels[r]
        forms = [complex_forms(builder, h_r, _user_w(builder, s, j)) for j in range(k_users)]
        for j in range(k_users - 1):
            f = taylor_abs2_lb(z_ref[r, j + 1], forms[j + 1])
            re_form, im_form = forms[j]
            builder.add_soc(0.5 * f + half, [re_form, im_form, 0.5 * f - half], label=f'sic[{r},{j}]')


def add_power_budget(builder: ConicBuilder, s: SystemScenario):
    w_idx = builder.variables['w']
    u = [builder.unit(idx) for idx in w_idx]
    builder.add_soc(builder.const(math.sqrt(s.p_available)), u, label='power_budget')


def add_ee_floor(builder: ConicBuilder, s: SystemScenario, state: ScaState,
                 floor_var: Optional[str], i: int, clamp: bool = True):
    """
    用户 i 的能效下界约束组（floor_var 为 'alpha'、'mu' 或 None）:

    (a) beta_i >= ||[w_i / sqrt(eps0), sqrt(P_l,i)]||
    (b) tau_i >= 2^delta_i
    (c) rho_ik >= ||[h_k^H w_1, ..., h_k^H w_{i-1}, sigma_k]||
    (d) Re(e^{-j phi_ik} h_k^H w_i) >= sqrt(tau^-1) rho + rho^ / (2 sqrt(tau^-1)) (tau - tau^)
    (e) delta_i >= theta^ beta^2 + beta^2 (theta - theta^) + 2 beta^ theta^ (beta - beta^)

    floor_var 为 None 时只追加 (b)(c)(d)（Dinkelbach 子问题）。
    """
    v = builder.variables
    n = s.num_antennas
    w_i = _user_w(builder, s, i)
    delta_i = int(v['delta'][i])
    tau_i = int(v['tau'][i])

    tau_hat = float(state.tau[i])
    if clamp:
        tau_hat = max(tau_hat, 1.0 + TAU_CLAMP)
    elif tau_hat <= 1.0 + TAU_DEGENERATE:
        raise DegenerateExpansion(f"用户{i}的 tau^(n)={tau_hat!r} 过于接近 1，无法线性化")

    if floor_var is not None:
        beta_i = int(v['beta'][i])
        inv = 1.0 / math.sqrt(s.amp_efficiency)
        u = [builder.unit(idx, inv) for idx in w_i]
        u.append(builder.const(math.sqrt(s.power_loss_per_user[i])))
        builder.add_soc(builder.unit(beta_i), u, label=f'power_slack[{i}]')

    encode_exp2(delta_i, tau_i, builder, label=f'exp2[{i}]')

    phases = _phase_refs(s, state.w)
    slope = math.sqrt(tau_hat - 1.0)
    for k in range(i + 1):
        h_k = s.channels[k]
        rho_ik = int(v['rho'][_rho_slot(i, k)])
        u = []
        for j in range(i):
            u.extend(complex_forms(builder, h_k, _user_w(builder, s, j)))
        u.append(builder.const(math.sqrt(s.noise_vars[k])))
        builder.add_soc(builder.unit(rho_ik), u, label=f'interference[{i},{k}]')

        rho_hat = float(state.rho[i, k])
        curvature = rho_hat / (2.0 * slope)
        re_form, _ = complex_forms(builder, h_k, w_i, float(phases[i, k]))
        f = re_form.copy()
        f[rho_ik] -= slope
        f[tau_i] -= curvature
        f[-1] += curvature * tau_hat
        builder.add_nonneg(f, label=f'sinr_lin[{i},{k}]')

    if floor_var is None:
        return
    if floor_var == 'alpha':
        theta_idx, theta_hat = int(v['alpha'][0]), float(state.alpha)
    elif floor_var == 'mu':
        theta_idx, theta_hat = int(v['mu'][i]), float(state.mu[i])
    else:
        raise ValueError(f"未知的能效下界变量: {floor_var}")
    beta_hat = float(state.beta[i])
    f = builder.unit(delta_i)
    f[theta_idx] -= beta_hat ** 2
    f[beta_i] -= 2.0 * beta_hat * theta_hat
    f[-1] += 2.0 * theta_hat * beta_hat ** 2
    builder.add_nonneg(f, label=f'ee_floor[{i}]')


def _common_constraints(builder: ConicBuilder, s: SystemScenario, state: ScaState):
    add_sic_chain(builder, s, state)
    add_power_budget(builder, s)
    phases = _phase_refs(s, state.w)
    for i in range(s.num_users):
        add_soc_min_rate(builder, s, i, phases)


def build_mmee_subproblem(s: SystemScenario, state: ScaState, solver: Optional[ConeSolver] = None,
                          clamp: bool = True) -> ConicProgram:
    builder = _new_builder(s, solver)
    _declare(builder, s, Design.MMEE)
    builder.set_objective(builder.unit(int(builder.variables['alpha'][0])))
    _common_constraints(builder, s, state)
    for i in range(s.num_users):
        add_ee_floor(builder, s, state, 'alpha', i, clamp)
    return builder.build()


def build_pf_subproblem(s: SystemScenario, state: ScaState, solver: Optional[ConeSolver] = None,
                        clamp: bool = True) -> ConicProgram:
    ee = metrics(s, state.w, bandwidth_hz=1.0).per_user_ee
    if np.any(ee <= 0):
        raise ZeroEEInitialization(f"PF设计要求所有用户能效为正: {ee}")
    builder = _new_builder(s, solver)
    _declare(builder, s, Design.PF)
    objective = builder.form()
    objective[builder.variables['varsigma']] = 1.0
    builder.set_objective(objective)
    _common_constraints(builder, s, state)
    bounds = _varsigma_bounds(s, state)
    for i in range(s.num_users):
        add_ee_floor(builder, s, state, 'mu', i, clamp)
        encode_exp2(int(builder.variables['varsigma'][i]), int(builder.variables['mu'][i]), builder,
                    bounds=bounds, label=f'pf_exp2[{i}]')
    return builder.build()


def build_dinkelbach_subproblem(s: SystemScenario, state: ScaState, lam: float,
                                solver: Optional[ConeSolver] = None, clamp: bool = True) -> ConicProgram:
    """最大化 sum(delta) - lam (t / eps0 + P_l)，t >= sum ||w_i||^2"""
    if lam < 0:
        raise ValueError(f"Dinkelbach 参数必须非负: {lam}")
    builder = _new_builder(s, solver)
    _declare(builder, s, Design.GEE_MAX)
    v = builder.variables
    t = int(v['t'][0])
    objective = builder.form()
    objective[v['delta']] = 1.0
    objective[t] = -lam / s.amp_efficiency
    builder.set_objective(objective)

    # 旋转锥: ||[2w, t-1]|| <= t+1  <=>  t >= ||w||^2
    u = [builder.unit(idx, 2.0) for idx in v['w']]
    u.append(builder.unit(t) + builder.const(-1.0))
    builder.add_soc(builder.unit(t) + builder.const(1.0), u, label='total_power')

    _common_constraints(builder, s, state)
    for i in range(s.num_users):
        add_ee_floor(builder, s, state, None, i, clamp)
    return builder.build()


def pack_state(program: ConicProgram, s: SystemScenario, state: ScaState) -> np.ndarray:
    """把当前迭代点写成子问题的变量向量（用于检查展开点的可行性）"""
    x = np.zeros(program.var_count)
    v = program.variables
    n = s.num_antennas
    for i in range(s.num_users):
        idx = v['w'][2 * n * i: 2 * n * (i + 1)]
        x[idx[:n]] = state.w.vectors[i].real
        x[idx[n:]] = state.w.vectors[i].imag
    if 'alpha' in v:
        x[v['alpha'][0]] = state.alpha
    for name in ('beta', 'delta', 'tau', 'mu', 'varsigma'):
        if name in v:
            x[v[name]] = getattr(state, name)
    for i in range(s.num_users):
        for k in range(i + 1):
            x[v['rho'][_rho_slot(i, k)]] = state.rho[i, k]
    if 't' in v:
        x[v['t'][0]] = state.w.total_power
    return x


def extract_beamformers(program: ConicProgram, x: np.ndarray, s: SystemScenario) -> Beamformers:
    n = s.num_antennas
    idx = program.variables['w']
    vectors = np.empty((s.num_users, n), dtype=complex)
    for i in range(s.num_users):
        block = x[idx[2 * n * i: 2 * n * (i + 1)]]
        vectors[i] = block[:n] + 1j * block[n:]
    return Beamformers(vectors)


def align_phases(s: SystemScenario, w: Beamformers) -> Beamformers:
    """对每个 w_i 乘以 e^{-j arg(h_i^H w_i)}，使自身信道项为正实数；不改变任何 |h_k^H w_i|"""
    z = np.einsum('in,in->i', s.channels.conj(), w.vectors)
    rot = np.where(np.abs(z) > 0, np.exp(-1j * np.angle(z)), 1.0)
    return Beamformers(w.vectors * rot[:, None])


def _project_power(s: SystemScenario, w: Beamformers) -> Beamformers:
    total = w.total_power
    if total > s.p_available > 0:
        return Beamformers(w.vectors * math.sqrt(s.p_available / total))
    return w


# ---------------------------------------------------------------------------
# 初始化与松弛变量更新
# ---------------------------------------------------------------------------

def true_objective(s: SystemScenario, w: Beamformers, design: Design) -> float:
    m = metrics(s, w, bandwidth_hz=1.0)
    if design == Design.MMEE:
        return m.min_ee
    if design == Design.PF:
        return m.sum_log_ee
    return m.gee


def update_slacks(s: SystemScenario, state: ScaState, design: Design = Design.MMEE) -> ScaState:
    """按当前 w 把所有松弛变量取到等号成立的值，并记录真实目标值"""
    w = state.w
    m = metrics(s, w, bandwidth_hz=1.0)
    gains = gain_matrix(s, w)
    k_users = s.num_users
    rho = np.zeros((k_users, k_users))
    for i in range(k_users):
        for k in range(i + 1):
            rho[i, k] = math.sqrt(float(np.sum(gains[k, :i])) + float(s.noise_vars[k]))
    ee = m.per_user_ee
    with np.errstate(divide='ignore'):
        varsigma = np.where(ee > 0, np.log2(np.where(ee > 0, ee, 1.0)), -np.inf)
    delta = m.per_user_rate
    return replace(
        state,
        alpha=float(np.min(ee)),
        beta=np.sqrt(w.powers / s.amp_efficiency + s.power_loss_per_user),
        delta=delta,
        tau=2.0 ** delta,
        rho=rho,
        mu=ee.copy(),
        varsigma=varsigma,
        objective_trace=state.objective_trace + (true_objective(s, w, Design(design)),),
    )


def _state_from(s: SystemScenario, w: Beamformers, design: Design) -> ScaState:
    k = s.num_users
    blank = ScaState(w=w, alpha=0.0, beta=np.zeros(k), delta=np.zeros(k), tau=np.ones(k),
                     rho=np.zeros((k, k)), mu=np.zeros(k), varsigma=np.zeros(k))
    return update_slacks(s, blank, design)


def initialize(s: SystemScenario, design: Design = Design.MMEE) -> ScaState:
    """
    初始点：匹配滤波方向 + 逐用户最小功率

    第一阶段按 i = 1..K 依次求使 min_k SINR_k^(i) = eta_i 的功率（关于 p_i 线性，直接解出），
    同时抬高 p_i 以满足每个接收端的SIC功率顺序；前向一遍即为不动点，最多迭代50遍确认。
    第二阶段把所有松弛变量取到等号。
    """
    if not s.is_ordered:
        raise ScenarioError("用户未按信道强度排序，请先调用 order_users")
    norms = np.linalg.norm(s.channels, axis=1)
    if np.any(norms <= 0):
        raise InfeasibleScenario("存在零信道用户")
    directions = s.channels / norms[:, None]
    coupling = np.abs(s.channels.conj() @ directions.T) ** 2      # C[k, j] = |h_k^H u_j|^2
    k_users = s.num_users
    floor = POWER_FLOOR_RATIO * s.p_available
    p = np.zeros(k_users)
    for _ in range(MAX_INIT_PASSES):
        previous = p.copy()
        for i in range(k_users):
            demand = floor
            eta = float(s.sinr_thresholds[i])
            if eta > 0:
                for k in range(i + 1):
                    if coupling[k, i] <= 0:
                        raise InfeasibleScenario(f"用户{k}无法解码消息{i}（方向正交）")
                    interference = float(p[:i] @ coupling[k, :i])
                    demand = max(demand, eta * (interference + s.noise_vars[k]) / coupling[k, i])
            if i > 0:
                for r in range(k_users):
                    prior = p[i - 1] * coupling[r, i - 1]
                    if prior <= 0:
                        continue
                    if coupling[r, i] <= 0:
                        raise InfeasibleScenario(f"接收端{r}处无法满足SIC功率顺序")
                    demand = max(demand, prior / coupling[r, i])
            p[i] = demand * INIT_SAFETY
        if np.array_equal(p, previous):
            break
    required = float(p.sum())
    if required > s.p_available:
        raise InfeasibleScenario(f"初始化所需功率 {required:.6g} W 超过预算 {s.p_available:.6g} W", required)
    w = Beamformers(np.sqrt(p)[:, None] * directions)
    report = check_feasibility(s, w, 1e-8)
    if not report.ok:
        logger.warning(f"初始点可行性裕量异常: {report.margins}")
    return _state_from(s, w, design)


# ---------------------------------------------------------------------------
# 主循环
# ---------------------------------------------------------------------------

def _sca_loop(s: SystemScenario, state: ScaState, design: Design,
              build: Callable[[ScaState], ConicProgram], objective: Callable[[Beamformers], float],
              scale: Callable[[float], float], opts: ScaOptions, solver: ConeSolver,
              statuses: List[str], label: str) -> Tuple[ScaState, StopReason, int, int]:
    """返回 (最终状态, 停止原因, 子问题求解次数, 被接受的步数)"""
    current = objective(state.w)
    solves = accepted_steps = 0
    for n in range(opts.max_outer):
        program = build(state)
        if opts.dump_dir is not None:
            dump_program(program, Path(opts.dump_dir) / f'{label}_it{n:03d}.txt')
        result = solver.solve(program, opts.solver_tol, opts.solver_max_iters)
        solves += 1
        statuses.append(result.status.value)
        if not result.ok:
            raise SolverFailure(f"{label} 第{n}次子问题求解失败: {result.status.value}",
                                iteration=state.iter, status=result.status.value, partial=state)
        w_new = extract_beamformers(program, result.x, s).vectors
        threshold = opts.eps * scale(current)
        accepted = None
        for gamma in opts.damping:
            candidate = Beamformers(state.w.vectors + gamma * (w_new - state.w.vectors))
            candidate = align_phases(s, _project_power(s, candidate))
            if not check_feasibility(s, candidate, opts.feas_tol).ok:
                logger.debug(f"{label} it={n} gamma={gamma}: 候选点不可行")
                continue
            value = objective(candidate)
            if value >= current - threshold:
                accepted = (candidate, value, gamma)
                break
            logger.debug(f"{label} it={n} gamma={gamma}: 目标下降 {current - value:.3e}")
        if accepted is None:
            logger.debug(f"{label} 阻尼阶梯耗尽，保留上一迭代点（已接受 {accepted_steps} 步）")
            return state, StopReason.STALLED, solves, accepted_steps
        candidate, value, gamma = accepted
        accepted_steps += 1
        state = update_slacks(s, replace(state, w=candidate, iter=state.iter + 1), design)
        change = abs(value - current)
        logger.debug(f"{label} it={n} gamma={gamma} objective={value:.6g} change={change:.3e}")
        current = value
        # 阻尼步的变化量小不代表收敛
        if change < threshold and gamma == opts.damping[0]:
            return state, StopReason.TOLERANCE, solves, accepted_steps
    return state, StopReason.MAX_OUTER, solves, accepted_steps


def _tolerance_scale(design: Design) -> Callable[[float], float]:
    """PF 的对数和目标用绝对门限，MMEE 用相对门限"""
    if design == Design.PF:
        return lambda _: 1.0
    return lambda value: abs(value)


def _result(s: SystemScenario, design: Design, state: ScaState, solves: int, stop: StopReason,
            accepted_steps: int, statuses: List[str], start: float,
            lam: Optional[float] = None) -> DesignResult:
    return DesignResult(
        design=design,
        w=state.w,
        metrics=metrics(s, state.w),
        iterations=solves,
        converged=stop == StopReason.TOLERANCE or (stop == StopReason.STALLED and accepted_steps > 0),
        trace=list(state.objective_trace),
        subproblem_statuses=statuses,
        stop_reason=stop,
        dinkelbach_lambda=lam,
        solve_ms=(time.perf_counter() - start) * 1e3,
        accepted_steps=accepted_steps,
    )


def _run_dinkelbach(s: SystemScenario, state: ScaState, opts: ScaOptions, solver: ConeSolver,
                    statuses: List[str], start: float) -> DesignResult:
    """
    Dinkelbach 外层: 每轮以 lambda = GEE(w) 求 max R(w) - lambda P(w)

    每轮开始时 F = 0，因此只有内层真正移动过的轮次才能以 |F| 判收敛；
    内层一步都没被接受时 w 是不动点，报告 stalled。
    """
    lam = true_objective(s, state.w, Design.GEE_MAX)
    solves = total_accepted = 0
    stop = StopReason.MAX_OUTER
    for m in range(opts.max_dinkelbach):
        m_start = metrics(s, state.w, bandwidth_hz=1.0)
        rate_scale = max(m_start.sum_rate, 1e-12)

        def parametric(w: Beamformers, lam=lam) -> float:
            mm = metrics(s, w, bandwidth_hz=1.0)
            return mm.sum_rate - lam * (w.total_power / s.amp_efficiency + s.total_power_loss)

        state, inner_stop, inner, accepted = _sca_loop(
            s, state, Design.GEE_MAX,
            build=lambda st, lam=lam: build_dinkelbach_subproblem(s, st, lam, solver, opts.clamp_tau),
            objective=parametric, scale=lambda _: rate_scale,
            opts=opts, solver=solver, statuses=statuses, label=f'gee-max_d{m:02d}')
        solves += inner
        total_accepted += accepted
        residual = parametric(state.w)
        logger.debug(f"Dinkelbach 第{m}轮: lambda={lam:.6g} F={residual:.3e} 内层{inner_stop.value} 接受{accepted}步")
        if accepted == 0:
            stop = StopReason.STALLED
            break
        if abs(residual) < opts.eps * rate_scale:
            stop = StopReason.TOLERANCE
            break
        lam = true_objective(s, state.w, Design.GEE_MAX)
    return _result(s, Design.GEE_MAX, state, solves, stop, total_accepted, statuses, start, lam)


def run_design(s: SystemScenario, design, opts: Optional[ScaOptions] = None) -> DesignResult:
    """
    运行一种波束成形设计（MMEE、PF 或 GEE-Max 基线）

    场景不可行时返回 stop_reason=infeasible 的结果；子问题求解失败时抛出 SolverFailure，
    其 partial 字段保留失败前最后一个被接受的迭代点。
    """
    opts = opts or ScaOptions()
    design = Design(design)
    if not s.is_ordered:
        raise ScenarioError("用户未按信道强度排序，请先调用 order_users")
    solver = get_solver(opts.solver_name, opts.exp_cone)
    start = time.perf_counter()
    statuses: List[str] = []
    try:
        state = initialize(s, design)
    except InfeasibleScenario as e:
        logger.warning(f"{design.value} 场景不可行: {e}")
        w = Beamformers.zeros(s.num_users, s.num_antennas)
        result = DesignResult(design=design, w=w, metrics=metrics(s, w), iterations=0, converged=False,
                              trace=[], subproblem_statuses=[], stop_reason=StopReason.INFEASIBLE,
                              solve_ms=(time.perf_counter() - start) * 1e3, message=str(e))
        return result

    logger.info(f"开始 {design.value} 设计: K={s.num_users}, N={s.num_antennas}, P_ava={s.p_available:.4g} W")
    try:
        if design == Design.GEE_MAX:
            result = _run_dinkelbach(s, state, opts, solver, statuses, start)
        else:
            builder = build_mmee_subproblem if design == Design.MMEE else build_pf_subproblem
            state, stop, solves, accepted = _sca_loop(
                s, state, design,
                build=lambda st: builder(s, st, solver, opts.clamp_tau),
                objective=lambda w: true_objective(s, w, design),
                scale=_tolerance_scale(design),
                opts=opts, solver=solver, statuses=statuses, label=f'{design.value}_d00')
            result = _result(s, design, state, solves, stop, accepted, statuses, start)
    except SolverFailure as e:
        if isinstance(e.partial, ScaState):
            e.partial = _result(s, design, e.partial, len(statuses), StopReason.MAX_OUTER, 0, statuses, start)
            e.partial.converged = False
        logger.error(f"{design.value} 设计中止: {e}")
        raise
    logger.info(f"{design.value} 设计结束: {result.stop_reason.value}, 迭代 {result.iterations} 次, "
                f"最小能效 {result.metrics.min_ee:.6g}, GEE {result.metrics.gee:.6g}")
    return result
