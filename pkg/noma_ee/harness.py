"""
蒙特卡洛仿真框架 - 成对播种的 TX-SNR / 距离扫描、CSV 结果与绘图数据
"""
import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config import SweepConfig
from .errors import EmptySelection, InfeasibleScenario, ScenarioError, SolverFailure
from .model import (Beamformers, ChannelModelConfig, SystemScenario, generate_channels, metrics,
                    tx_snr_to_power)
from .oracle import GridSpec, Objective, OracleResult, grid_optimize
from .sca import Design, DesignResult, ScaOptions, initialize, run_design, true_objective

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['design', 'trial', 'seed', 'tx_snr_db', 'd3_m', 'user', 'rate_bpshz', 'power_w',
               'ee_bits_per_joule', 'gee', 'iterations', 'status', 'solve_ms']
SORT_KEYS = ['design', 'trial', 'tx_snr_db', 'd3_m', 'user']
FAILED_STATUSES = {'infeasible', 'solver_failure', 'error'}
MASK64 = (1 << 64) - 1

DESIGN_OBJECTIVES = {
    Design.MMEE: Objective.MIN_EE,
    Design.PF: Objective.SUM_LOG_EE,
    Design.GEE_MAX: Objective.GEE,
}


class PlotMode(str, Enum):
    WEAKEST_USER_EE = 'WeakestUserEE'
    GEE = 'GEE'
    DISTANCE_SWEEP = 'DistanceSweep'


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, trial: int, attempt: int = 0) -> int:
    """同一试验的所有设计、所有SNR点共用一个种子；attempt > 0 为不可行时的重采样"""
    seed = (base_seed ^ splitmix64(trial)) & MASK64
    if attempt:
        seed = splitmix64(seed ^ splitmix64((attempt << 32) | 0x5EED))
    return seed


def parse_snr_spec(spec: str) -> List[float]:
    """解析 "a:b:step"（含端点）或逗号分隔列表"""
    text = spec.strip()
    if not text:
        raise ValueError("TX-SNR 列表为空")
    if ':' in text:
        parts = text.split(':')
        if len(parts) != 3:
            raise ValueError(f"TX-SNR 区间格式应为 a:b:step: {spec}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"TX-SNR 区间非法: {spec}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + n * step, 12) for n in range(count)]
    return [float(p) for p in text.split(',') if p.strip()]


def channel_hash(channels: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(channels).tobytes()).hexdigest()[:12]


def build_scenario(cfg: SweepConfig, seed: int, tx_snr_db: float,
                   d3: Optional[float] = None) -> Tuple[SystemScenario, np.ndarray]:
    """
    按模板和种子生成一个已排序场景

    d3 替换最后一个用户的距离；小尺度衰落只由种子决定，因此同一种子下不同 d3 的信道成对。
    """
    template = cfg.scenario
    distances = list(template.distances_m)
    if d3 is not None:
        distances[-1] = d3
    channel_cfg = ChannelModelConfig(distances_m=distances, path_loss_exp=template.path_loss_exp,
                                     rng_seed=seed)
    raw = generate_channels(channel_cfg, template.num_antennas)
    k = template.num_users
    scenario = SystemScenario(
        channels=raw,
        noise_vars=np.full(k, template.noise_var),
        p_available=tx_snr_to_power(tx_snr_db, template.noise_var),
        amp_efficiency=template.amp_efficiency,
        power_loss_per_user=np.full(k, template.power_loss_w),
        bandwidth_hz=template.bandwidth_hz,
        sinr_thresholds=np.full(k, template.sinr_threshold),
    )
    ordered, _ = scenario.ordered()
    return ordered, raw


def _feasible_scenario(cfg: SweepConfig, trial: int, tx_snr_db: float,
                       d3: Optional[float]) -> Tuple[Optional[SystemScenario], int]:
    seed = trial_seed(cfg.base_seed, trial)
    for attempt in range(cfg.max_resample + 1):
        seed = trial_seed(cfg.base_seed, trial, attempt)
        scenario, _ = build_scenario(cfg, seed, tx_snr_db, d3)
        try:
            initialize(scenario)
            return scenario, seed
        except InfeasibleScenario as e:
            logger.warning(f"试验{trial} SNR={tx_snr_db}dB 第{attempt}次抽样不可行，重新抽样: {e}")
    return None, seed


def _rows(design: Design, trial: int, seed: int, tx_snr_db: float, d3: float, s: SystemScenario,
          w: Optional[Beamformers], iterations: int, status: str, solve_ms: float) -> List[dict]:
    base = {'design': design.value, 'trial': trial, 'seed': seed, 'tx_snr_db': tx_snr_db, 'd3_m': d3,
            'iterations': iterations, 'status': status, 'solve_ms': round(solve_ms, 3)}
    k = s.num_users
    if w is None:
        nan = float('nan')
        return [dict(base, user=u, rate_bpshz=nan, power_w=nan, ee_bits_per_joule=nan, gee=nan)
                for u in range(k + 1)]
    m = metrics(s, w)
    per_hz = m.per_user_rate / s.bandwidth_hz
    rows = [dict(base, user=0, rate_bpshz=float(per_hz.sum()), power_w=float(m.per_user_power.sum()),
                 ee_bits_per_joule=m.min_ee, gee=m.gee)]
    for i in range(k):
        rows.append(dict(base, user=i + 1, rate_bpshz=float(per_hz[i]), power_w=float(m.per_user_power[i]),
                         ee_bits_per_joule=float(m.per_user_ee[i]), gee=m.gee))
    return rows


@dataclass(frozen=True)
class SweepTask:
    cfg: SweepConfig
    trial: int
    tx_snr_db: float
    d3: Optional[float]


def _options(cfg: SweepConfig, task: SweepTask) -> ScaOptions:
    dump_dir = None
    if cfg.dump_subproblems:
        tag = f"t{task.trial:04d}_snr{task.tx_snr_db:g}" + ('' if task.d3 is None else f"_d{task.d3:g}")
        dump_dir = Path(cfg.output_dir) / 'subproblems' / tag
    return ScaOptions(eps=cfg.eps, max_outer=cfg.max_outer, dump_dir=dump_dir)


def run_task(task: SweepTask) -> List[dict]:
    """一个 (试验, SNR, d3) 组合：所有设计共用同一信道"""
    cfg = task.cfg
    d3 = task.d3 if task.d3 is not None else float(cfg.scenario.distances_m[-1])
    scenario, seed = _feasible_scenario(cfg, task.trial, task.tx_snr_db, task.d3)
    designs = [Design(name) for name in cfg.designs]
    rows: List[dict] = []
    if scenario is None:
        logger.error(f"试验{task.trial} SNR={task.tx_snr_db}dB 重采样 {cfg.max_resample} 次后仍不可行")
        template, _ = build_scenario(cfg, seed, task.tx_snr_db, task.d3)
        for design in designs:
            rows.extend(_rows(design, task.trial, seed, task.tx_snr_db, d3, template, None, 0, 'infeasible', 0.0))
        return rows

    digest = channel_hash(scenario.channels)
    opts = _options(cfg, task)
    for design in designs:
        logger.debug(f"试验{task.trial} SNR={task.tx_snr_db}dB d3={d3} {design.value} 信道哈希 {digest}")
        try:
            result = run_design(scenario, design, opts)
            w = result.w if result.feasible else None
            rows.extend(_rows(design, task.trial, seed, task.tx_snr_db, d3, scenario, w,
                              result.iterations, result.stop_reason.value, result.solve_ms))
        except SolverFailure as e:
            logger.error(f"试验{task.trial} {design.value} 求解失败（第{e.iteration}次迭代）: {e}")
            w = e.partial.w if e.partial is not None else None
            rows.extend(_rows(design, task.trial, seed, task.tx_snr_db, d3, scenario, w,
                              e.iteration, 'solver_failure', 0.0))
        except Exception as e:
            logger.error(f"试验{task.trial} {design.value} 运行失败: {e}")
            rows.extend(_rows(design, task.trial, seed, task.tx_snr_db, d3, scenario, None, 0, 'error', 0.0))
    return rows


def _tasks(cfg: SweepConfig) -> List[SweepTask]:
    d3_values: Sequence[Optional[float]] = cfg.d3_sweep_m if cfg.d3_sweep_m else [None]
    return [SweepTask(cfg, t, snr, d3) for t in range(cfg.trials) for snr in cfg.tx_snr_db for d3 in d3_values]


def _normalize(rows: List[dict]) -> pd.DataFrame:
    table = pd.DataFrame(rows, columns=CSV_COLUMNS)
    return table.sort_values(SORT_KEYS, kind='mergesort').reset_index(drop=True)


def run_sweep(cfg: SweepConfig, csv_name: str = 'sweep.csv') -> pd.DataFrame:
    """
    运行蒙特卡洛扫描并写出 CSV

    行先增量追加到 <csv>.partial，全部完成后排序重写，结果与并行度无关。
    数值失败只记录在 status 列，IO 错误直接抛出。
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / csv_name
    partial = csv_path.with_suffix(csv_path.suffix + '.partial')
    tasks = _tasks(cfg)
    logger.info(f"开始扫描: {len(tasks)} 个任务, 设计 {list(cfg.designs)}, 并行度 {cfg.parallelism}")

    rows: List[dict] = []
    finished = [0]
    pd.DataFrame(columns=CSV_COLUMNS).to_csv(partial, index=False)

    def collect(task_rows: List[dict]):
        rows.extend(task_rows)
        pd.DataFrame(task_rows, columns=CSV_COLUMNS).to_csv(partial, mode='a', header=False, index=False)
        finished[0] += 1
        done = finished[0]
        if done % 10 == 0 or done == len(tasks):
            logger.info(f"扫描进度: {done}/{len(tasks)}")

    if cfg.parallelism > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            futures = [pool.submit(run_task, task) for task in tasks]
            for future in as_completed(futures):
                collect(future.result())
    else:
        for task in tasks:
            collect(run_task(task))

    table = _normalize(rows)
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# noma_ee sweep generated {datetime.now().isoformat(timespec='seconds')}\n")
        table.to_csv(f, index=False, float_format='%.12g')
    partial.unlink(missing_ok=True)
    logger.info(f"扫描完成: {len(table)} 行写入 {csv_path}")
    return table


def read_sweep_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


# ---------------------------------------------------------------------------
# 绘图数据
# ---------------------------------------------------------------------------

def _sem(values: pd.Series) -> float:
    return float(stats.sem(values)) if len(values) > 1 else 0.0


def emit_plot_data(table: pd.DataFrame, mode, out_dir, designs: Optional[Sequence[str]] = None) -> List[Path]:
    """
    每个设计写一个空白分隔文件: x 均值 标准误

    x 为 TX-SNR（WeakestUserEE / GEE）或 d3（DistanceSweep）；只统计汇总行（user = 0）
    中未失败的试验。
    """
    mode = PlotMode(mode)
    if table.empty:
        raise EmptySelection("结果表为空")
    summary = table[(table['user'] == 0) & (~table['status'].isin(FAILED_STATUSES))]
    wanted = list(designs) if designs is not None else sorted(table['design'].unique())
    x_col = 'd3_m' if mode == PlotMode.DISTANCE_SWEEP else 'tx_snr_db'
    y_col = 'gee' if mode == PlotMode.GEE else 'ee_bits_per_joule'
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = []
    for design in wanted:
        subset = summary[summary['design'] == design]
        if subset.empty:
            raise EmptySelection(f"{mode.value} 模式下设计 {design} 没有有效数据")
        grouped = subset.groupby(x_col)[y_col].agg(['mean', _sem]).sort_index()
        path = out_dir / f"{mode.value}_{design}.dat"
        lines = [f"# {x_col} mean_{y_col} sem_{y_col}"]
        lines += [f"{x:.10g} {row['mean']:.10g} {row['_sem']:.10g}" for x, row in grouped.iterrows()]
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        paths.append(path)
    logger.info(f"绘图数据已写出: {[p.name for p in paths]}")
    return paths


# ---------------------------------------------------------------------------
# 单场景运行与网格搜索对比
# ---------------------------------------------------------------------------

def run_scenario(cfg: SweepConfig, trial: int = 0, tx_snr_db: Optional[float] = None,
                 opts: Optional[ScaOptions] = None) -> Tuple[SystemScenario, Dict[str, DesignResult]]:
    snr = cfg.tx_snr_db[0] if tx_snr_db is None else tx_snr_db
    scenario, _ = build_scenario(cfg, trial_seed(cfg.base_seed, trial), snr)
    opts = opts or ScaOptions(eps=cfg.eps, max_outer=cfg.max_outer)
    results = {name: run_design(scenario, Design(name), opts) for name in cfg.designs}
    return scenario, results


@dataclass(frozen=True)
class OracleComparison:
    design: Design
    oracle: OracleResult
    design_value: float

    @property
    def gap(self) -> float:
        return self.oracle.value - self.design_value

    @property
    def accepted(self) -> bool:
        return self.design_value >= self.oracle.value - self.oracle.tolerance()


def oracle_scenario(cfg: SweepConfig, trial: int = 0, tx_snr_db: Optional[float] = None) -> SystemScenario:
    """N=1 直接使用抽样信道；N=2 取信道实部"""
    n = cfg.scenario.num_antennas
    if n not in (1, 2):
        raise ScenarioError(f"网格搜索只支持 N=1 或 N=2，当前 N={n}")
    snr = cfg.tx_snr_db[0] if tx_snr_db is None else tx_snr_db
    scenario, _ = build_scenario(cfg, trial_seed(cfg.base_seed, trial), snr)
    if n == 2:
        real = SystemScenario(
            channels=scenario.channels.real, noise_vars=scenario.noise_vars,
            p_available=scenario.p_available, amp_efficiency=scenario.amp_efficiency,
            power_loss_per_user=scenario.power_loss_per_user, bandwidth_hz=scenario.bandwidth_hz,
            sinr_thresholds=scenario.sinr_thresholds)
        scenario, _ = real.ordered()
    return scenario


def compare_with_oracle(s: SystemScenario, design, grid: Optional[GridSpec] = None,
                        opts: Optional[ScaOptions] = None) -> OracleComparison:
    design = Design(design)
    oracle = grid_optimize(s, DESIGN_OBJECTIVES[design], grid)
    result = run_design(s, design, opts)
    value = true_objective(s, result.w, design)
    comparison = OracleComparison(design=design, oracle=oracle, design_value=value)
    logger.info(f"{design.value}: SCA={value:.6g}, 网格最优={oracle.value:.6g}, 差距={comparison.gap:.3e}")
    return comparison
